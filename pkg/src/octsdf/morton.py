"""Morton (Z-order) keys for non-negative integer grid indices.

Bit ``j`` of ``ix`` lands on bit ``3j`` of the code, ``iy`` on ``3j+1`` and
``iz`` on ``3j+2``. With 21 bits per axis a key fits in 63 bits.
"""
import numpy as np

from . import kernels

BITS_PER_AXIS = 21


def _check_range(name, v, bits):
    v = np.asarray(v)
    if v.size and (v.min() < 0 or v.max() >= (1 << bits)):
        bad = v.min() if v.min() < 0 else v.max()
        raise ValueError(f"{name} index {int(bad)} outside [0, 2**{bits})")


def morton_encode(ix, iy, iz, bits=BITS_PER_AXIS):
    """Interleave three index arrays (or scalars) into uint64 codes."""
    if not 1 <= bits <= BITS_PER_AXIS:
        raise ValueError(f"bits per axis must be in [1, {BITS_PER_AXIS}], got {bits}")
    for name, v in (("x", ix), ("y", iy), ("z", iz)):
        _check_range(name, v, bits)
    code = kernels.morton_encode(ix, iy, iz)
    if np.ndim(code) == 0:
        return np.uint64(code)
    return code


def morton_decode(code):
    """Inverse of :func:`morton_encode`; returns ``(ix, iy, iz)`` as int64."""
    ix, iy, iz = kernels.morton_decode(np.asarray(code, dtype=np.uint64))
    if np.ndim(code) == 0:
        return int(ix), int(iy), int(iz)
    return ix, iy, iz
