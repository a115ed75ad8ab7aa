"""Hot inner loops with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``OCTSDF_DISABLE_NUMBA`` is not
set to a truthy value. Both paths expose the same functions and produce
identical integer results; floating-point reductions (``scatter_add_rows``)
agree to rounding.
"""
import os

from . import _numpy

EMPTY_KEY = _numpy.EMPTY_KEY


def _numba_requested():
    flag = os.environ.get("OCTSDF_DISABLE_NUMBA", "").strip().lower()
    return flag not in ("1", "true", "yes", "on")


BACKEND = "numpy"
_impl = _numpy
if _numba_requested():
    try:
        from . import _numba

        _impl = _numba
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba missing
        pass


def get_backend(name=None):
    """Return the kernel module for ``name`` ("numba" or "numpy"), default active."""
    if name is None:
        return _impl
    if name == "numpy":
        return _numpy
    if name == "numba":
        from . import _numba

        return _numba
    raise ValueError(f"unknown kernel backend {name!r}")


morton_encode = _impl.morton_encode
morton_decode = _impl.morton_decode
hash_slots = _impl.hash_slots
hash_lookup = _impl.hash_lookup
hash_insert = _impl.hash_insert
scatter_add_rows = _impl.scatter_add_rows
scatter_weighted = _impl.scatter_weighted
