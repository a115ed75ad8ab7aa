"""Vectorised numpy fallbacks for the kernels in :mod:`octsdf.kernels`."""
import numpy as np

EMPTY_KEY = np.uint64(0xFFFFFFFFFFFFFFFF)

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)


def _split3(v):
    # spread the low 21 bits of v so that bit j lands on bit 3j
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def _compact3(v):
    v = v & np.uint64(0x1249249249249249)
    v = (v ^ (v >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    v = (v ^ (v >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    v = (v ^ (v >> np.uint64(8))) & np.uint64(0x1F0000FF0000FF)
    v = (v ^ (v >> np.uint64(16))) & np.uint64(0x1F00000000FFFF)
    v = (v ^ (v >> np.uint64(32))) & np.uint64(0x1FFFFF)
    return v


def morton_encode(ix, iy, iz):
    ix = np.asarray(ix, dtype=np.int64)
    iy = np.asarray(iy, dtype=np.int64)
    iz = np.asarray(iz, dtype=np.int64)
    return _split3(ix) | (_split3(iy) << np.uint64(1)) | (_split3(iz) << np.uint64(2))


def morton_decode(code):
    code = np.asarray(code, dtype=np.uint64)
    ix = _compact3(code).astype(np.int64)
    iy = _compact3(code >> np.uint64(1)).astype(np.int64)
    iz = _compact3(code >> np.uint64(2)).astype(np.int64)
    return ix, iy, iz


def hash_slots(codes, mask):
    """splitmix64 finaliser reduced to a power-of-two table."""
    z = np.asarray(codes, dtype=np.uint64) + _M1
    z = (z ^ (z >> np.uint64(30))) * _M2
    z = (z ^ (z >> np.uint64(27))) * _M3
    z = z ^ (z >> np.uint64(31))
    return (z & np.uint64(mask)).astype(np.int64)


def hash_lookup(keys, vals, queries):
    """Return the value stored for each query code, or -1 when absent."""
    queries = np.ascontiguousarray(queries, dtype=np.uint64).ravel()
    mask = keys.shape[0] - 1
    out = np.full(queries.shape[0], -1, dtype=np.int64)
    pending = np.arange(queries.shape[0])
    pos = hash_slots(queries, mask)
    while pending.size:
        k = keys[pos]
        q = queries[pending]
        hit = k == q
        out[pending[hit]] = vals[pos[hit]]
        more = ~hit & (k != EMPTY_KEY)
        pending = pending[more]
        pos = (pos[more] + 1) & mask
    return out


def hash_insert(keys, vals, codes, next_slot):
    """Insert ``codes`` (duplicates allowed), assigning new values from ``next_slot``.

    New values are handed out in order of first appearance in ``codes``.
    The table must have room for every new key. Returns ``(slots, n_new)``.
    """
    codes = np.ascontiguousarray(codes, dtype=np.uint64).ravel()
    if codes.size == 0:
        return np.empty(0, dtype=np.int64), 0
    uniq, first, inverse = np.unique(codes, return_index=True, return_inverse=True)
    found = hash_lookup(keys, vals, uniq)
    missing = np.flatnonzero(found < 0)
    # first-appearance order
    missing = missing[np.argsort(first[missing], kind="stable")]
    n_new = missing.size
    found[missing] = next_slot + np.arange(n_new, dtype=np.int64)

    mask = keys.shape[0] - 1
    pend_keys = uniq[missing]
    pend_vals = found[missing]
    pos = hash_slots(pend_keys, mask)
    while pend_keys.size:
        free = keys[pos] == EMPTY_KEY
        cand = np.flatnonzero(free)
        # one winner per empty bucket, earliest pending key first
        _, win = np.unique(pos[cand], return_index=True)
        win = cand[win]
        keys[pos[win]] = pend_keys[win]
        vals[pos[win]] = pend_vals[win]
        keep = np.ones(pend_keys.size, dtype=bool)
        keep[win] = False
        pend_keys = pend_keys[keep]
        pend_vals = pend_vals[keep]
        pos = (pos[keep] + 1) & mask
    return found[inverse.ravel()], n_new


def scatter_add_rows(out, idx, rows):
    """``out[idx[i]] += rows[i]`` with repeated indices accumulated."""
    idx = np.asarray(idx, dtype=np.int64)
    n = out.shape[0]
    for j in range(out.shape[1]):
        out[:, j] += np.bincount(idx, weights=rows[:, j], minlength=n)[:n]
    return out


def scatter_weighted(out, mark, idx, weights, rows, absolute=False):
    """``out[idx[r, k]] += weights[r, k] * rows[r]`` for every ``idx >= 0``; marks touched slots.

    With ``absolute`` the magnitude of each product is accumulated instead.
    """
    idx = np.asarray(idx, dtype=np.int64)
    sel = idx >= 0
    r, k = np.nonzero(sel)
    vals = weights[r, k][:, None] * rows[r]
    if absolute:
        vals = np.abs(vals)
    slots = idx[r, k]
    mark[slots] = True
    scatter_add_rows(out, slots, vals)
    return out
