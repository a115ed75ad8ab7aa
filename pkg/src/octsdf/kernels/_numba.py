"""numba-compiled kernels; same contracts as :mod:`octsdf.kernels._numpy`."""
import numpy as np
from numba import njit

EMPTY_KEY = np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(cache=True)
def _split3(v):
    v = np.uint64(v) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


@njit(cache=True)
def _compact3(v):
    v = v & np.uint64(0x1249249249249249)
    v = (v ^ (v >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    v = (v ^ (v >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    v = (v ^ (v >> np.uint64(8))) & np.uint64(0x1F0000FF0000FF)
    v = (v ^ (v >> np.uint64(16))) & np.uint64(0x1F00000000FFFF)
    v = (v ^ (v >> np.uint64(32))) & np.uint64(0x1FFFFF)
    return v


@njit(cache=True)
def _encode_flat(ix, iy, iz, out):
    for i in range(out.shape[0]):
        out[i] = _split3(ix[i]) | (_split3(iy[i]) << np.uint64(1)) | (_split3(iz[i]) << np.uint64(2))


@njit(cache=True)
def _decode_flat(code, ix, iy, iz):
    for i in range(code.shape[0]):
        c = code[i]
        ix[i] = np.int64(_compact3(c))
        iy[i] = np.int64(_compact3(c >> np.uint64(1)))
        iz[i] = np.int64(_compact3(c >> np.uint64(2)))


def morton_encode(ix, iy, iz):
    ix, iy, iz = np.broadcast_arrays(
        np.asarray(ix, dtype=np.int64), np.asarray(iy, dtype=np.int64), np.asarray(iz, dtype=np.int64)
    )
    shape = ix.shape
    out = np.empty(ix.size, dtype=np.uint64)
    _encode_flat(np.ascontiguousarray(ix).ravel(), np.ascontiguousarray(iy).ravel(),
                 np.ascontiguousarray(iz).ravel(), out)
    return out.reshape(shape)


def morton_decode(code):
    code = np.asarray(code, dtype=np.uint64)
    shape = code.shape
    flat = np.ascontiguousarray(code).ravel()
    ix = np.empty(flat.size, dtype=np.int64)
    iy = np.empty(flat.size, dtype=np.int64)
    iz = np.empty(flat.size, dtype=np.int64)
    _decode_flat(flat, ix, iy, iz)
    return ix.reshape(shape), iy.reshape(shape), iz.reshape(shape)


@njit(cache=True, inline="always")
def _mix(x):
    z = x + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _hash_slots(codes, mask, out):
    m = np.uint64(mask)
    for i in range(codes.shape[0]):
        out[i] = np.int64(_mix(codes[i]) & m)


def hash_slots(codes, mask):
    codes = np.ascontiguousarray(codes, dtype=np.uint64)
    out = np.empty(codes.size, dtype=np.int64)
    _hash_slots(codes.ravel(), mask, out)
    return out.reshape(codes.shape)


@njit(cache=True)
def _lookup(keys, vals, queries, out):
    mask = np.uint64(keys.shape[0] - 1)
    empty = np.uint64(0xFFFFFFFFFFFFFFFF)
    for i in range(queries.shape[0]):
        q = queries[i]
        p = _mix(q) & mask
        out[i] = -1
        while True:
            k = keys[p]
            if k == q:
                out[i] = vals[p]
                break
            if k == empty:
                break
            p = (p + np.uint64(1)) & mask


def hash_lookup(keys, vals, queries):
    queries = np.ascontiguousarray(queries, dtype=np.uint64).ravel()
    out = np.empty(queries.shape[0], dtype=np.int64)
    _lookup(keys, vals, queries, out)
    return out


@njit(cache=True)
def _insert(keys, vals, codes, next_slot, out):
    mask = np.uint64(keys.shape[0] - 1)
    empty = np.uint64(0xFFFFFFFFFFFFFFFF)
    n_new = 0
    for i in range(codes.shape[0]):
        q = codes[i]
        p = _mix(q) & mask
        while True:
            k = keys[p]
            if k == q:
                out[i] = vals[p]
                break
            if k == empty:
                keys[p] = q
                vals[p] = next_slot + n_new
                out[i] = next_slot + n_new
                n_new += 1
                break
            p = (p + np.uint64(1)) & mask
    return n_new


def hash_insert(keys, vals, codes, next_slot):
    codes = np.ascontiguousarray(codes, dtype=np.uint64).ravel()
    out = np.empty(codes.shape[0], dtype=np.int64)
    n_new = _insert(keys, vals, codes, np.int64(next_slot), out)
    return out, int(n_new)


@njit(cache=True)
def _scatter(out, idx, rows):
    for i in range(idx.shape[0]):
        r = idx[i]
        for j in range(rows.shape[1]):
            out[r, j] += rows[i, j]


def scatter_add_rows(out, idx, rows):
    _scatter(out, np.ascontiguousarray(idx, dtype=np.int64), np.ascontiguousarray(rows, dtype=np.float64))
    return out


@njit(cache=True)
def _scatter_weighted(out, mark, idx, weights, rows, absolute):
    for r in range(idx.shape[0]):
        for k in range(idx.shape[1]):
            s = idx[r, k]
            if s < 0:
                continue
            mark[s] = True
            w = weights[r, k]
            for j in range(rows.shape[1]):
                v = w * rows[r, j]
                if absolute:
                    v = abs(v)
                out[s, j] += v


def scatter_weighted(out, mark, idx, weights, rows, absolute=False):
    _scatter_weighted(out, mark, np.ascontiguousarray(idx, dtype=np.int64),
                      np.ascontiguousarray(weights, dtype=np.float64),
                      np.ascontiguousarray(rows, dtype=np.float64), absolute)
    return out
