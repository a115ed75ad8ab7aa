"""Sparse multi-level feature grid keyed by Morton codes.

Level ``h`` has nodes of edge ``leaf_size * 2**h``. Every allocated node owns
learnable feature vectors at its eight corners; corners shared between nodes of
one level share a slot. All per-parameter arrays (features, anchors,
importance, optimizer moments) are flat ``(n_slots, L)`` arrays indexed by slot.
"""
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels
from .hashtable import HashTable
from .morton import BITS_PER_AXIS

FIELD_MAGIC = b"OCTSDFFD"
FIELD_VERSION = 1

# corner k sits at offset (k & 1, k >> 1 & 1, k >> 2 & 1)
CORNER_OFFSETS = np.array([[k & 1, (k >> 1) & 1, (k >> 2) & 1] for k in range(8)], dtype=np.int64)

INIT_SCALE = 1e-2


class FieldFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FieldLayout:
    leaf_size: float = 0.1
    level_count: int = 4
    feature_len: int = 8
    world_offset: tuple = (1 << 20, 1 << 20, 1 << 20)
    bits_per_axis: int = BITS_PER_AXIS

    def __post_init__(self):
        if not self.leaf_size > 0:
            raise ValueError(f"leaf_size must be positive, got {self.leaf_size}")
        if self.level_count < 1:
            raise ValueError(f"level_count must be >= 1, got {self.level_count}")
        if self.feature_len < 1:
            raise ValueError(f"feature_len must be >= 1, got {self.feature_len}")
        if not 1 <= self.bits_per_axis <= BITS_PER_AXIS:
            raise ValueError(f"bits_per_axis must be in [1, {BITS_PER_AXIS}]")
        object.__setattr__(self, "world_offset", tuple(int(v) for v in self.world_offset))

    @classmethod
    def centered(cls, origin, leaf_size=0.1, level_count=4, feature_len=8, bits_per_axis=BITS_PER_AXIS):
        """Layout whose representable cube is centred on ``origin``.

        The offset is a multiple of the coarsest node size so world (0, 0, 0)-style
        coarse boundaries stay aligned across levels.
        """
        coarse = 1 << (level_count - 1)
        o = np.floor(np.asarray(origin, dtype=np.float64) / (leaf_size * coarse)).astype(np.int64)
        half = 1 << (bits_per_axis - 1)
        offset = tuple(int(half - coarse * v) for v in o)
        return cls(leaf_size, level_count, feature_len, offset, bits_per_axis)

    def node_size(self, level):
        return self.leaf_size * (1 << level)


@dataclass
class QueryResult:
    summed_feature: np.ndarray
    contributions: list = dc_field(default_factory=list)  # (slot, weight, level)


class FeatureField:
    """Growable store of corner features, anchors and importance weights."""

    def __init__(self, layout, seed=0, capacity=1024):
        self.layout = layout
        self.rng = np.random.default_rng(seed)
        self.tables = [HashTable(capacity) for _ in range(layout.level_count)]
        self.n_slots = 0
        L = layout.feature_len
        self._features = np.zeros((capacity, L))
        self._anchors = np.zeros((capacity, L))
        self._omega = np.zeros((capacity, L))
        self._has_anchor = np.zeros(capacity, dtype=bool)
        self._adam_m = np.zeros((capacity, L))
        self._adam_v = np.zeros((capacity, L))
        self.opt_step = 0

    # views trimmed to the live slot count
    @property
    def features(self):
        return self._features[: self.n_slots]

    @property
    def anchors(self):
        return self._anchors[: self.n_slots]

    @property
    def omega(self):
        return self._omega[: self.n_slots]

    @property
    def has_anchor(self):
        return self._has_anchor[: self.n_slots]

    @property
    def adam_m(self):
        return self._adam_m[: self.n_slots]

    @property
    def adam_v(self):
        return self._adam_v[: self.n_slots]

    def _reserve(self, n):
        cap = self._features.shape[0]
        if n <= cap:
            return
        while cap < n:
            cap *= 2
        for name in ("_features", "_anchors", "_omega", "_adam_m", "_adam_v"):
            old = getattr(self, name)
            new = np.zeros((cap, old.shape[1]))
            new[: self.n_slots] = old[: self.n_slots]
            setattr(self, name, new)
        ha = np.zeros(cap, dtype=bool)
        ha[: self.n_slots] = self._has_anchor[: self.n_slots]
        self._has_anchor = ha

    # -- indexing -----------------------------------------------------------

    def grid_index(self, points):
        """Level-0 cell index (with offset) of each point, shape ``(N, 3)`` int64."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.floor(p / self.layout.leaf_size).astype(np.int64) + np.asarray(self.layout.world_offset)

    def _in_range(self, idx):
        # corners reach idx + 1 at level 0
        hi = (1 << self.layout.bits_per_axis) - 1
        return np.all((idx >= 0) & (idx < hi), axis=-1)

    def corner_codes(self, cells):
        """Morton codes of the 8 corners of each cell, shape ``(N, 8)``."""
        c = cells[:, None, :] + CORNER_OFFSETS[None, :, :]
        return kernels.morton_encode(c[..., 0], c[..., 1], c[..., 2])

    def allocate_for_points(self, points, rng=None):
        """Make sure every level's containing node of every point has its 8 corner slots.

        Returns the number of new slots. Existing slots are left untouched.
        """
        rng = self.rng if rng is None else rng
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("cannot allocate for non-finite points")
        if pts.shape[0] == 0:
            return 0
        idx = self.grid_index(pts)
        if not np.all(self._in_range(idx)):
            bad = pts[~self._in_range(idx)][0]
            raise ValueError(f"point {bad.tolist()} outside the representable coordinate range")
        total = 0
        for level, table in enumerate(self.tables):
            cells = np.unique(idx >> level, axis=0)
            codes = self.corner_codes(cells).ravel()
            start = self.n_slots
            self._reserve(start + codes.size)
            _, n_new = table.insert(codes, start)
            if n_new:
                L = self.layout.feature_len
                self._features[start : start + n_new] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_new, L))
                self.n_slots += n_new
                total += n_new
        return total

    # -- querying -----------------------------------------------------------

    def lookup_corners(self, points):
        """Per-level corner slots and trilinear weights.

        Returns ``slots`` and ``weights`` of shape ``(N, H, 8)``; levels whose
        node is not fully allocated have slots -1 and weights 0.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n, H = pts.shape[0], self.layout.level_count
        slots = np.full((n, H, 8), -1, dtype=np.int64)
        weights = np.zeros((n, H, 8))
        if n == 0:
            return slots, weights
        u = pts / self.layout.leaf_size
        idx = np.floor(u).astype(np.int64) + np.asarray(self.layout.world_offset)
        ok = self._in_range(idx) & np.all(np.isfinite(pts), axis=1)
        if not ok.all():
            idx = np.where(ok[:, None], idx, 0)
        off = np.asarray(self.layout.world_offset)
        for level, table in enumerate(self.tables):
            cells = idx >> level
            s = table.lookup(self.corner_codes(cells))
            full = ok & np.all(s >= 0, axis=1)
            base = (cells << level) - off
            f = (u - base) / float(1 << level)
            fx, fy, fz = f[:, 0:1], f[:, 1:2], f[:, 2:3]
            dx, dy, dz = CORNER_OFFSETS[:, 0], CORNER_OFFSETS[:, 1], CORNER_OFFSETS[:, 2]
            w = (
                np.where(dx, fx, 1.0 - fx)
                * np.where(dy, fy, 1.0 - fy)
                * np.where(dz, fz, 1.0 - fz)
            )
            slots[full, level] = s[full]
            weights[full, level] = w[full]
        return slots, weights

    def interpolate(self, slots, weights):
        """Summed feature ``(N, L)`` from corner slots and weights."""
        safe = np.where(slots >= 0, slots, 0)
        return np.einsum("nhk,nhkl->nl", weights, self._features[safe])

    def query_batch(self, points):
        """Vectorised query: ``(summed (N, L), slots, weights, hit (N,))``."""
        slots, weights = self.lookup_corners(points)
        hit = np.any(slots[:, :, 0] >= 0, axis=1)
        return self.interpolate(slots, weights), slots, weights, hit

    def query(self, x):
        """Query one position; returns :class:`QueryResult` or ``None`` on a miss."""
        summed, slots, weights, hit = self.query_batch(np.asarray(x, dtype=np.float64).reshape(1, 3))
        if not hit[0]:
            return None
        contrib = [
            (int(slots[0, h, k]), float(weights[0, h, k]), h)
            for h in range(self.layout.level_count)
            for k in range(8)
            if slots[0, h, k] >= 0
        ]
        return QueryResult(summed[0].copy(), contrib)

    # -- continual learning state -------------------------------------------

    def snapshot_anchors(self, slots):
        slots = np.asarray(slots, dtype=np.int64)
        self._anchors[slots] = self._features[slots]
        self._has_anchor[slots] = True

    # -- geometry -------------------------------------------------------------

    def level_cells(self, level):
        """Allocated node indices (with offset) at ``level``, from corner-0 codes.

        A node is allocated when all of its corners are, which holds for every
        node created by :meth:`allocate_for_points`; recover them by checking the
        8 nodes sharing each stored corner.
        """
        codes, _ = self.tables[level].items()
        ix, iy, iz = kernels.morton_decode(codes)
        corners = np.stack([ix, iy, iz], axis=1)
        cand = (corners[:, None, :] - CORNER_OFFSETS[None, :, :]).reshape(-1, 3)
        cand = cand[np.all(cand >= 0, axis=1)]
        cand = np.unique(cand, axis=0)
        s = self.tables[level].lookup(self.corner_codes(cand))
        return cand[np.all(s >= 0, axis=1)]

    def bounds(self, level=0):
        """World-space AABB ``(lo, hi)`` of the allocated nodes at ``level``."""
        cells = self.level_cells(level)
        if cells.shape[0] == 0:
            raise ValueError("field has no allocated nodes")
        off = np.asarray(self.layout.world_offset)
        lo = ((cells.min(axis=0) << level) - off) * self.layout.leaf_size
        hi = (((cells.max(axis=0) + 1) << level) - off) * self.layout.leaf_size
        return lo.astype(np.float64), hi.astype(np.float64)

    # -- persistence ----------------------------------------------------------

    def save(self, path, with_optimizer=True):
        write_field(self, path, with_optimizer=with_optimizer)

    @classmethod
    def load(cls, path):
        return read_field(path)


_HEADER = struct.Struct("<8sII d III 3q QQ")


def write_field(fld, path, with_optimizer=True):
    """Binary layout (little-endian)::

        magic[8] "OCTSDFFD" | version u32 | flags u32 (bit0: optimizer moments)
        leaf_size f64 | level_count u32 | feature_len u32 | bits_per_axis u32
        world_offset i64[3] | n_slots u64 | opt_step u64
        per level: count u64, codes u64[count], slots i64[count]   (sorted by slot)
        features f64[n*L] | anchors f64[n*L] | omega f64[n*L] | has_anchor u8[n]
        if bit0: adam_m f64[n*L] | adam_v f64[n*L]
    """
    lay = fld.layout
    flags = 1 if with_optimizer else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, flags, lay.leaf_size, lay.level_count,
                              lay.feature_len, lay.bits_per_axis, *lay.world_offset,
                              fld.n_slots, fld.opt_step))
        for table in fld.tables:
            codes, slots = table.items()
            fh.write(struct.pack("<Q", codes.size))
            fh.write(codes.astype("<u8").tobytes())
            fh.write(slots.astype("<i8").tobytes())
        for arr in (fld.features, fld.anchors, fld.omega):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(fld.has_anchor.astype(np.uint8).tobytes())
        if with_optimizer:
            fh.write(np.ascontiguousarray(fld.adam_m, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(fld.adam_v, dtype="<f8").tobytes())


def read_field(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size or buf[:8] != FIELD_MAGIC:
        raise FieldFormatError(f"{path}: not a feature-field file (bad magic)")
    (_, version, flags, leaf, H, L, bits, ox, oy, oz, n, step) = _HEADER.unpack_from(buf, 0)
    if version != FIELD_VERSION:
        raise FieldFormatError(f"{path}: unsupported field version {version}")
    layout = FieldLayout(leaf, H, L, (ox, oy, oz), bits)
    fld = FeatureField(layout, capacity=max(n, 16))
    pos = _HEADER.size

    def take(dtype, count):
        nonlocal pos
        nbytes = np.dtype(dtype).itemsize * count
        if pos + nbytes > len(buf):
            raise FieldFormatError(f"{path}: truncated at byte {pos}")
        out = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
        pos += nbytes
        return out

    for level in range(H):
        (count,) = struct.unpack_from("<Q", buf, pos) if pos + 8 <= len(buf) else (None,)
        if count is None:
            raise FieldFormatError(f"{path}: truncated at byte {pos}")
        pos += 8
        codes = take("<u8", count).astype(np.uint64)
        slots = take("<i8", count).astype(np.int64)
        fld.tables[level] = HashTable.from_items(codes, slots)
    fld.n_slots = n
    fld._features[:n] = take("<f8", n * L).reshape(n, L)
    fld._anchors[:n] = take("<f8", n * L).reshape(n, L)
    fld._omega[:n] = take("<f8", n * L).reshape(n, L)
    fld._has_anchor[:n] = take("u1", n).astype(bool)
    if flags & 1:
        fld._adam_m[:n] = take("<f8", n * L).reshape(n, L)
        fld._adam_v[:n] = take("<f8", n * L).reshape(n, L)
    fld.opt_step = step
    if pos != len(buf):
        raise FieldFormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return fld
