"""Training pairs from posed range beams.

Each beam yields ``n_band`` samples whose projected signed distance is uniform
in ``[-3 sigma, 3 sigma]`` around the endpoint and ``n_free`` samples uniform on
the free segment from the sensor to ``3 sigma`` before the endpoint. Labels are
the sigmoid-mapped distances.
"""
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

BAND_WIDTH = 3.0  # in units of sigma


def sigmoid_label(d, sigma):
    """``1 / (1 + exp(d / sigma))``, evaluated without overflow."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    z = np.asarray(d, dtype=np.float64) / sigma
    # exp(-|z|) never overflows; pick the branch per sign
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SamplerConfig:
    n_free: int = 5
    n_band: int = 5
    sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_free < 0:
            raise ValueError("n_free must be >= 0")
        if self.n_band < 1:
            raise ValueError("n_band must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class Beam:
    origin: tuple
    endpoint: tuple


@dataclass(frozen=True)
class Sample:
    position: np.ndarray
    proj_sdf: float
    label: float
    kind: str  # "free" or "band"


@dataclass
class SampleSet:
    """Column arrays of samples: positions ``(N, 3)``, sdf, label, band flag."""

    positions: np.ndarray
    sdf: np.ndarray
    label: np.ndarray
    band: np.ndarray
    skipped_beams: int = 0

    def __len__(self):
        return self.sdf.shape[0]

    def __getitem__(self, i):
        return Sample(self.positions[i], float(self.sdf[i]), float(self.label[i]),
                      "band" if self.band[i] else "free")

    def subset(self, idx):
        return SampleSet(self.positions[idx], self.sdf[idx], self.label[idx], self.band[idx])

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros(0, dtype=bool))

    @classmethod
    def concat(cls, sets):
        sets = list(sets)
        if not sets:
            return cls.empty()
        return cls(
            np.concatenate([s.positions for s in sets]),
            np.concatenate([s.sdf for s in sets]),
            np.concatenate([s.label for s in sets]),
            np.concatenate([s.band for s in sets]),
            sum(s.skipped_beams for s in sets),
        )


def sample_scan(origin, endpoints, cfg, rng):
    """Samples for all beams from ``origin`` to each row of ``endpoints``."""
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    ends = np.asarray(endpoints, dtype=np.float64).reshape(-1, 3)
    ray = ends - origin
    length = np.linalg.norm(ray, axis=1)
    good = length > 0
    skipped = int((~good).sum())
    if skipped:
        log.warning("skipped %d zero-length beams", skipped)
    ends, ray, length = ends[good], ray[good], length[good]
    direction = ray / length[:, None] if length.size else ray
    band = BAND_WIDTH * cfg.sigma
    long_beam = length > band

    parts_pos, parts_d, parts_band = [], [], []

    # band samples on long beams
    idx = np.flatnonzero(long_beam)
    d = rng.uniform(-band, band, size=(idx.size, cfg.n_band))
    parts_pos.append((ends[idx, None, :] - d[..., None] * direction[idx, None, :]).reshape(-1, 3))
    parts_d.append(d.ravel())
    parts_band.append(np.ones(d.size, dtype=bool))

    # free-space samples on long beams
    if cfg.n_free:
        t = rng.uniform(0.0, 1.0, size=(idx.size, cfg.n_free)) * (length[idx, None] - band)
        parts_pos.append((origin + t[..., None] * direction[idx, None, :]).reshape(-1, 3))
        parts_d.append((length[idx, None] - t).ravel())
        parts_band.append(np.zeros(t.size, dtype=bool))

    # short beams: every sample comes from the band, clipped to the beam
    idx = np.flatnonzero(~long_beam)
    if idx.size:
        k = cfg.n_band + cfg.n_free
        u = rng.uniform(0.0, 1.0, size=(idx.size, k))
        d = -band + u * (length[idx, None] + band)
        parts_pos.append((ends[idx, None, :] - d[..., None] * direction[idx, None, :]).reshape(-1, 3))
        parts_d.append(d.ravel())
        parts_band.append(np.ones(d.size, dtype=bool))

    sdf = np.concatenate(parts_d)
    return SampleSet(
        np.concatenate(parts_pos),
        sdf,
        sigmoid_label(sdf, cfg.sigma) if sdf.size else np.zeros(0),
        np.concatenate(parts_band),
        skipped,
    )


def sample_beam(beam, cfg, rng=None):
    """List of :class:`Sample` for one beam; empty for a degenerate beam."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    s = sample_scan(beam.origin, np.asarray(beam.endpoint, dtype=np.float64)[None, :], cfg, rng)
    return [s[i] for i in range(len(s))]


def assemble_batch(n_samples, batch_size, rng):
    """Yield index batches covering a random permutation of ``range(n_samples)`` once."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if n_samples == 0:
        return
    perm = rng.permutation(n_samples)
    for start in range(0, n_samples, batch_size):
        yield perm[start : start + batch_size]


def batch_stream(n_samples, batch_size, rng):
    """Endless sequence of batches, reshuffling at each epoch."""
    while True:
        empty = True
        for b in assemble_batch(n_samples, batch_size, rng):
            empty = False
            yield b
        if empty:
            return
