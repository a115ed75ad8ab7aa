"""Optimisation of the feature field (and optionally the decoder).

Per sample the loss is the binary cross entropy between the sigmoid-mapped
prediction and the sigmoid-mapped projected distance; band samples add an
Eikonal penalty on a central-difference spatial gradient. Incremental mapping
adds an importance-weighted pull of previously converged feature parameters
towards their anchors.
"""
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import kernels
from .sampler import batch_stream, sigmoid_label

BCE_CLAMP = 1e-7

# neighbour order for the central differences: +x, -x, +y, -y, +z, -z
_FD_DIRS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.float64)


class TrainingDiverged(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    sigma: float = 0.05
    lambda_e: float = 0.1
    lambda_r: float = 1e3
    omega_max: float = 1e3
    fd_step: float = 0.05

    def __post_init__(self):
        for name in ("sigma", "lambda_e", "lambda_r", "omega_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")


@dataclass(frozen=True)
class OptimConfig:
    lr_features: float = 1e-2
    lr_mlp: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4096


@dataclass
class TrainReport:
    iteration: int
    bce: float
    eikonal: float
    reg: float
    total: float
    slots: int
    ms: float

    CSV_HEADER = "iteration,bce,eikonal,reg,total,slots,ms"

    def csv_row(self):
        return f"{self.iteration},{self.bce!r},{self.eikonal!r},{self.reg!r},{self.total!r},{self.slots},{self.ms:.3f}"

    def key(self):
        """Everything but the wall time, for determinism checks."""
        d = asdict(self)
        d.pop("ms")
        return d


# -- scalar losses ---------------------------------------------------------------


def bce_loss(o, l):
    """Negated binary cross entropy with ``o`` clamped to ``[1e-7, 1 - 1e-7]``."""
    o = np.clip(np.asarray(o, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    l = np.asarray(l, dtype=np.float64)
    out = -(l * np.log(o) + (1.0 - l) * np.log(1.0 - o))
    return float(out) if out.ndim == 0 else out


def eikonal_loss(grad):
    g = np.asarray(grad, dtype=np.float64)
    out = (np.linalg.norm(g, axis=-1) - 1.0) ** 2
    return float(out) if out.ndim == 0 else out


def reg_loss(field, slots):
    """``sum omega * (theta - anchor)^2`` over the given slots that have anchors."""
    slots = np.asarray(slots, dtype=np.int64)
    slots = slots[field.has_anchor[slots]]
    diff = field.features[slots] - field.anchors[slots]
    return float(np.sum(field.omega[slots] * diff * diff))


def spatial_gradient(field, decoder, x, eps):
    """Central-difference gradient of the decoded field at ``x``, or ``None`` if a neighbour misses."""
    x = np.asarray(x, dtype=np.float64).reshape(3)
    pts = x + eps * _FD_DIRS
    feats, _, _, hit = field.query_batch(pts)
    if not hit.all():
        return None
    f = decoder.forward_batch(feats)
    return (f[0::2] - f[1::2]) / (2.0 * eps)


def spatial_gradients(field, decoder, xs, eps):
    """Batched :func:`spatial_gradient`: ``(grads (N, 3), valid (N,))``."""
    xs = np.asarray(xs, dtype=np.float64).reshape(-1, 3)
    pts = (xs[:, None, :] + eps * _FD_DIRS[None]).reshape(-1, 3)
    feats, _, _, hit = field.query_batch(pts)
    valid = hit.reshape(-1, 6).all(axis=1)
    f = decoder.forward_batch(feats).reshape(-1, 6)
    return (f[:, 0::2] - f[:, 1::2]) / (2.0 * eps), valid


# -- optimiser ---------------------------------------------------------------------


class Adam:
    """Dense Adam state for the decoder parameters."""

    def __init__(self, n, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self, params, grad):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        mhat = self.m / (1 - b1**self.t)
        vhat = self.v / (1 - b2**self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _sparse_adam(field, rows, grad, opt):
    """Lazy Adam on the touched feature rows; moments live in the field."""
    field.opt_step += 1
    t = field.opt_step
    b1, b2 = opt.beta1, opt.beta2
    m = b1 * field._adam_m[rows] + (1 - b1) * grad
    v = b2 * field._adam_v[rows] + (1 - b2) * grad * grad
    field._adam_m[rows] = m
    field._adam_v[rows] = v
    mhat = m / (1 - b1**t)
    vhat = v / (1 - b2**t)
    field._features[rows] -= opt.lr_features * mhat / (np.sqrt(vhat) + opt.eps)


def _anchor_prox(field, rows, lam, lr):
    """Exact minimiser of ``lam * omega * (theta - anchor)^2 + (theta - theta_k)^2 / (2 lr)``."""
    rows = rows[field._has_anchor[rows]]
    if rows.size == 0 or lam == 0:
        return
    c = 2.0 * lr * lam * field._omega[rows]
    field._features[rows] = (field._features[rows] + c * field._anchors[rows]) / (1.0 + c)


# -- loss + gradient for one batch ----------------------------------------------------


@dataclass
class BatchGrad:
    bce: float
    eikonal: float
    n_hit: int
    n_eik: int
    feature_rows: np.ndarray  # touched slots
    feature_grad: np.ndarray  # (len(feature_rows), L)
    mlp_grad: np.ndarray  # may be None


class _Workspace:
    """Reusable dense gradient buffer + touched mask sized to the field."""

    def __init__(self):
        self.grad = np.zeros((0, 0))
        self.mark = np.zeros(0, dtype=bool)

    def ensure(self, n, L):
        if self.grad.shape[0] < n or self.grad.shape[1] != L:
            cap = max(n, 2 * self.grad.shape[0])
            self.grad = np.zeros((cap, L))
            self.mark = np.zeros(cap, dtype=bool)

    def take(self):
        rows = np.flatnonzero(self.mark)
        g = self.grad[rows].copy()
        self.grad[rows] = 0.0
        self.mark[rows] = False
        return rows, g


def batch_loss_grad(field, decoder, positions, labels, band, loss_cfg, need_mlp=True, ws=None):
    """Mean BCE and mean Eikonal over a batch, with gradients of ``bce + lambda_e * eikonal``.

    Samples whose query misses are dropped; band samples whose six Eikonal
    neighbours do not all hit skip the Eikonal term.
    """
    sigma, eps, lam_e = loss_cfg.sigma, loss_cfg.fd_step, loss_cfg.lambda_e
    L, H = field.layout.feature_len, field.layout.level_count
    ws = _Workspace() if ws is None else ws
    ws.ensure(field.n_slots, L)

    feats, slots, weights, hit = field.query_batch(positions)
    n_hit = int(hit.sum())
    if n_hit == 0:
        return BatchGrad(0.0, 0.0, 0, 0, np.zeros(0, dtype=np.int64), np.zeros((0, L)),
                         np.zeros(decoder.config.n_params) if need_mlp else None)
    feats, slots, weights = feats[hit], slots[hit], weights[hit]
    lab = np.asarray(labels, dtype=np.float64)[hit]
    want_eik = np.asarray(band, dtype=bool)[hit] if lam_e > 0 else np.zeros(n_hit, dtype=bool)

    n_eik = 0
    if want_eik.any():
        xs = np.asarray(positions, dtype=np.float64)[hit][want_eik]
        npts = (xs[:, None, :] + eps * _FD_DIRS[None]).reshape(-1, 3)
        nf, ns, nw, nh = field.query_batch(npts)
        ok = nh.reshape(-1, 6).all(axis=1)
        n_eik = int(ok.sum())
        keep = np.repeat(ok, 6)
        nf, ns, nw = nf[keep], ns[keep], nw[keep]
    if n_eik:
        all_feats = np.concatenate([feats, nf])
        all_slots = np.concatenate([slots, ns]).reshape(-1, H * 8)
        all_w = np.concatenate([weights, nw]).reshape(-1, H * 8)
    else:
        all_feats = feats
        all_slots = slots.reshape(-1, H * 8)
        all_w = weights.reshape(-1, H * 8)

    out, cache = decoder.forward_batch(all_feats, keep_cache=True)
    f = out[:n_hit]
    o = sigmoid_label(f, sigma)
    bce = float(np.mean(bce_loss(o, lab)))
    inside = (o > BCE_CLAMP) & (o < 1.0 - BCE_CLAMP)
    upstream = np.empty_like(out)
    upstream[:n_hit] = np.where(inside, (lab - o) / sigma, 0.0) / n_hit

    eik = 0.0
    if n_eik:
        fn = out[n_hit:].reshape(n_eik, 6)
        g = (fn[:, 0::2] - fn[:, 1::2]) / (2.0 * eps)
        norm = np.linalg.norm(g, axis=1)
        eik = float(np.mean((norm - 1.0) ** 2))
        dg = (2.0 * (norm - 1.0) / np.maximum(norm, 1e-12))[:, None] * g * (lam_e / n_eik)
        up = np.empty((n_eik, 6))
        up[:, 0::2] = dg / (2.0 * eps)
        up[:, 1::2] = -dg / (2.0 * eps)
        upstream[n_hit:] = up.ravel()

    mlp_grad, d_in = decoder.backward_batch(cache, upstream, need_params=need_mlp)
    kernels.scatter_weighted(ws.grad, ws.mark, all_slots, all_w, d_in)
    rows, grad = ws.take()
    return BatchGrad(bce, eik, n_hit, n_eik, rows, grad, mlp_grad)


# -- training loops ------------------------------------------------------------------


def _optimize(field, decoder, samples, iterations, loss_cfg, opt_cfg, rng, train_mlp, lambda_r,
              mlp_opt=None, on_report=None):
    reports = []
    touched = np.zeros(field.n_slots, dtype=bool)
    if iterations <= 0 or len(samples) == 0:
        return reports, touched
    ws = _Workspace()
    stream = batch_stream(len(samples), opt_cfg.batch_size, rng)
    if train_mlp and mlp_opt is None:
        mlp_opt = Adam(decoder.config.n_params, opt_cfg.lr_mlp, opt_cfg.beta1, opt_cfg.beta2, opt_cfg.eps)
    for it in range(iterations):
        t0 = time.perf_counter()
        idx = next(stream)
        bg = batch_loss_grad(field, decoder, samples.positions[idx], samples.label[idx], samples.band[idx],
                             loss_cfg, need_mlp=train_mlp, ws=ws)
        rows = bg.feature_rows
        reg = reg_loss(field, rows) if lambda_r > 0 else 0.0
        total = bg.bce + loss_cfg.lambda_e * bg.eikonal + lambda_r * reg
        if not np.isfinite(total):
            raise TrainingDiverged(
                f"non-finite loss at iteration {it}: bce={bg.bce} eikonal={bg.eikonal} reg={reg}"
            )
        if rows.size:
            _sparse_adam(field, rows, bg.feature_grad, opt_cfg)
            _anchor_prox(field, rows, lambda_r, opt_cfg.lr_features)
            touched[rows] = True
        if train_mlp and bg.n_hit:
            mlp_opt.step(decoder.params, bg.mlp_grad)
        rep = TrainReport(it, bg.bce, bg.eikonal, reg, total, int(rows.size), 1e3 * (time.perf_counter() - t0))
        reports.append(rep)
        if on_report is not None:
            on_report(rep)
    return reports, touched


def train_batch(field, decoder, samples, iterations, loss_cfg, opt_cfg, rng, freeze_mlp=False,
                on_report=None):
    """Joint optimisation of features (and the decoder unless frozen) on ``bce + lambda_e * eikonal``."""
    reports, _ = _optimize(field, decoder, samples, iterations, loss_cfg, opt_cfg, rng,
                           train_mlp=not (freeze_mlp or decoder.frozen), lambda_r=0.0, on_report=on_report)
    return reports


def update_importance(field, decoder, samples, sigma, omega_max, batch_size=8192):
    """Add the per-sample absolute BCE gradients of every feature parameter to its
    importance, capped at ``omega_max``. Returns the touched slots."""
    L = field.layout.feature_len
    H = field.layout.level_count
    acc = np.zeros((field.n_slots, L))
    mark = np.zeros(field.n_slots, dtype=bool)
    for start in range(0, len(samples), batch_size):
        sl = slice(start, start + batch_size)
        feats, slots, weights, hit = field.query_batch(samples.positions[sl])
        if not hit.any():
            continue
        out, cache = decoder.forward_batch(feats[hit], keep_cache=True)
        o = sigmoid_label(out, sigma)
        lab = samples.label[sl][hit]
        inside = (o > BCE_CLAMP) & (o < 1.0 - BCE_CLAMP)
        # per-sample (not averaged) loss gradient
        _, d_in = decoder.backward_batch(cache, np.where(inside, (lab - o) / sigma, 0.0), need_params=False)
        kernels.scatter_weighted(acc, mark, slots[hit].reshape(-1, H * 8), weights[hit].reshape(-1, H * 8),
                                 d_in, absolute=True)
    rows = np.flatnonzero(mark)
    field._omega[rows] = np.minimum(field._omega[rows] + acc[rows], omega_max)
    return rows


def train_incremental_step(field, decoder, samples, iterations, loss_cfg, opt_cfg, rng, on_report=None):
    """One scan of incremental mapping with a frozen decoder.

    Optimises features on ``bce + lambda_e * eikonal + lambda_r * reg``, then
    refreshes importance weights and snapshots anchors over the touched slots.
    """
    if not decoder.frozen:
        raise ConfigurationError("incremental mapping needs a frozen (pre-trained) decoder")
    reports, touched = _optimize(field, decoder, samples, iterations, loss_cfg, opt_cfg, rng,
                                 train_mlp=False, lambda_r=loss_cfg.lambda_r, on_report=on_report)
    imp_rows = update_importance(field, decoder, samples, loss_cfg.sigma, loss_cfg.omega_max)
    snap = np.union1d(np.flatnonzero(touched), imp_rows)
    field.snapshot_anchors(snap)
    return reports
