"""Shallow MLP decoding a summed feature vector into a signed distance.

Hidden layers use ReLU, the output layer is linear. The raw output is the
signed distance in meters. Forward and backward passes are batched numpy.
"""
import struct
from dataclasses import dataclass

import numpy as np

MODEL_MAGIC = b"OCTSDFMD"
MODEL_VERSION = 1

ACTIVATIONS = ("relu", "identity")


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    hidden_layers: int = 2
    hidden_width: int = 32
    input_len: int = 8
    activation: str = "relu"

    def __post_init__(self):
        if self.hidden_layers < 1:
            raise ValueError(f"hidden_layers must be >= 1, got {self.hidden_layers}")
        if self.hidden_width < 1:
            raise ValueError(f"hidden_width must be >= 1, got {self.hidden_width}")
        if self.input_len < 1:
            raise ValueError(f"input_len must be >= 1, got {self.input_len}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    def layer_shapes(self):
        dims = [self.input_len] + [self.hidden_width] * self.hidden_layers + [1]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def n_params(self):
        return sum(o * i + o for o, i in self.layer_shapes())


@dataclass
class GradientBundle:
    d_params: np.ndarray
    d_input: np.ndarray


class MlpDecoder:
    """MLP whose weights live in one flat float64 array (``params``).

    ``weights[k]`` / ``biases[k]`` are views into ``params``; the flat order is
    layer by layer, row-major weight matrix followed by its bias.
    """

    def __init__(self, config, params=None, seed=0):
        self.config = config
        self.frozen = False
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (config.n_params,):
            raise ValueError(f"expected {config.n_params} parameters, got shape {params.shape}")
        self.params = params.copy()
        self._bind_views()

    def _init_params(self, rng):
        chunks = []
        for out_dim, in_dim in self.config.layer_shapes():
            # fan-in (Kaiming) scaling
            chunks.append(rng.normal(0.0, np.sqrt(2.0 / in_dim), size=out_dim * in_dim))
            chunks.append(np.zeros(out_dim))
        return np.concatenate(chunks)

    def _bind_views(self):
        self.weights, self.biases = [], []
        pos = 0
        for out_dim, in_dim in self.config.layer_shapes():
            self.weights.append(self.params[pos : pos + out_dim * in_dim].reshape(out_dim, in_dim))
            pos += out_dim * in_dim
            self.biases.append(self.params[pos : pos + out_dim])
            pos += out_dim

    def set_params(self, params):
        self.params[:] = params

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.config.input_len:
            raise ValueError(f"feature length {x.shape[-1]} != decoder input length {self.config.input_len}")
        return x

    def forward_batch(self, feats, keep_cache=False):
        """SDF for each row of ``feats`` (shape ``(N, L)``)."""
        h = self._check(feats).reshape(-1, self.config.input_len)
        relu = self.config.activation == "relu"
        cache = [h]
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T + b
            if k < last and relu:
                h = np.maximum(h, 0.0)
            cache.append(h)
        out = h[:, 0]
        if keep_cache:
            return out, cache
        return out

    def forward(self, feature):
        feature = self._check(feature)
        if feature.ndim != 1:
            raise ValueError("forward expects a single feature vector; use forward_batch")
        return float(self.forward_batch(feature[None, :])[0])

    def backward_batch(self, cache, upstream, need_params=True):
        """Reverse pass for ``sum(upstream * out)``.

        Returns ``(d_params or None, d_input (N, L))``.
        """
        upstream = np.asarray(upstream, dtype=np.float64).reshape(-1, 1)
        relu = self.config.activation == "relu"
        n_layers = len(self.weights)
        g = upstream
        grads = [None] * (2 * n_layers)
        for k in range(n_layers - 1, -1, -1):
            if k < n_layers - 1 and relu:
                g = g * (cache[k + 1] > 0.0)
            if need_params:
                grads[2 * k] = (g.T @ cache[k]).ravel()
                grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k]
        d_params = np.concatenate(grads) if need_params else None
        return d_params, g

    def backward(self, feature, upstream):
        feature = self._check(feature)
        _, cache = self.forward_batch(feature.reshape(1, -1), keep_cache=True)
        d_params, d_in = self.backward_batch(cache, [upstream])
        return GradientBundle(d_params, d_in[0])

    # -- persistence ----------------------------------------------------------

    def save(self, path):
        """Layout (little-endian)::

            magic[8] "OCTSDFMD" | version u32 | hidden_layers u32 | hidden_width u32
            input_len u32 | activation u32 (index into ACTIVATIONS) | n_params u64
            params f64[n_params]
        """
        c = self.config
        with open(path, "wb") as fh:
            fh.write(struct.pack("<8sIIIIIQ", MODEL_MAGIC, MODEL_VERSION, c.hidden_layers, c.hidden_width,
                                 c.input_len, ACTIVATIONS.index(c.activation), c.n_params))
            fh.write(self.params.astype("<f8").tobytes())

    @classmethod
    def load(cls, path, expect_input_len=None):
        with open(path, "rb") as fh:
            buf = fh.read()
        head = struct.Struct("<8sIIIIIQ")
        if len(buf) < head.size or buf[:8] != MODEL_MAGIC:
            raise ModelFormatError(f"{path}: not a decoder model file (bad magic)")
        _, version, m, w, l, act, n = head.unpack_from(buf, 0)
        if version != MODEL_VERSION:
            raise ModelFormatError(f"{path}: unsupported model version {version}")
        if act >= len(ACTIVATIONS):
            raise ModelFormatError(f"{path}: unknown activation code {act}")
        config = MlpConfig(m, w, l, ACTIVATIONS[act])
        if expect_input_len is not None and l != expect_input_len:
            raise ModelFormatError(f"{path}: model input length {l} != feature length {expect_input_len}")
        if n != config.n_params or len(buf) != head.size + 8 * n:
            raise ModelFormatError(f"{path}: parameter count does not match the stored configuration")
        params = np.frombuffer(buf, dtype="<f8", count=n, offset=head.size).astype(np.float64)
        return cls(config, params)
