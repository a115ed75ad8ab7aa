"""Run configuration: a flat ``key = value`` text file with typed validation.

Lines starting with ``#`` are comments. Lists (``bbox``) are comma or space
separated numbers. Unknown keys are rejected.
"""
import os
from dataclasses import dataclass, fields, replace

from .synthetic import SCENES


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # inputs / outputs
    scan_dir: str = ""
    pose_file: str = ""
    out_dir: str = "out"
    field_file: str = ""
    model_file: str = ""
    log_file: str = ""
    mesh_file: str = ""
    pred_file: str = ""
    gt_file: str = ""
    gt_mask_file: str = ""
    report_file: str = ""
    # map layout
    leaf_size: float = 0.1
    levels: int = 4
    feature_len: int = 8
    # decoder
    hidden_layers: int = 2
    hidden_width: int = 32
    # sampling
    n_band: int = 5
    n_free: int = 5
    sigma: float = 0.05
    max_range: float = 60.0
    voxel_down: float = 0.0
    # losses
    lambda_e: float = 0.1
    lambda_r: float = 1000.0
    omega_max: float = 1000.0
    fd_step: float = 0.0  # 0 means half the leaf size
    # optimisation
    lr_features: float = 0.01
    lr_mlp: float = 0.001
    batch_size: int = 4096
    iterations: int = 2000
    iters_per_scan: int = 50
    checkpoint_every: int = 0
    resume: bool = False
    seed: int = 0
    workers: int = 0  # nearest-neighbour threads, 0 means all cores
    # meshing
    mesh_resolution: float = 0.05
    bbox: tuple = ()
    mesh_format: str = "ply_binary"
    mesh_mask_level: int = 0  # -1 keeps every lattice point any level covers
    # evaluation
    tau: float = 0.1
    eval_points: int = 1000000
    # synthetic data
    scene: str = "sphere"

    def __post_init__(self):
        checks = [
            ("leaf_size", self.leaf_size > 0),
            ("levels", self.levels >= 1),
            ("feature_len", self.feature_len >= 1),
            ("hidden_layers", self.hidden_layers >= 1),
            ("hidden_width", self.hidden_width >= 1),
            ("n_band", self.n_band >= 1),
            ("n_free", self.n_free >= 0),
            ("sigma", self.sigma > 0),
            ("max_range", self.max_range > 0),
            ("voxel_down", self.voxel_down >= 0),
            ("lambda_e", self.lambda_e >= 0),
            ("lambda_r", self.lambda_r >= 0),
            ("omega_max", self.omega_max >= 0),
            ("fd_step", self.fd_step >= 0),
            ("lr_features", self.lr_features > 0),
            ("lr_mlp", self.lr_mlp > 0),
            ("batch_size", self.batch_size >= 1),
            ("iterations", self.iterations >= 0),
            ("iters_per_scan", self.iters_per_scan >= 0),
            ("checkpoint_every", self.checkpoint_every >= 0),
            ("workers", self.workers >= 0),
            ("mesh_resolution", self.mesh_resolution > 0),
            ("tau", self.tau > 0),
            ("eval_points", self.eval_points >= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value for {name}: {getattr(self, name)!r}")
        if self.bbox and len(self.bbox) != 6:
            raise ConfigError("bbox needs 6 numbers: xmin ymin zmin xmax ymax zmax")
        if not -1 <= self.mesh_mask_level < self.levels:
            raise ConfigError(f"mesh_mask_level must be in [-1, {self.levels - 1}], got {self.mesh_mask_level}")
        if self.mesh_format not in ("ply_binary", "ply_ascii", "obj"):
            raise ConfigError(f"invalid mesh_format {self.mesh_format!r}")
        if self.scene not in SCENES:
            raise ConfigError(f"unknown scene {self.scene!r}; choose from {', '.join(SCENES)}")

    @property
    def effective_fd_step(self):
        return self.fd_step if self.fd_step > 0 else 0.5 * self.leaf_size

    @property
    def effective_workers(self):
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def path(self, key, default_name):
        """Configured path for ``key`` or ``out_dir/default_name``."""
        value = getattr(self, key)
        return value if value else os.path.join(self.out_dir, default_name)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_value(key, text):
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        if kind in (bool, "bool"):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in (tuple, "tuple"):
            parts = text.replace(",", " ").split()
            return tuple(float(p) for p in parts)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def read_config_file(path):
    """Parse a ``key = value`` file into a dict of typed values."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                out[key] = parse_value(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_config_file(cfg, path):
    with open(path, "w") as fh:
        for f in fields(RunConfig):
            v = getattr(cfg, f.name)
            if isinstance(v, tuple):
                v = " ".join(repr(x) for x in v)
            fh.write(f"{f.name} = {v}\n")


def build_config(file_values=None, overrides=None):
    """Defaults, then file values, then overrides (flags win)."""
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(values) - set(FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        return replace(RunConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
