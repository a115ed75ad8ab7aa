"""Sparse multi-resolution feature octree with a small MLP decoder for LiDAR SDF mapping."""
from .config import ConfigError, RunConfig
from .decoder import MlpConfig, MlpDecoder
from .evaluator import ReconReport, compute_report
from .field import FeatureField, FieldLayout, QueryResult
from .kernels import BACKEND
from .mesher import SdfGrid, TriangleMesh, extract_mesh, marching_cubes, query_grid
from .sampler import SampleSet, SamplerConfig, sample_scan, sigmoid_label
from .trainer import LossConfig, OptimConfig, train_batch, train_incremental_step, update_importance

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "FeatureField", "FieldLayout", "LossConfig", "MlpConfig", "MlpDecoder",
    "OptimConfig", "QueryResult", "ReconReport", "RunConfig", "SampleSet", "SamplerConfig", "SdfGrid",
    "TriangleMesh", "compute_report", "extract_mesh", "marching_cubes", "query_grid", "sample_scan",
    "sigmoid_label", "train_batch", "train_incremental_step", "update_importance",
]
