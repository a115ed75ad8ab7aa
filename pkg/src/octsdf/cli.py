"""Command line for octsdf: map-batch, map-incremental, mesh, eval, make-synthetic.

Every subcommand reads an optional ``--config`` file of ``key = value`` lines;
flags given on the command line override file values.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
import argparse
import logging
import sys
from dataclasses import fields

from . import pipeline
from .config import ConfigError, RunConfig, build_config, read_config_file
from .dataset_io import ScanFormatError
from .decoder import ModelFormatError
from .field import FieldFormatError
from .ply import PlyFormatError
from .trainer import ConfigurationError, TrainingDiverged

log = logging.getLogger("octsdf")

_MAP_COMMON = ["scan_dir", "pose_file", "out_dir", "field_file", "log_file", "leaf_size", "levels", "feature_len",
               "n_band", "n_free", "sigma", "max_range", "voxel_down", "lambda_e", "fd_step", "lr_features",
               "batch_size", "seed"]

COMMANDS = {
    "map-batch": (
        "Train features and decoder jointly on all scans.",
        _MAP_COMMON + ["model_file", "hidden_layers", "hidden_width", "lr_mlp", "iterations"],
        pipeline.map_batch,
    ),
    "map-incremental": (
        "Map scan by scan with a frozen pre-trained decoder.",
        _MAP_COMMON + ["model_file", "lambda_r", "omega_max", "iters_per_scan", "checkpoint_every", "resume"],
        pipeline.map_incremental,
    ),
    "mesh": (
        "Extract a triangle mesh from a trained map.",
        ["field_file", "model_file", "mesh_file", "out_dir", "mesh_resolution", "bbox", "mesh_format",
         "mesh_mask_level"],
        pipeline.mesh,
    ),
    "eval": (
        "Compare a predicted mesh or cloud with ground truth.",
        ["pred_file", "gt_file", "gt_mask_file", "report_file", "out_dir", "tau", "eval_points", "seed", "workers"],
        pipeline.evaluate,
    ),
    "make-synthetic": (
        "Ray-cast a synthetic LiDAR dataset (sphere, room, two-region).",
        ["scene", "out_dir", "seed"],
        pipeline.make_synthetic,
    ),
}

_HELP = {
    "scan_dir": "directory of .bin/.ply scans",
    "pose_file": "KITTI pose file, one 3x4 matrix per line",
    "out_dir": "output directory",
    "field_file": "feature field file (default out_dir/field.bin)",
    "model_file": "decoder file (default out_dir/model.bin)",
    "log_file": "training CSV log (default out_dir/train_log.csv)",
    "mesh_file": "output mesh (default out_dir/mesh.ply)",
    "pred_file": "predicted mesh or point cloud (PLY)",
    "gt_file": "ground-truth mesh or point cloud (PLY)",
    "gt_mask_file": "optional reference cloud for accuracy",
    "report_file": "report CSV (default out_dir/report.csv)",
    "leaf_size": "leaf node size in meters",
    "levels": "number of octree levels with features",
    "feature_len": "feature vector length",
    "hidden_layers": "decoder hidden layers",
    "hidden_width": "decoder hidden width",
    "n_band": "samples per beam in the surface band",
    "n_free": "free-space samples per beam",
    "sigma": "sigmoid scale of the labels in meters",
    "max_range": "drop returns farther than this (m)",
    "voxel_down": "voxel size for scan downsampling (0 = off)",
    "lambda_e": "Eikonal loss weight",
    "lambda_r": "forgetting regulariser weight",
    "omega_max": "importance cap",
    "fd_step": "finite-difference step for gradients (0 = half leaf)",
    "lr_features": "feature learning rate",
    "lr_mlp": "decoder learning rate",
    "batch_size": "samples per iteration",
    "iterations": "batch-mode iterations",
    "iters_per_scan": "incremental iterations per scan",
    "checkpoint_every": "checkpoint every k scans (0 = off)",
    "resume": "resume from out_dir/checkpoint.*",
    "seed": "random seed",
    "workers": "threads for nearest-neighbour queries (0 = all cores)",
    "mesh_resolution": "marching-cubes cell size (m)",
    "bbox": "meshing box: xmin ymin zmin xmax ymax zmax",
    "mesh_format": "ply_binary, ply_ascii or obj",
    "mesh_mask_level": "mesh only where this level covers the point (-1 = any level)",
    "tau": "distance threshold for ratios (m)",
    "eval_points": "surface samples per mesh",
    "scene": "sphere, room or two-region",
}

_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _flag(key):
    return "--" + key.replace("_", "-")


def build_parser():
    parser = argparse.ArgumentParser(prog="octsdf", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (desc, keys, _) in COMMANDS.items():
        p = sub.add_parser(name, help=desc, description=desc + " Config keys: " + ", ".join(keys) + ".")
        p.add_argument("--config", help="key = value config file (flags override it)")
        for key in keys:
            kind = _TYPES[key]
            kind = kind if isinstance(kind, type) else {"int": int, "float": float, "bool": bool,
                                                       "str": str, "tuple": tuple}[kind]
            help_text = f"[{key}] {_HELP[key]}"
            if kind is bool:
                p.add_argument(_flag(key), dest=key, action="store_const", const=True, default=None, help=help_text)
            elif kind is tuple:
                p.add_argument(_flag(key), dest=key, type=float, nargs=6, default=None,
                               metavar=("XMIN", "YMIN", "ZMIN", "XMAX", "YMAX", "ZMAX"), help=help_text)
            else:
                p.add_argument(_flag(key), dest=key, type=kind, default=None, help=help_text)
    return parser


def config_from_args(args):
    keys = COMMANDS[args.command][1]
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in keys}
    if overrides.get("bbox") is not None:
        overrides["bbox"] = tuple(overrides["bbox"])
    return build_config(file_values, overrides)


def _summarise(command, result):
    if command == "eval":
        print(result["report"].table())
        print(result["report"].csv_header())
        print(result["report"].csv_row())
    elif command == "mesh":
        m = result["mesh_obj"]
        print(f"wrote {result['mesh']} ({m.vertices.shape[0]} vertices, {len(m)} triangles)")
    elif command == "make-synthetic":
        print(f"wrote synthetic scene to {result['out_dir']}")
    else:
        print(f"wrote {result['field']}" + (f" and {result['model']}" if "model" in result else ""))


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        result = COMMANDS[args.command][2](cfg)
    except (ConfigError, ConfigurationError, FileNotFoundError, ScanFormatError, FieldFormatError,
            ModelFormatError, PlyFormatError) as exc:
        print(f"octsdf {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, OSError, RuntimeError, ValueError) as exc:
        print(f"octsdf {args.command}: runtime failure: {exc}", file=sys.stderr)
        return 1
    _summarise(args.command, result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
