"""End-to-end mapping, meshing and evaluation driven by a :class:`RunConfig`.

All randomness is derived from ``cfg.seed`` and the scan index, so runs (and
resumed incremental runs) are reproducible bit for bit.
"""
import json
import logging
import os

import numpy as np

from .config import ConfigError
from .dataset_io import load_sequence
from .decoder import MlpConfig, MlpDecoder
from .evaluator import compute_report, sample_surface
from .field import FeatureField, FieldLayout, read_field
from .mesher import TriangleMesh, extract_mesh, write_mesh
from .ply import read_ply
from .sampler import SampleSet, SamplerConfig, sample_scan
from .synthetic import make_scene, write_scene
from .trainer import LossConfig, OptimConfig, TrainReport, train_batch, train_incremental_step

log = logging.getLogger(__name__)

# stream ids for np.random.default_rng([seed, stream, ...])
_RNG_SAMPLES, _RNG_TRAIN, _RNG_INIT = 1, 2, 3


def _rng(cfg, stream, *more):
    return np.random.default_rng([cfg.seed, stream, *more])


def loss_config(cfg, lambda_r=None):
    return LossConfig(sigma=cfg.sigma, lambda_e=cfg.lambda_e,
                      lambda_r=cfg.lambda_r if lambda_r is None else lambda_r,
                      omega_max=cfg.omega_max, fd_step=cfg.effective_fd_step)


def optim_config(cfg):
    return OptimConfig(lr_features=cfg.lr_features, lr_mlp=cfg.lr_mlp, batch_size=cfg.batch_size)


def sampler_config(cfg):
    return SamplerConfig(n_free=cfg.n_free, n_band=cfg.n_band, sigma=cfg.sigma, seed=cfg.seed)


def new_field(cfg, origin):
    layout = FieldLayout.centered(origin, cfg.leaf_size, cfg.levels, cfg.feature_len)
    return FeatureField(layout, seed=cfg.seed)


def scan_samples(cfg, scan):
    return sample_scan(scan.sensor_origin, scan.points, sampler_config(cfg), _rng(cfg, _RNG_SAMPLES, scan.index))


class CsvLog:
    def __init__(self, path, append=False):
        self.path = path
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            fresh = not (append and os.path.exists(path))
            self.fh = open(path, "a" if append else "w")
            if fresh:
                self.fh.write(TrainReport.CSV_HEADER + "\n")
        else:
            self.fh = None
        self.offset = 0

    def __call__(self, rep):
        if self.fh:
            row = TrainReport(rep.iteration + self.offset, rep.bce, rep.eikonal, rep.reg, rep.total, rep.slots, rep.ms)
            self.fh.write(row.csv_row() + "\n")

    def close(self):
        if self.fh:
            self.fh.close()


def map_batch(cfg):
    """Allocate all scans, train features and decoder jointly, save field/model/log."""
    scans = list(load_sequence(cfg.scan_dir, cfg.pose_file, cfg.max_range, cfg.voxel_down))
    if not scans:
        raise ConfigError(f"no scans found in {cfg.scan_dir}")
    field = new_field(cfg, scans[0].sensor_origin)
    for s in scans:
        field.allocate_for_points(s.points, rng=_rng(cfg, _RNG_INIT, s.index))
    samples = SampleSet.concat(scan_samples(cfg, s) for s in scans)
    decoder = MlpDecoder(MlpConfig(cfg.hidden_layers, cfg.hidden_width, cfg.feature_len), seed=cfg.seed)
    log.info("batch mapping: %d scans, %d slots, %d samples", len(scans), field.n_slots, len(samples))
    os.makedirs(cfg.out_dir, exist_ok=True)
    csv = CsvLog(cfg.path("log_file", "train_log.csv"))
    try:
        reports = train_batch(field, decoder, samples, cfg.iterations, loss_config(cfg, 0.0), optim_config(cfg),
                              _rng(cfg, _RNG_TRAIN), on_report=csv)
    finally:
        csv.close()
    field_path = cfg.path("field_file", "field.bin")
    model_path = cfg.path("model_file", "model.bin")
    field.save(field_path)
    decoder.save(model_path)
    return {"field": field_path, "model": model_path, "reports": reports, "field_obj": field, "decoder": decoder}


def _checkpoint_paths(cfg):
    return os.path.join(cfg.out_dir, "checkpoint.bin"), os.path.join(cfg.out_dir, "checkpoint.json")


def map_incremental(cfg, stop_after=None):
    """Scan-by-scan mapping with a frozen pre-trained decoder.

    ``stop_after`` ends the run after that many scans (simulates an interruption).
    """
    if not cfg.model_file:
        raise ConfigError("map-incremental needs model_file (a pre-trained decoder)")
    if not os.path.isfile(cfg.model_file):
        raise ConfigError(f"pre-trained model file not found: {cfg.model_file}")
    decoder = MlpDecoder.load(cfg.model_file, expect_input_len=cfg.feature_len)
    decoder.frozen = True
    scans = load_sequence(cfg.scan_dir, cfg.pose_file, cfg.max_range, cfg.voxel_down)
    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt_bin, ckpt_meta = _checkpoint_paths(cfg)

    field, start, it_offset = None, 0, 0
    if cfg.resume and os.path.isfile(ckpt_meta):
        with open(ckpt_meta) as fh:
            meta = json.load(fh)
        field = read_field(ckpt_bin)
        start, it_offset = meta["next_scan"], meta["iteration"]
        log.info("resuming at scan %d", start)
    csv = CsvLog(cfg.path("log_file", "train_log.csv"), append=start > 0)
    csv.offset = it_offset
    loss_cfg, opt_cfg = loss_config(cfg), optim_config(cfg)
    done = 0
    try:
        for scan in scans:
            if scan.index < start:
                continue
            if field is None:
                field = new_field(cfg, scan.sensor_origin)
            field.allocate_for_points(scan.points, rng=_rng(cfg, _RNG_INIT, scan.index))
            samples = scan_samples(cfg, scan)
            reps = train_incremental_step(field, decoder, samples, cfg.iters_per_scan, loss_cfg, opt_cfg,
                                          _rng(cfg, _RNG_TRAIN, scan.index), on_report=csv)
            csv.offset += len(reps)
            done += 1
            if cfg.checkpoint_every and (scan.index + 1) % cfg.checkpoint_every == 0:
                field.save(ckpt_bin)
                with open(ckpt_meta, "w") as fh:
                    json.dump({"next_scan": scan.index + 1, "iteration": csv.offset}, fh)
            if stop_after is not None and done >= stop_after:
                break
    finally:
        csv.close()
    if field is None:
        raise ConfigError(f"no scans found in {cfg.scan_dir}")
    field_path = cfg.path("field_file", "field.bin")
    field.save(field_path)
    return {"field": field_path, "field_obj": field, "decoder": decoder}


def mesh_bbox(cfg, field):
    if cfg.bbox:
        b = np.asarray(cfg.bbox, dtype=np.float64)
        return b[:3], b[3:]
    return field.bounds(0)


def mesh(cfg):
    field = read_field(cfg.path("field_file", "field.bin"))
    decoder = MlpDecoder.load(cfg.path("model_file", "model.bin"), expect_input_len=field.layout.feature_len)
    if cfg.mesh_mask_level >= field.layout.level_count:
        raise ConfigError(f"mesh_mask_level {cfg.mesh_mask_level} but the field has {field.layout.level_count} levels")
    mask = None if cfg.mesh_mask_level < 0 else cfg.mesh_mask_level
    m = extract_mesh(field, decoder, mesh_bbox(cfg, field), cfg.mesh_resolution, mask_level=mask)
    out = cfg.path("mesh_file", "mesh.ply")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_mesh(m, out, cfg.mesh_format)
    return {"mesh": out, "mesh_obj": m}


def load_cloud(path, n_points, seed):
    """Surface samples of a mesh PLY, or the vertices of a point-cloud PLY."""
    if not os.path.isfile(path):
        raise ConfigError(f"file not found: {path}")
    v, f = read_ply(path)
    if f is not None and f.shape[0]:
        return sample_surface(TriangleMesh(v, f), n_points, seed)
    return v


def evaluate(cfg):
    if not cfg.pred_file or not cfg.gt_file:
        raise ConfigError("eval needs pred_file and gt_file")
    pred = load_cloud(cfg.pred_file, cfg.eval_points, cfg.seed)
    gt = load_cloud(cfg.gt_file, cfg.eval_points, cfg.seed + 1)
    mask = load_cloud(cfg.gt_mask_file, cfg.eval_points, cfg.seed + 2) if cfg.gt_mask_file else None
    report = compute_report(pred, gt, cfg.tau, gt_mask=mask, workers=cfg.effective_workers)
    out = cfg.path("report_file", "report.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w") as fh:
        fh.write(report.csv_header() + "\n" + report.csv_row() + "\n")
    return {"report": report, "report_file": out}


def make_synthetic(cfg):
    scene = make_scene(cfg.scene, cfg.seed)
    write_scene(scene, cfg.out_dir)
    return {"scene": scene, "out_dir": cfg.out_dir}
