"""End-to-end pipeline stages and their file-based orchestration.

Stage order: generate -> encode -> predict -> decode -> cluster -> eval.
Each stage is a pure function of (inputs, config, derived seed); per-scene
seeds are derived from (master_seed, scene_index, stage name), so results do
not depend on batch order and parallel execution reproduces serial output
bit for bit. File layout under the configured output directory:

    scenes/scene_NNNNN.json     targets/target_NNNNN.json
    preds/pred_NNNNN.json       segments/segments_NNNNN.json
    lanes/lanes_NNNNN.json      report.csv / report.json
    plots/scene_NNNNN.svg       plots/scores_NNNNN.svg
"""

from __future__ import annotations

import multiprocessing
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import io
from .clustering import Curve, assemble_curve, cluster_segments, greedy_baseline
from .codec import LaneSegment, TilePredictionGrid, TileTargetGrid, decode_grid, encode_scene
from .config import ConfigError, PipelineConfig
from .evaluation import EvalReport, evaluate
from .losses import embedding_loss, finite_diff_check, total_tile_loss
from .plots import heatmap_svg, scene_svg
from .synth import Scene, generate_scene, oracle_predict

_DIRS = {"scenes": "scene", "targets": "target", "preds": "pred",
         "segments": "segments", "lanes": "lanes"}
CLUSTER_METHODS = ("embedding", "greedy")


def derive_seed(master_seed: int, scene_index: int, stage: str) -> int:
    """Deterministic per-scene, per-stage seed."""
    ss = np.random.SeedSequence(
        [master_seed & (2 ** 64 - 1), scene_index, zlib.crc32(stage.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# In-memory stages


def make_scene(config: PipelineConfig, index: int) -> Scene:
    cfg = replace(config.scene, seed=derive_seed(config.master_seed, index, "scene"))
    return generate_scene(cfg, grid=config.grid, rig=config.rig)


def encode_one(scene: Scene, config: PipelineConfig) -> TileTargetGrid:
    return encode_scene(scene.lanes, config.grid, config.bins)


def predict_one(targets: TileTargetGrid, config: PipelineConfig,
                index: int) -> TilePredictionGrid:
    noise = replace(config.noise, seed=derive_seed(config.master_seed, index, "noise"))
    return oracle_predict(targets, noise, config.embedding)


def decode_one(preds: TilePredictionGrid) -> list[LaneSegment]:
    return decode_grid(preds)


def cluster_one(segments: list[LaneSegment], config: PipelineConfig,
                method: str = "embedding") -> list[tuple[Curve, float]]:
    """Cluster segments and assemble each instance into a (curve, confidence)."""
    if method == "embedding":
        instances = cluster_segments(segments, config.cluster)
    elif method == "greedy":
        instances = greedy_baseline(segments)
    else:
        raise ConfigError(f"unknown cluster method {method!r}; expected one of "
                          f"{CLUSTER_METHODS}")
    return [(assemble_curve(inst), min(1.0, max(0.0, inst.confidence)))
            for inst in instances]


def scene_curves(scene: Scene) -> list[Curve]:
    return [Curve(points=lane.points, lane_id=lane.lane_id) for lane in scene.lanes]


@dataclass
class SceneResult:
    index: int
    scene: Scene
    targets: TileTargetGrid
    preds: TilePredictionGrid
    segments: list[LaneSegment]
    lanes: list[tuple[Curve, float]]


def process_scene(config: PipelineConfig, index: int, method: str = "embedding") -> SceneResult:
    scene = make_scene(config, index)
    targets = encode_one(scene, config)
    preds = predict_one(targets, config, index)
    segments = decode_one(preds)
    lanes = cluster_one(segments, config, method)
    return SceneResult(index=index, scene=scene, targets=targets, preds=preds,
                       segments=segments, lanes=lanes)


def _worker(args) -> SceneResult:
    config, index, method = args
    return process_scene(config, index, method)


def run_pipeline(config: PipelineConfig, method: str = "embedding",
                 jobs: int = 1) -> tuple[EvalReport, list[SceneResult]]:
    """Run every stage over n_scenes, in memory; returns the report + results.

    jobs > 1 distributes scenes over a process pool; results are reduced in
    scene-index order, so output is identical to a serial run.
    """
    tasks = [(config, i, method) for i in range(config.n_scenes)]
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            results = pool.map(_worker, tasks)
    else:
        results = [_worker(t) for t in tasks]
    results.sort(key=lambda r: r.index)
    report = evaluate_results(results, config)
    return report, results


def evaluate_results(results: list[SceneResult], config: PipelineConfig) -> EvalReport:
    preds, pred_ids, gts, gt_ids = [], [], [], []
    for r in results:
        for curve, conf in r.lanes:
            preds.append((curve, conf))
            pred_ids.append(r.index)
        for curve in scene_curves(r.scene):
            gts.append(curve)
            gt_ids.append(r.index)
    return evaluate(preds, gts, config.eval, pred_scene_ids=pred_ids, gt_scene_ids=gt_ids)


# ---------------------------------------------------------------------------
# File-based stage commands


def _stage_dir(config: PipelineConfig, stage: str, create: bool = False) -> Path:
    d = Path(config.output_dir) / stage
    if create:
        d.mkdir(parents=True, exist_ok=True)
    return d


def _stage_path(config: PipelineConfig, stage: str, index: int) -> Path:
    return _stage_dir(config, stage) / f"{_DIRS[stage]}_{index:05d}.json"


def _read_stage(config: PipelineConfig, stage: str, parser) -> list:
    d = _stage_dir(config, stage)
    if not d.is_dir():
        raise io.SchemaError(d, "<dir>", "stage directory not found; run the producing "
                                         "stage first")
    paths = sorted(d.glob("*.json"))
    if not paths:
        raise io.SchemaError(d, "<dir>", "no input files")
    return [parser(io.load_json(p), str(p)) for p in paths]


def cmd_generate(config: PipelineConfig) -> list[Path]:
    _stage_dir(config, "scenes", create=True)
    out = []
    for i in range(config.n_scenes):
        scene = make_scene(config, i)
        path = _stage_path(config, "scenes", i)
        io.save_json(path, io.scene_to_dict(scene))
        out.append(path)
    return out


def cmd_encode(config: PipelineConfig) -> list[Path]:
    scenes = _read_stage(config, "scenes", io.scene_from_dict)
    _stage_dir(config, "targets", create=True)
    out = []
    for i, scene in enumerate(scenes):
        path = _stage_path(config, "targets", i)
        io.save_json(path, io.targets_to_dict(encode_one(scene, config)))
        out.append(path)
    return out


def cmd_predict(config: PipelineConfig) -> list[Path]:
    targets = _read_stage(config, "targets", io.targets_from_dict)
    _stage_dir(config, "preds", create=True)
    out = []
    for i, tgt in enumerate(targets):
        path = _stage_path(config, "preds", i)
        io.save_json(path, io.preds_to_dict(predict_one(tgt, config, i)))
        out.append(path)
    return out


def cmd_decode(config: PipelineConfig) -> list[Path]:
    preds = _read_stage(config, "preds", io.preds_from_dict)
    _stage_dir(config, "segments", create=True)
    out = []
    for i, p in enumerate(preds):
        if p.grid != config.grid:
            raise io.SchemaError(_stage_path(config, "preds", i), "grid",
                                 "prediction grid shape disagrees with the config grid")
        path = _stage_path(config, "segments", i)
        io.save_json(path, io.segments_to_dict(decode_one(p)))
        out.append(path)
    return out


def cmd_cluster(config: PipelineConfig, method: str = "embedding") -> list[Path]:
    segment_lists = _read_stage(config, "segments", io.segments_from_dict)
    _stage_dir(config, "lanes", create=True)
    out = []
    for i, segments in enumerate(segment_lists):
        path = _stage_path(config, "lanes", i)
        io.save_json(path, io.lanes_to_dict(cluster_one(segments, config, method)))
        out.append(path)
    return out


def cmd_eval(config: PipelineConfig) -> EvalReport:
    lanes_lists = _read_stage(config, "lanes", io.lanes_from_dict)
    scenes = _read_stage(config, "scenes", io.scene_from_dict)
    if len(lanes_lists) != len(scenes):
        raise io.SchemaError(Path(config.output_dir), "<dir>",
                             f"{len(lanes_lists)} lane files vs {len(scenes)} scenes")
    preds, pred_ids, gts, gt_ids = [], [], [], []
    for i, (lanes, scene) in enumerate(zip(lanes_lists, scenes)):
        for curve, conf in lanes:
            preds.append((curve, conf))
            pred_ids.append(i)
        for curve in scene_curves(scene):
            gts.append(curve)
            gt_ids.append(i)
    report = evaluate(preds, gts, config.eval, pred_scene_ids=pred_ids, gt_scene_ids=gt_ids)
    _write_report(config, report)
    return report


def _write_report(config: PipelineConfig, report: EvalReport) -> None:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(io.report_to_csv(report))
    io.save_json(out / "report.json", report.to_dict())


def cmd_loss(config: PipelineConfig, grad_check: bool = False,
             grad_samples: int = 64) -> str:
    """Per-scene loss terms as CSV, optionally with a gradient-check summary."""
    targets = _read_stage(config, "targets", io.targets_from_dict)
    preds = _read_stage(config, "preds", io.preds_from_dict)
    if len(targets) != len(preds):
        raise io.SchemaError(Path(config.output_dir), "<dir>",
                             f"{len(targets)} target files vs {len(preds)} prediction files")
    lines = ["scene,score,angle,offsets,pull,push,total"]
    for i, (tgt, prd) in enumerate(zip(targets, preds)):
        if tgt.grid != prd.grid or tgt.bins != prd.bins:
            raise io.SchemaError(_stage_path(config, "preds", i), "grid",
                                 "prediction and target grids disagree")
        tile = total_tile_loss(prd, tgt)
        emb = embedding_loss(prd.embedding, tgt.lane_id, config.embedding)
        c = {**tile.components, **emb.components}
        total = tile.value + emb.value
        lines.append(f"{i},{c['score']!r},{c['angle']!r},{c['offsets']!r},"
                     f"{c['pull']!r},{c['push']!r},{total!r}")
    if grad_check and targets:
        tgt, prd = targets[0], preds[0]

        def tile_fn(inputs):
            probe = TilePredictionGrid(
                grid=prd.grid, bins=prd.bins, embedding=prd.embedding,
                **{k: inputs[k] for k in ("score_logit", "lateral_offset", "height_offset",
                                          "bin_logits", "bin_residuals")})
            return total_tile_loss(probe, tgt)

        tile_rep = finite_diff_check(
            tile_fn,
            {k: getattr(prd, k) for k in ("score_logit", "lateral_offset", "height_offset",
                                          "bin_logits", "bin_residuals")},
            sample=grad_samples)
        emb_rep = finite_diff_check(
            lambda inp: embedding_loss(inp["embedding"], tgt.lane_id, config.embedding),
            {"embedding": prd.embedding}, sample=grad_samples)
        lines.append(f"grad_check,total_tile,max_rel_error,{tile_rep.max_rel_error!r}")
        lines.append(f"grad_check,embedding,max_rel_error,{emb_rep.max_rel_error!r}")
    csv = "\n".join(lines) + "\n"
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "loss.csv").write_text(csv)
    return csv


def cmd_pipeline(config: PipelineConfig, method: str = "embedding",
                 jobs: int = 1) -> EvalReport:
    """Run all stages, writing every intermediate file, report and SVG plots."""
    report, results = run_pipeline(config, method=method, jobs=jobs)
    for stage in _DIRS:
        _stage_dir(config, stage, create=True)
    plots = Path(config.output_dir) / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    for r in results:
        io.save_json(_stage_path(config, "scenes", r.index), io.scene_to_dict(r.scene))
        io.save_json(_stage_path(config, "targets", r.index), io.targets_to_dict(r.targets))
        io.save_json(_stage_path(config, "preds", r.index), io.preds_to_dict(r.preds))
        io.save_json(_stage_path(config, "segments", r.index), io.segments_to_dict(r.segments))
        io.save_json(_stage_path(config, "lanes", r.index), io.lanes_to_dict(r.lanes))
        gt = scene_curves(r.scene)
        pred_curves = [c for c, _ in r.lanes]
        (plots / f"scene_{r.index:05d}.svg").write_text(
            scene_svg(gt, pred_curves, config.grid))
        (plots / f"scores_{r.index:05d}.svg").write_text(
            heatmap_svg(r.preds.score(), config.grid))
    _write_report(config, report)
    return report
