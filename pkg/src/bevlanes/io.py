"""File formats: canonical JSON for scenes/grids/segments/lanes, CSV reports.

All JSON is written canonically (sorted keys, minimal separators, trailing
newline) so that write -> read -> write round trips are byte-identical and
outputs are diffable. Readers validate structure and report the offending
file and field in a SchemaError rather than raising bare KeyErrors.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .clustering import Curve
from .codec import AngleBinSpec, LaneSegment, TilePredictionGrid, TileTargetGrid
from .evaluation import EvalReport
from .geometry import CameraRig, GridSpec, Lane3D
from .synth import Scene, SurfaceParams


class SchemaError(Exception):
    """A file does not match its declared format."""

    def __init__(self, path: str, field: str, message: str):
        self.path = str(path)
        self.field = field
        super().__init__(f"{path}: field '{field}': {message}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def save_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj))


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise SchemaError(path, "<file>", "file not found")
    except json.JSONDecodeError as e:
        raise SchemaError(path, "<file>", f"invalid JSON: {e}")


def _require(d: dict, key: str, path: str):
    if not isinstance(d, dict) or key not in d:
        raise SchemaError(path, key, "missing required field")
    return d[key]


def _build(factory, d: dict, path: str, field: str):
    try:
        return factory(d)
    except (KeyError, TypeError, ValueError) as e:
        key = e.args[0] if isinstance(e, KeyError) else str(e)
        raise SchemaError(path, f"{field}.{key}" if isinstance(e, KeyError) else field, str(e))


# ---------------------------------------------------------------------------
# Scenes


def scene_to_dict(scene: Scene) -> dict:
    return {
        "kind": "scene",
        "lanes": [{"lane_id": lane.lane_id, "points": lane.points.tolist()}
                  for lane in scene.lanes],
        "surface": scene.surface.to_dict(),
        "rig": scene.rig.to_dict(),
    }


def scene_from_dict(d: dict, path: str = "<scene>") -> Scene:
    if d.get("kind") != "scene":
        raise SchemaError(path, "kind", f"expected 'scene', got {d.get('kind')!r}")
    lanes = []
    for k, entry in enumerate(_require(d, "lanes", path)):
        pts = np.asarray(_require(entry, "points", path), dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise SchemaError(path, f"lanes[{k}].points", f"expected (N>=2, 3), got {pts.shape}")
        lanes.append(Lane3D(points=pts, lane_id=int(_require(entry, "lane_id", path))))
    surface = _build(SurfaceParams.from_dict, _require(d, "surface", path), path, "surface")
    rig = _build(CameraRig.from_dict, _require(d, "rig", path), path, "rig")
    return Scene(lanes=lanes, surface=surface, rig=rig)


# ---------------------------------------------------------------------------
# Grids: JSON header (grid, bins, field list with dtype/shape) + row-major payload


_TARGET_FIELDS = ("occupancy", "lateral_offset", "angle", "height_offset", "lane_id",
                  "bin_probs", "bin_residuals", "bin_mask")
_PRED_FIELDS = ("score_logit", "lateral_offset", "height_offset", "bin_logits",
                "bin_residuals", "embedding")


def _pack_fields(obj, names) -> dict:
    out = {}
    for name in names:
        arr = getattr(obj, name)
        out[name] = {"dtype": arr.dtype.str.lstrip("<>=|"), "shape": list(arr.shape),
                     "data": arr.reshape(-1).tolist()}
    return out


def _unpack_field(fields: dict, name: str, path: str) -> np.ndarray:
    entry = _require(fields, name, path)
    shape = tuple(_require(entry, "shape", path))
    data = _require(entry, "data", path)
    dtype = np.dtype(_require(entry, "dtype", path))
    arr = np.asarray(data, dtype=dtype)
    if arr.size != int(np.prod(shape)):
        raise SchemaError(path, f"fields.{name}.data",
                          f"payload length {arr.size} does not match shape {shape}")
    return arr.reshape(shape)


def targets_to_dict(targets: TileTargetGrid) -> dict:
    return {"kind": "target_grid", "grid": targets.grid.to_dict(),
            "bins": targets.bins.to_dict(), "fields": _pack_fields(targets, _TARGET_FIELDS)}


def targets_from_dict(d: dict, path: str = "<targets>") -> TileTargetGrid:
    if d.get("kind") != "target_grid":
        raise SchemaError(path, "kind", f"expected 'target_grid', got {d.get('kind')!r}")
    grid = _build(GridSpec.from_dict, _require(d, "grid", path), path, "grid")
    bins = _build(AngleBinSpec.from_dict, _require(d, "bins", path), path, "bins")
    fields = _require(d, "fields", path)
    arrays = {name: _unpack_field(fields, name, path) for name in _TARGET_FIELDS}
    occ = arrays["occupancy"]
    if not np.all((occ == 0.0) | (occ == 1.0)):
        raise SchemaError(path, "fields.occupancy.data", "occupancy must be 0 or 1")
    try:
        return TileTargetGrid(grid=grid, bins=bins, **arrays)
    except ValueError as e:
        raise SchemaError(path, "fields", str(e))


def preds_to_dict(preds: TilePredictionGrid) -> dict:
    return {"kind": "prediction_grid", "grid": preds.grid.to_dict(),
            "bins": preds.bins.to_dict(), "embedding_dim": preds.embedding_dim,
            "fields": _pack_fields(preds, _PRED_FIELDS)}


def preds_from_dict(d: dict, path: str = "<preds>") -> TilePredictionGrid:
    if d.get("kind") != "prediction_grid":
        raise SchemaError(path, "kind", f"expected 'prediction_grid', got {d.get('kind')!r}")
    grid = _build(GridSpec.from_dict, _require(d, "grid", path), path, "grid")
    bins = _build(AngleBinSpec.from_dict, _require(d, "bins", path), path, "bins")
    fields = _require(d, "fields", path)
    arrays = {name: _unpack_field(fields, name, path) for name in _PRED_FIELDS}
    dim = int(_require(d, "embedding_dim", path))
    if arrays["embedding"].shape[-1] != dim:
        raise SchemaError(path, "embedding_dim",
                          f"declared {dim}, payload has {arrays['embedding'].shape[-1]}")
    try:
        return TilePredictionGrid(grid=grid, bins=bins, **arrays)
    except ValueError as e:
        raise SchemaError(path, "fields", str(e))


# ---------------------------------------------------------------------------
# Segments and clustered lanes


def segments_to_dict(segments: list[LaneSegment]) -> dict:
    return {"kind": "segments", "segments": [{
        "midpoint": s.midpoint.tolist(),
        "direction": s.direction.tolist(),
        "endpoints": s.endpoints.tolist(),
        "score": s.score,
        "tile": list(s.tile),
        "embedding": s.embedding.tolist(),
        "degenerate": s.degenerate,
    } for s in segments]}


def segments_from_dict(d: dict, path: str = "<segments>") -> list[LaneSegment]:
    if d.get("kind") != "segments":
        raise SchemaError(path, "kind", f"expected 'segments', got {d.get('kind')!r}")
    out = []
    for k, entry in enumerate(_require(d, "segments", path)):
        try:
            out.append(LaneSegment(
                midpoint=np.asarray(entry["midpoint"], dtype=float),
                direction=np.asarray(entry["direction"], dtype=float),
                endpoints=np.asarray(entry["endpoints"], dtype=float),
                score=float(entry["score"]),
                tile=tuple(int(v) for v in entry["tile"]),
                embedding=np.asarray(entry["embedding"], dtype=float),
                degenerate=bool(entry["degenerate"]),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(path, f"segments[{k}]", str(e))
        if out[-1].midpoint.shape != (3,) or out[-1].endpoints.shape != (2, 3):
            raise SchemaError(path, f"segments[{k}]", "midpoint must be (3,), endpoints (2, 3)")
    return out


def lanes_to_dict(lanes: list) -> dict:
    """Serialize clustered lanes given as (Curve, confidence) pairs."""
    return {"kind": "lanes", "lanes": [{
        "points": curve.points.tolist(),
        "confidence": float(conf),
    } for curve, conf in lanes]}


def lanes_from_dict(d: dict, path: str = "<lanes>") -> list:
    if d.get("kind") != "lanes":
        raise SchemaError(path, "kind", f"expected 'lanes', got {d.get('kind')!r}")
    out = []
    for k, entry in enumerate(_require(d, "lanes", path)):
        pts = np.asarray(_require(entry, "points", path), dtype=float)
        conf = float(_require(entry, "confidence", path))
        if not 0.0 <= conf <= 1.0:
            raise SchemaError(path, f"lanes[{k}].confidence", f"{conf} outside [0, 1]")
        try:
            curve = Curve(points=pts)
        except ValueError as e:
            raise SchemaError(path, f"lanes[{k}].points", str(e))
        out.append((curve, conf))
    return out


# ---------------------------------------------------------------------------
# Reports


def report_to_csv(report: EvalReport) -> str:
    """Fixed-column CSV: one row per threshold, then summary rows."""
    lines = ["metric,key,value"]
    for t in sorted(report.ap_per_threshold):
        lines.append(f"ap,{t:g},{report.ap_per_threshold[t]!r}")
    lines.append(f"map,,{report.map_score!r}")
    lines.append(f"recall_at_iou,{report.operating_iou:g},{report.recall_at_reference!r}")
    for (lo, hi) in sorted(report.lateral_error):
        lines.append(f"lateral_error,{lo:g}-{hi:g},{report.lateral_error[(lo, hi)]!r}")
    if report.mean_abs_dz is not None:
        lines.append(f"mean_abs_dz,,{report.mean_abs_dz!r}")
    for key in ("n_gt", "n_pred", "n_matched"):
        lines.append(f"count,{key},{report.counts[key]}")
    if report.recall75_confidence is not None:
        lines.append(f"recall75_confidence,,{report.recall75_confidence!r}")
        for (lo, hi) in sorted(report.lateral_error_at_recall75 or {}):
            lines.append(
                f"lateral_error_at_recall75,{lo:g}-{hi:g},"
                f"{report.lateral_error_at_recall75[(lo, hi)]!r}")
    return "\n".join(lines) + "\n"
