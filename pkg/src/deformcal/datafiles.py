"""Versioned JSON file formats for datasets, ground truth, scenario configs,
and calibration reports, plus a CSV consolidation for method comparison.

Every file carries a schema tag and a units block (meters, pixels, radians).
Serialization is deterministic: stable key order, two-space indentation, a
trailing newline, and no timestamps, so identical content is byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .dataset import Dataset, Frame
from .exceptions import DataError
from .geometry import Intrinsics, Pose
from .synth import DeformationRegime, GroundTruth, ScenarioConfig
from .target import ParaboloidCoeffs, StaticCorrection, TargetSpec

DATASET_SCHEMA = "deformcal/dataset/v1"
GROUNDTRUTH_SCHEMA = "deformcal/groundtruth/v1"
SCENARIO_SCHEMA = "deformcal/scenario/v1"
REPORT_SCHEMA = "deformcal/report/v1"

UNITS = {"length": "m", "image": "px", "angle": "rad"}

METHOD_ORDER = ("standard", "static", "dynamic", "full")


def _dump(obj: dict) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _write(path, obj: dict) -> None:
    Path(path).write_text(_dump(obj), encoding="utf-8")


def _read(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}")
    if not isinstance(obj, dict):
        raise DataError(f"{path}: top level must be an object")
    return obj


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise DataError(f"missing required field '{where}.{key}'" if where else
                        f"missing required field '{key}'")
    return obj[key]


def _check_schema(obj: dict, expected: str, path) -> None:
    schema = _require(obj, "schema", "")
    if schema != expected:
        raise DataError(f"{path}: expected schema {expected!r}, found {schema!r}")


def _floats(values) -> list[float]:
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


def _target_to_json(spec: TargetSpec) -> dict:
    return {"rows": spec.rows, "cols": spec.cols, "spacing": spec.spacing}


def _target_from_json(obj: dict, where: str) -> TargetSpec:
    return TargetSpec(
        rows=int(_require(obj, "rows", where)),
        cols=int(_require(obj, "cols", where)),
        spacing=float(_require(obj, "spacing", where)),
    )


def _intrinsics_to_json(intr: Intrinsics) -> dict:
    return {
        "fx": intr.fx, "fy": intr.fy, "ppx": intr.ppx, "ppy": intr.ppy,
        "k1": intr.k1, "k2": intr.k2, "k3": intr.k3,
    }


def _intrinsics_from_json(obj: dict, where: str) -> Intrinsics:
    return Intrinsics(*(float(_require(obj, k, where))
                        for k in ("fx", "fy", "ppx", "ppy", "k1", "k2", "k3")))


def _pose_to_json(pose: Pose) -> dict:
    return {"rotation": _floats(pose.rotation), "translation": _floats(pose.translation)}


def _pose_from_json(obj: dict, where: str) -> Pose:
    return Pose(
        np.array(_require(obj, "rotation", where), dtype=float),
        np.array(_require(obj, "translation", where), dtype=float),
    )


def save_dataset(path, dataset: Dataset, spec: TargetSpec) -> None:
    frames = []
    for frame in dataset.frames:
        observations = [
            {"n": int(n), "m": int(m), "u": float(u), "v": float(v)}
            for (n, m), (u, v) in zip(frame.corners, frame.pixels)
        ]
        frames.append({"frame_id": int(frame.frame_id), "observations": observations})
    obj = {
        "schema": DATASET_SCHEMA,
        "units": UNITS,
        "target": _target_to_json(spec),
        "camera_id": dataset.camera_id,
        "frames": frames,
    }
    _write(path, obj)


def load_dataset(path) -> tuple[Dataset, TargetSpec]:
    obj = _read(path)
    _check_schema(obj, DATASET_SCHEMA, path)
    spec = _target_from_json(_require(obj, "target", ""), "target")
    frames = []
    for k, fobj in enumerate(_require(obj, "frames", "")):
        where = f"frames[{k}]"
        observations = _require(fobj, "observations", where)
        corners = np.array(
            [[int(_require(o, "n", where)), int(_require(o, "m", where))] for o in observations],
            dtype=int,
        ).reshape(len(observations), 2)
        pixels = np.array(
            [[float(_require(o, "u", where)), float(_require(o, "v", where))]
             for o in observations],
            dtype=float,
        ).reshape(len(observations), 2)
        frames.append(Frame(int(_require(fobj, "frame_id", where)), corners, pixels))
    camera_id = obj.get("camera_id")
    dataset = Dataset(tuple(frames), camera_id=camera_id)
    try:
        dataset.validate(spec)
    except DataError as exc:
        raise DataError(f"{path}: {exc}")
    return dataset, spec


def save_ground_truth(path, truth: GroundTruth, spec: TargetSpec) -> None:
    static = None
    if truth.static_correction is not None:
        static = {
            "offsets": [_floats(row) for row in np.asarray(truth.static_correction.offsets)],
            "fixed_indices": sorted(truth.static_correction.mask),
        }
    paraboloids = None
    max_dz = None
    if truth.paraboloids is not None:
        paraboloids = [_floats(p.as_array()) for p in truth.paraboloids]
        max_dz = [p.max_offset(spec) for p in truth.paraboloids]
    obj = {
        "schema": GROUNDTRUTH_SCHEMA,
        "units": UNITS,
        "target": _target_to_json(spec),
        "intrinsics": _intrinsics_to_json(truth.intrinsics),
        "image_size": [int(truth.image_size[0]), int(truth.image_size[1])],
        "poses": [_pose_to_json(p) for p in truth.poses],
        "static_correction": static,
        "paraboloids": paraboloids,
        "max_abs_deformation": max_dz,
        "relative_poses": (
            None if truth.relative_poses is None
            else [_pose_to_json(p) for p in truth.relative_poses]
        ),
    }
    _write(path, obj)


def load_ground_truth(path) -> tuple[GroundTruth, TargetSpec]:
    obj = _read(path)
    _check_schema(obj, GROUNDTRUTH_SCHEMA, path)
    spec = _target_from_json(_require(obj, "target", ""), "target")
    static = None
    sobj = obj.get("static_correction")
    if sobj is not None:
        static = StaticCorrection(
            np.array(_require(sobj, "offsets", "static_correction"), dtype=float),
            frozenset(int(i) for i in _require(sobj, "fixed_indices", "static_correction")),
        )
    paraboloids = None
    if obj.get("paraboloids") is not None:
        paraboloids = tuple(ParaboloidCoeffs.from_array(p) for p in obj["paraboloids"])
    rel = None
    if obj.get("relative_poses") is not None:
        rel = tuple(_pose_from_json(p, f"relative_poses[{i}]")
                    for i, p in enumerate(obj["relative_poses"]))
    size = _require(obj, "image_size", "")
    truth = GroundTruth(
        intrinsics=_intrinsics_from_json(_require(obj, "intrinsics", ""), "intrinsics"),
        poses=tuple(_pose_from_json(p, f"poses[{i}]")
                    for i, p in enumerate(_require(obj, "poses", ""))),
        static_correction=static,
        paraboloids=paraboloids,
        image_size=(int(size[0]), int(size[1])),
        relative_poses=rel,
    )
    return truth, spec


def save_scenario(path, config: ScenarioConfig,
                  relative_poses: tuple[Pose, ...] | None = None) -> None:
    regime = config.deformation
    obj = {
        "schema": SCENARIO_SCHEMA,
        "units": UNITS,
        "target": _target_to_json(config.spec),
        "intrinsics": _intrinsics_to_json(config.intrinsics),
        "n_frames": config.n_frames,
        "image_size": [int(config.image_size[0]), int(config.image_size[1])],
        "deformation": {
            "kind": regime.kind,
            "static_amplitude": regime.static_amplitude,
            "dynamic_amplitude": regime.dynamic_amplitude,
            "dynamic_min": regime.dynamic_min,
        },
        "noise_px": config.noise_px,
        "seed": config.seed,
        "distance_range": list(config.distance_range),
        "max_tilt": config.max_tilt,
        "center_box_fraction": config.center_box_fraction,
        "min_corner_fraction": config.min_corner_fraction,
        "max_pose_attempts": config.max_pose_attempts,
        "relative_poses": (
            None if relative_poses is None
            else [_pose_to_json(p) for p in relative_poses]
        ),
    }
    _write(path, obj)


def load_scenario(path) -> tuple[ScenarioConfig, tuple[Pose, ...] | None]:
    obj = _read(path)
    _check_schema(obj, SCENARIO_SCHEMA, path)
    dobj = obj.get("deformation") or {"kind": "none"}
    try:
        regime = DeformationRegime(
            kind=str(_require(dobj, "kind", "deformation")),
            static_amplitude=float(dobj.get("static_amplitude", 0.0)),
            dynamic_amplitude=float(dobj.get("dynamic_amplitude", 0.0)),
            dynamic_min=float(dobj.get("dynamic_min", 0.0)),
        )
        size = _require(obj, "image_size", "")
        config = ScenarioConfig(
            spec=_target_from_json(_require(obj, "target", ""), "target"),
            intrinsics=_intrinsics_from_json(_require(obj, "intrinsics", ""), "intrinsics"),
            n_frames=int(_require(obj, "n_frames", "")),
            image_size=(int(size[0]), int(size[1])),
            deformation=regime,
            noise_px=float(obj.get("noise_px", 0.0)),
            seed=int(obj.get("seed", 0)),
            distance_range=tuple(obj.get("distance_range", (0.5, 3.0))),
            max_tilt=float(obj.get("max_tilt", math.pi / 4.0)),
            center_box_fraction=float(obj.get("center_box_fraction", 0.8)),
            min_corner_fraction=float(obj.get("min_corner_fraction", 1.0)),
            max_pose_attempts=int(obj.get("max_pose_attempts", 1000)),
        )
    except ValueError as exc:
        raise DataError(f"{path}: {exc}")
    rel = None
    if obj.get("relative_poses") is not None:
        rel = tuple(_pose_from_json(p, f"relative_poses[{i}]")
                    for i, p in enumerate(obj["relative_poses"]))
    return config, rel


def make_run_row(
    run: int,
    *,
    subset: list[int] | None = None,
    status: str | None = None,
    rmse_train: float | None = None,
    rmse_test: float | None = None,
    mapping_error: float | None = None,
    intrinsics: Intrinsics | None = None,
    max_abs_deformation: list[float] | None = None,
    error: str | None = None,
) -> dict:
    return {
        "run": run,
        "subset": None if subset is None else [int(i) for i in subset],
        "status": status,
        "rmse_train": None if rmse_train is None else float(rmse_train),
        "rmse_test": None if rmse_test is None else float(rmse_test),
        "mapping_error": None if mapping_error is None else float(mapping_error),
        "intrinsics": None if intrinsics is None else _intrinsics_to_json(intrinsics),
        "max_abs_deformation": (
            None if max_abs_deformation is None else [float(v) for v in max_abs_deformation]
        ),
        "error": error,
    }


def _mean_std(values: list[float]) -> dict | None:
    if not values:
        return None
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return {"mean": mean, "std": std, "n": len(values)}


def aggregate_runs(runs: list[dict]) -> dict:
    """Mean/std summaries recomputable from the per-run rows."""
    agg: dict[str, Any] = {"n_runs": len(runs),
                           "n_failed": sum(1 for r in runs if r.get("error") is not None)}
    for key in ("rmse_train", "rmse_test", "mapping_error"):
        agg[key] = _mean_std([r[key] for r in runs if r.get(key) is not None])
    deformation = [v for r in runs if r.get("max_abs_deformation") is not None
                   for v in r["max_abs_deformation"]]
    agg["max_abs_deformation"] = _mean_std(deformation)
    return agg


def make_report(method: str, dataset_label: str, runs: list[dict]) -> dict:
    if not method:
        raise ValueError("method label must be non-empty")
    return {
        "schema": REPORT_SCHEMA,
        "units": UNITS,
        "method": method,
        "dataset": dataset_label,
        "runs": runs,
        "aggregate": aggregate_runs(runs),
    }


def save_report(path, report: dict) -> None:
    _write(path, report)


def load_report(path) -> dict:
    obj = _read(path)
    _check_schema(obj, REPORT_SCHEMA, path)
    for key in ("method", "dataset", "runs", "aggregate"):
        _require(obj, key, "")
    return obj


_CSV_COLUMNS = (
    "dataset", "method", "n_runs", "n_failed",
    "rmse_train_mean", "rmse_train_std",
    "rmse_test_mean", "rmse_test_std",
    "mapping_error_mean", "mapping_error_std",
    "max_abs_deformation_mean", "max_abs_deformation_std",
)


def consolidate_reports(reports: list[dict]) -> str:
    """One CSV row per (dataset, method), methods in fixed comparison order."""
    rows = []
    for report in reports:
        agg = report["aggregate"]
        row: dict[str, Any] = {
            "dataset": report["dataset"],
            "method": report["method"],
            "n_runs": agg["n_runs"],
            "n_failed": agg["n_failed"],
        }
        for key in ("rmse_train", "rmse_test", "mapping_error", "max_abs_deformation"):
            stats = agg.get(key)
            row[f"{key}_mean"] = "" if stats is None else repr(stats["mean"])
            row[f"{key}_std"] = "" if stats is None else repr(stats["std"])
        rows.append(row)
    def row_key(row: dict) -> tuple:
        name = row["method"]
        if name in METHOD_ORDER:
            return (row["dataset"], 0, METHOD_ORDER.index(name), "")
        return (row["dataset"], 1, 0, name)

    rows.sort(key=row_key)
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=_CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return out.getvalue()
