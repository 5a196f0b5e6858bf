import json

import numpy as np
import pytest

from deformcal.datafiles import (
    METHOD_ORDER,
    aggregate_runs,
    consolidate_reports,
    load_dataset,
    load_ground_truth,
    load_report,
    load_scenario,
    make_report,
    make_run_row,
    save_dataset,
    save_ground_truth,
    save_report,
    save_scenario,
)
from deformcal.exceptions import DataError
from deformcal.geometry import Intrinsics, Pose
from deformcal.synth import DeformationRegime, ScenarioConfig, generate_scenario
from deformcal.target import TargetSpec

BOARD = TargetSpec(rows=9, cols=6, spacing=0.08)
INTR = Intrinsics(1250.0, 1245.0, 640.3, 479.1, -0.28, 0.12, -0.02)


def small_scenario(seed=60, deformation=DeformationRegime.full(3e-4, 2e-3), noise=0.2):
    return generate_scenario(
        ScenarioConfig(
            spec=BOARD,
            intrinsics=INTR,
            n_frames=4,
            image_size=(1280, 960),
            deformation=deformation,
            noise_px=noise,
            seed=seed,
        )
    )


def test_dataset_roundtrip_is_byte_stable(tmp_path):
    dataset, _ = small_scenario()
    path = tmp_path / "data.json"
    save_dataset(path, dataset, BOARD)
    loaded, spec = load_dataset(path)
    assert spec == BOARD
    assert loaded.frame_ids == dataset.frame_ids
    for a, b in zip(loaded.frames, dataset.frames):
        np.testing.assert_array_equal(a.corners, b.corners)
        np.testing.assert_array_equal(a.pixels, b.pixels)
    again = tmp_path / "again.json"
    save_dataset(again, loaded, spec)
    assert again.read_bytes() == path.read_bytes()


def test_dataset_schema_is_versioned(tmp_path):
    dataset, _ = small_scenario()
    path = tmp_path / "data.json"
    save_dataset(path, dataset, BOARD)
    obj = json.loads(path.read_text())
    assert obj["schema"] == "deformcal/dataset/v1"
    assert obj["units"]["length"] == "m"


def test_wrong_schema_rejected(tmp_path):
    dataset, _ = small_scenario()
    path = tmp_path / "data.json"
    save_dataset(path, dataset, BOARD)
    obj = json.loads(path.read_text())
    obj["schema"] = "deformcal/report/v1"
    path.write_text(json.dumps(obj))
    with pytest.raises(DataError):
        load_dataset(path)


def test_missing_field_error_names_the_field(tmp_path):
    dataset, _ = small_scenario()
    path = tmp_path / "data.json"
    save_dataset(path, dataset, BOARD)
    obj = json.loads(path.read_text())
    del obj["target"]["spacing"]
    path.write_text(json.dumps(obj))
    with pytest.raises(DataError, match="target.spacing"):
        load_dataset(path)


def test_loading_validates_observations(tmp_path):
    dataset, _ = small_scenario()
    path = tmp_path / "data.json"
    save_dataset(path, dataset, BOARD)
    obj = json.loads(path.read_text())
    obj["frames"][0]["observations"][0]["n"] = 99
    path.write_text(json.dumps(obj))
    with pytest.raises(DataError, match=str(path)):
        load_dataset(path)


def test_corrupt_json_raises_data_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(DataError):
        load_dataset(path)


def test_ground_truth_roundtrip(tmp_path):
    _, truth = small_scenario()
    path = tmp_path / "truth.json"
    save_ground_truth(path, truth, BOARD)
    loaded, spec = load_ground_truth(path)
    assert spec == BOARD
    assert loaded.intrinsics == truth.intrinsics
    for a, b in zip(loaded.poses, truth.poses):
        np.testing.assert_array_equal(a.rotation, b.rotation)
        np.testing.assert_array_equal(a.translation, b.translation)
    np.testing.assert_array_equal(
        loaded.static_correction.offsets, truth.static_correction.offsets
    )
    for pa, pb in zip(loaded.paraboloids, truth.paraboloids):
        np.testing.assert_array_equal(pa.as_array(), pb.as_array())
    again = tmp_path / "again.json"
    save_ground_truth(again, loaded, spec)
    assert again.read_bytes() == path.read_bytes()


def test_scenario_roundtrip_with_rig(tmp_path):
    config = ScenarioConfig(
        spec=BOARD,
        intrinsics=INTR,
        n_frames=7,
        image_size=(1280, 960),
        deformation=DeformationRegime.dynamic(2e-3, minimum=5e-4),
        noise_px=0.1,
        seed=3,
        distance_range=(0.6, 1.8),
        max_tilt=0.5,
        center_box_fraction=0.7,
        min_corner_fraction=0.9,
    )
    rel = (Pose(rotation=np.array([0.0, 0.1, 0.0]), translation=np.array([-0.25, 0.0, 0.01])),)
    path = tmp_path / "scenario.json"
    save_scenario(path, config, rel)
    loaded, loaded_rel = load_scenario(path)
    assert loaded == config
    np.testing.assert_array_equal(loaded_rel[0].rotation, rel[0].rotation)
    again = tmp_path / "again.json"
    save_scenario(again, loaded, loaded_rel)
    assert again.read_bytes() == path.read_bytes()


def test_scenario_missing_required_field(tmp_path):
    config = ScenarioConfig(
        spec=BOARD,
        intrinsics=INTR,
        n_frames=3,
        image_size=(640, 480),
        deformation=DeformationRegime.none(),
    )
    path = tmp_path / "scenario.json"
    save_scenario(path, config)
    obj = json.loads(path.read_text())
    del obj["n_frames"]
    path.write_text(json.dumps(obj))
    with pytest.raises(DataError, match="n_frames"):
        load_scenario(path)


def test_aggregate_mean_and_std():
    runs = [
        make_run_row(0, status="converged", rmse_train=1.0, rmse_test=2.0),
        make_run_row(1, status="converged", rmse_train=3.0),
        make_run_row(2, status=None, error="diverged"),
    ]
    agg = aggregate_runs(runs)
    assert agg["n_runs"] == 3
    assert agg["n_failed"] == 1
    assert agg["rmse_train"]["mean"] == pytest.approx(2.0)
    assert agg["rmse_train"]["std"] == pytest.approx(np.std([1.0, 3.0], ddof=1))
    assert agg["rmse_test"]["std"] == 0.0
    assert agg["mapping_error"] is None


def test_report_roundtrip_and_method_validation(tmp_path):
    runs = [make_run_row(0, status="converged", rmse_train=0.5, intrinsics=INTR)]
    report = make_report("static", "bench", runs)
    path = tmp_path / "report.json"
    save_report(path, report)
    loaded = load_report(path)
    assert loaded["method"] == "static"
    assert loaded["runs"][0]["intrinsics"]["fx"] == INTR.fx
    again = tmp_path / "again.json"
    save_report(again, loaded)
    assert again.read_bytes() == path.read_bytes()
    with pytest.raises(ValueError):
        make_report("", "bench", runs)


def test_consolidated_csv_orders_methods():
    reports = [
        make_report(m, "bench", [make_run_row(0, status="converged", rmse_train=r)])
        for m, r in [("full", 0.1), ("standard", 0.4), ("dynamic", 0.2), ("static", 0.3)]
    ]
    csv_text = consolidate_reports(reports)
    lines = csv_text.strip().split("\n")
    methods = [line.split(",")[1] for line in lines[1:]]
    assert methods == list(METHOD_ORDER)
    assert repr(0.4) in csv_text


def test_consolidated_csv_is_deterministic():
    reports = [
        make_report("standard", "bench", [make_run_row(0, status="converged", rmse_train=1 / 3)])
    ]
    assert consolidate_reports(reports) == consolidate_reports(reports)
    assert repr(1 / 3) in consolidate_reports(reports)
