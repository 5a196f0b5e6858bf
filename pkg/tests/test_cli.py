import json

import numpy as np
import pytest

from deformcal.cli import main
from deformcal.datafiles import load_report, save_dataset, save_ground_truth, save_scenario
from deformcal.geometry import Intrinsics, Pose
from deformcal.synth import DeformationRegime, GroundTruth, ScenarioConfig, perfect_observations
from deformcal.target import TargetSpec

BOARD = TargetSpec(rows=9, cols=6, spacing=0.08)
INTR = Intrinsics(1250.0, 1245.0, 640.3, 479.1, -0.28, 0.12, -0.02)
IMAGE = (1280, 960)


def write_scenario(path, **kw):
    base = dict(
        spec=BOARD,
        intrinsics=INTR,
        n_frames=6,
        image_size=IMAGE,
        deformation=DeformationRegime.none(),
        noise_px=0.0,
        seed=4,
    )
    base.update(kw)
    save_scenario(path, ScenarioConfig(**base))
    return path


def test_synth_is_byte_deterministic(tmp_path):
    cfg = write_scenario(tmp_path / "scenario.json", noise_px=0.3)
    assert main(["synth", str(cfg), "-o", str(tmp_path / "a.json")]) == 0
    assert main(["synth", str(cfg), "-o", str(tmp_path / "b.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.truth.json").read_bytes() == (tmp_path / "b.truth.json").read_bytes()


def test_synth_rig_writes_one_file_per_camera(tmp_path):
    cfg = tmp_path / "scenario.json"
    config = ScenarioConfig(
        spec=BOARD,
        intrinsics=INTR,
        n_frames=5,
        image_size=IMAGE,
        deformation=DeformationRegime.none(),
        seed=14,
        distance_range=(0.8, 2.0),
        center_box_fraction=0.55,
    )
    rel = (Pose(rotation=np.array([0.0, 0.15, 0.0]), translation=np.array([-0.3, 0.0, 0.02])),)
    save_scenario(cfg, config, rel)
    assert main(["synth", str(cfg), "-o", str(tmp_path / "rig.json")]) == 0
    assert (tmp_path / "rig.cam0.json").exists()
    assert (tmp_path / "rig.cam1.json").exists()
    assert (tmp_path / "rig.truth.json").exists()


def test_synth_missing_field_is_a_data_error(tmp_path):
    cfg = write_scenario(tmp_path / "scenario.json")
    obj = json.loads(cfg.read_text())
    del obj["n_frames"]
    cfg.write_text(json.dumps(obj))
    assert main(["synth", str(cfg), "-o", str(tmp_path / "out.json")]) == 2


def test_synth_infeasible_scenario_is_a_config_error(tmp_path):
    cfg = write_scenario(
        tmp_path / "scenario.json",
        distance_range=(0.05, 0.05),
        min_corner_fraction=1.0,
        max_pose_attempts=10,
    )
    assert main(["synth", str(cfg), "-o", str(tmp_path / "out.json")]) == 1


def test_calibrate_single_run(tmp_path):
    cfg = write_scenario(tmp_path / "scenario.json")
    main(["synth", str(cfg), "-o", str(tmp_path / "data.json")])
    out = tmp_path / "report.json"
    assert main(["calibrate", str(tmp_path / "data.json"), "--method", "standard", "-o", str(out)]) == 0
    report = load_report(out)
    assert report["method"] == "standard"
    run = report["runs"][0]
    assert run["status"] == "converged"
    assert run["rmse_train"] < 1e-6
    assert run["intrinsics"]["fx"] == pytest.approx(INTR.fx, rel=1e-6)


def test_calibrate_degenerate_dataset_exits_3_but_writes_report(tmp_path):
    pose = Pose(rotation=np.zeros(3), translation=np.array([0.0, 0.0, 1.2]))
    truth = GroundTruth(
        intrinsics=INTR,
        poses=(pose, pose, pose, pose),
        static_correction=None,
        paraboloids=None,
        image_size=IMAGE,
    )
    data = tmp_path / "degenerate.json"
    save_dataset(data, perfect_observations(truth, BOARD), BOARD)
    out = tmp_path / "report.json"
    assert main(["calibrate", str(data), "--method", "standard", "-o", str(out)]) == 3
    report = load_report(out)
    assert report["runs"][0]["status"] == "failed"
    assert report["runs"][0]["error"]


def test_calibrate_missing_dataset_exits_2(tmp_path):
    assert main(["calibrate", str(tmp_path / "nope.json"), "--method", "standard",
                 "-o", str(tmp_path / "r.json")]) == 2


def test_calibrate_unknown_method_exits_1(tmp_path):
    assert main(["calibrate", "x.json", "--method", "affine", "-o", "r.json"]) == 1


def test_unknown_command_exits_1():
    assert main(["frobnicate"]) == 1


def test_subset_flags_must_come_together(tmp_path):
    cfg = write_scenario(tmp_path / "scenario.json")
    main(["synth", str(cfg), "-o", str(tmp_path / "data.json")])
    assert main(["calibrate", str(tmp_path / "data.json"), "--method", "standard",
                 "-o", str(tmp_path / "r.json"), "--subsets", "3"]) == 2


def test_subset_reports_identical_serial_and_parallel(tmp_path):
    cfg = write_scenario(tmp_path / "scenario.json", n_frames=8, noise_px=0.2)
    main(["synth", str(cfg), "-o", str(tmp_path / "data.json")])
    serial = tmp_path / "serial.json"
    parallel = tmp_path / "parallel.json"
    base = ["calibrate", str(tmp_path / "data.json"), "--method", "standard",
            "--subsets", "4", "--subset-size", "5", "--seed", "2"]
    assert main(base + ["-o", str(serial), "--workers", "1"]) == 0
    assert main(base + ["-o", str(parallel), "--workers", "2"]) == 0
    assert serial.read_bytes() == parallel.read_bytes()
    report = load_report(serial)
    assert len(report["runs"]) == 4
    assert all(len(r["subset"]) == 5 for r in report["runs"])


def test_workers_env_must_be_an_integer(tmp_path, monkeypatch):
    cfg = write_scenario(tmp_path / "scenario.json", n_frames=6)
    main(["synth", str(cfg), "-o", str(tmp_path / "data.json")])
    monkeypatch.setenv("DEFORMCAL_WORKERS", "many")
    assert main(["calibrate", str(tmp_path / "data.json"), "--method", "standard",
                 "-o", str(tmp_path / "r.json"), "--subsets", "2", "--subset-size", "4"]) == 2


def test_evaluate_requires_a_reference(tmp_path):
    cfg = write_scenario(tmp_path / "scenario.json")
    main(["synth", str(cfg), "-o", str(tmp_path / "data.json")])
    main(["calibrate", str(tmp_path / "data.json"), "--method", "standard",
          "-o", str(tmp_path / "report.json")])
    assert main(["evaluate", str(tmp_path / "report.json"),
                 "-o", str(tmp_path / "scored.json")]) == 2


def test_evaluate_adds_test_and_mapping_error(tmp_path):
    cfg = write_scenario(tmp_path / "scenario.json")
    main(["synth", str(cfg), "-o", str(tmp_path / "data.json")])
    ref_cfg = write_scenario(tmp_path / "ref_scenario.json", seed=5, noise_px=0.05)
    main(["synth", str(ref_cfg), "-o", str(tmp_path / "ref.json"),
          "--truth", str(tmp_path / "ref.truth.json")])
    main(["calibrate", str(tmp_path / "data.json"), "--method", "standard",
          "-o", str(tmp_path / "report.json")])
    out = tmp_path / "scored.json"
    assert main(["evaluate", str(tmp_path / "report.json"),
                 "--reference", str(tmp_path / "ref.json"),
                 "--reference-intrinsics", str(tmp_path / "ref.truth.json"),
                 "-o", str(out)]) == 0
    report = load_report(out)
    run = report["runs"][0]
    assert run["rmse_test"] == pytest.approx(0.05, rel=0.3)
    assert run["mapping_error"] < 0.1
    assert report["aggregate"]["rmse_test"] is not None


def test_evaluate_scores_ground_truth_directly(tmp_path):
    truth_path = tmp_path / "truth.json"
    cfg = write_scenario(tmp_path / "scenario.json")
    main(["synth", str(cfg), "-o", str(tmp_path / "data.json"), "--truth", str(truth_path)])
    out = tmp_path / "self.json"
    assert main(["evaluate", str(truth_path),
                 "--reference-intrinsics", str(truth_path), "-o", str(out)]) == 0
    report = load_report(out)
    assert report["method"] == "reference"
    assert report["runs"][0]["mapping_error"] == 0.0


def test_compare_consolidates_reports(tmp_path, capsys):
    cfg = write_scenario(tmp_path / "scenario.json", noise_px=0.2)
    main(["synth", str(cfg), "-o", str(tmp_path / "data.json")])
    for method in ("standard", "static"):
        main(["calibrate", str(tmp_path / "data.json"), "--method", method,
              "-o", str(tmp_path / f"{method}.json")])
    out = tmp_path / "table.csv"
    assert main(["compare", str(tmp_path / "static.json"), str(tmp_path / "standard.json"),
                 "-o", str(out)]) == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0].startswith("dataset,method,")
    assert [line.split(",")[1] for line in lines[1:]] == ["standard", "static"]
    assert main(["compare", str(tmp_path / "standard.json")]) == 0
    assert "standard" in capsys.readouterr().out
