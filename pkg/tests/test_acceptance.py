"""End-to-end checks on frozen synthetic scenarios.

Each test pins one externally meaningful guarantee of the package; the
terminal summary prints one PASS/FAIL line per test. Scenario seeds and
tolerances are fixed so reruns are bit-for-bit comparable.
"""

from itertools import product

import numpy as np
import pytest

from deformcal.cli import main
from deformcal.dataset import Dataset, Frame
from deformcal.datafiles import save_scenario
from deformcal.geometry import Intrinsics, Pose
from deformcal.metrics import (
    MappingErrorConfig,
    mapping_error,
    test_error as heldout_error,
    training_rmse,
)
from deformcal.solver import (
    CalibrationProblem,
    CalibrationResult,
    ConvergenceStatus,
    SolverConfig,
    calibrate,
    calibrate_multicamera,
)
from deformcal.synth import (
    DeformationRegime,
    ScenarioConfig,
    generate_rig_scenario,
    generate_scenario,
    sample_subsets,
)
from deformcal.target import DeformationModel, TargetSpec

BOARD = TargetSpec(rows=9, cols=6, spacing=0.08)
TRUE_INTR = Intrinsics(1250.0, 1245.0, 640.3, 479.1, -0.28, 0.12, -0.02)
PINHOLE = Intrinsics(1250.0, 1245.0, 640.3, 479.1)
IMAGE = (1280, 960)


def scenario(n_frames, deformation, noise_px, seed, intrinsics=TRUE_INTR, **kw):
    return generate_scenario(
        ScenarioConfig(
            spec=BOARD,
            intrinsics=intrinsics,
            n_frames=n_frames,
            image_size=IMAGE,
            deformation=deformation,
            noise_px=noise_px,
            seed=seed,
            **kw,
        )
    )


def deviation(est: Intrinsics, ref: Intrinsics) -> float:
    """Largest componentwise deviation, relative for large components and
    absolute for near-zero ones (distortion coefficients)."""
    de, dr = est.as_array(), ref.as_array()
    return float(np.max(np.abs(de - dr) / np.maximum(np.abs(dr), 1.0)))


def test_01_noiseless_identifiability():
    dataset, truth = scenario(25, DeformationRegime.none(), 0.0, seed=10, intrinsics=PINHOLE)
    result = calibrate(dataset, BOARD, DeformationModel.STANDARD)
    assert result.status is ConvergenceStatus.CONVERGED
    assert deviation(result.intrinsics, truth.intrinsics) < 1e-6
    assert result.rmse < 1e-6


def test_02_jacobian_matches_finite_differences():
    small_board = TargetSpec(rows=3, cols=3, spacing=0.1)
    small_intr = Intrinsics(900.0, 880.0, 320.0, 240.0, -0.2, 0.05, -0.01)
    regimes = {
        DeformationModel.STANDARD: DeformationRegime.none(),
        DeformationModel.STATIC: DeformationRegime.static(5e-4),
        DeformationModel.DYNAMIC: DeformationRegime.dynamic(2e-3),
        DeformationModel.FULL: DeformationRegime.full(3e-4, 2e-3),
    }
    worst = 0.0
    for model, regime in regimes.items():
        for i in range(20):
            dataset, truth = generate_scenario(
                ScenarioConfig(
                    spec=small_board,
                    intrinsics=small_intr,
                    n_frames=3,
                    image_size=(640, 480),
                    deformation=regime,
                    noise_px=0.2,
                    seed=1000 + i,
                )
            )
            problem = CalibrationProblem(dataset, small_board, model)
            x = problem.pack_start(
                problem.full_vector(
                    truth.intrinsics,
                    truth.poses,
                    static=truth.static_correction,
                    paraboloids=truth.paraboloids,
                )
            )
            analytic = problem.jacobian(x).toarray()
            numeric = np.empty_like(analytic)
            for j in range(x.size):
                h = 1e-6 * max(1.0, abs(x[j]))
                step = np.zeros_like(x)
                step[j] = h
                numeric[:, j] = (problem.residuals(x + step) - problem.residuals(x - step)) / (2 * h)
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / (1.0 + np.abs(numeric)))))
    assert worst < 1e-5


def test_03_gauge_choice_invariance():
    dataset, _ = scenario(25, DeformationRegime.static(5e-4), 0.1, seed=50)
    anchor_sets = [(0, 5, 45), (2, 13, 49), (7, 29, 42), (1, 18, 52)]
    costs = []
    for anchors in anchor_sets:
        result = calibrate(dataset, BOARD, DeformationModel.STATIC, anchors=anchors)
        assert result.status is ConvergenceStatus.CONVERGED
        costs.append(result.final_cost)
    costs = np.array(costs)
    assert (costs.max() - costs.min()) / costs.max() < 1e-9


def test_04_dynamic_deformation_recovery():
    dataset, truth = scenario(25, DeformationRegime.dynamic(0.003, minimum=0.001), 0.0, seed=40)
    peaks = [coeffs.max_offset(BOARD) for coeffs in truth.paraboloids]
    assert min(peaks) >= 0.001 and max(peaks) <= 0.003
    result = calibrate(dataset, BOARD, DeformationModel.DYNAMIC)
    assert result.status is ConvergenceStatus.CONVERGED
    for est, ref in zip(result.paraboloids, truth.paraboloids):
        rel = np.linalg.norm(est.as_array() - ref.as_array()) / np.linalg.norm(ref.as_array())
        assert rel < 0.05
    assert deviation(result.intrinsics, truth.intrinsics) < 1e-5


def test_05_training_rmse_ordering():
    dataset, _ = scenario(
        60, DeformationRegime.full(3e-4, 3e-3, 5e-4), 0.1, seed=70, distance_range=(0.4, 1.2)
    )
    subsets = sample_subsets(dataset, n_subsets=50, subset_size=25, seed=71)
    models = (
        DeformationModel.STANDARD,
        DeformationModel.STATIC,
        DeformationModel.DYNAMIC,
        DeformationModel.FULL,
    )
    rmse = {model: [] for model in models}
    for indices in subsets:
        part = dataset.subset(indices)
        for model in models:
            rmse[model].append(training_rmse(calibrate(part, BOARD, model)))
    series = [np.array(rmse[model]) for model in models]
    means = [s.mean() for s in series]
    assert means[0] > means[1] > means[2] >= means[3]
    for upper, lower in zip(series, series[1:]):
        gap = upper - lower
        standard_error = gap.std(ddof=1) / np.sqrt(gap.size)
        assert gap.mean() > standard_error


@pytest.fixture(scope="module")
def discrimination_setup():
    calib_data, truth = scenario(
        40,
        DeformationRegime.dynamic(0.004, minimum=0.002),
        0.05,
        seed=64,
        distance_range=(0.4, 1.2),
    )
    reference, _ = scenario(
        30,
        DeformationRegime.none(),
        0.05,
        seed=65,
        distance_range=(0.35, 1.0),
        max_tilt=np.pi / 3,
        center_box_fraction=1.0,
        min_corner_fraction=0.4,
    )
    standard = calibrate(calib_data, BOARD, DeformationModel.STANDARD)
    dynamic = calibrate(calib_data, BOARD, DeformationModel.DYNAMIC)
    return truth, reference, standard, dynamic


def test_06_test_error_discrimination(discrimination_setup):
    _, reference, standard, dynamic = discrimination_setup
    err_standard = heldout_error(standard.intrinsics, reference, BOARD)
    err_dynamic = heldout_error(dynamic.intrinsics, reference, BOARD)
    assert err_dynamic <= err_standard / 2
    assert abs(err_dynamic - 0.05) <= 0.25 * 0.05


def test_07_mapping_error_discrimination(discrimination_setup):
    truth, _, standard, dynamic = discrimination_setup
    config = MappingErrorConfig(width=IMAGE[0], height=IMAGE[1])
    map_standard = mapping_error(truth.intrinsics, standard.intrinsics, config).rmse
    map_dynamic = mapping_error(truth.intrinsics, dynamic.intrinsics, config).rmse
    assert map_dynamic <= map_standard / 2
    assert mapping_error(truth.intrinsics, truth.intrinsics, config).rmse == 0.0


def test_08_noise_floor_recovery():
    dataset, truth = scenario(25, DeformationRegime.none(), 0.1, seed=8)
    assert dataset.n_observations >= 20 * 54
    err = heldout_error(truth.intrinsics, dataset, BOARD)
    assert abs(err - 0.1) <= 0.015


def test_09_nested_model_costs():
    sigmas = (0.0, 0.05, 0.1, 0.3)
    regimes = (
        DeformationRegime.none(),
        DeformationRegime.static(3e-4),
        DeformationRegime.static_inplane(3e-4),
        DeformationRegime.dynamic(2e-3),
        DeformationRegime.full(3e-4, 2e-3),
    )
    for k, (sigma, regime) in enumerate(product(sigmas, regimes)):
        dataset, _ = scenario(12, regime, sigma, seed=900 + k)
        cost = {
            model: calibrate(dataset, BOARD, model).final_cost
            for model in DeformationModel
        }
        slack = 1e-8 * cost[DeformationModel.STANDARD] + 1e-12
        assert cost[DeformationModel.STATIC] <= cost[DeformationModel.STANDARD] + slack
        assert cost[DeformationModel.DYNAMIC] <= cost[DeformationModel.STANDARD] + slack
        assert cost[DeformationModel.FULL] <= cost[DeformationModel.DYNAMIC] + slack


def test_10_multicamera_reduction_and_rig_recovery():
    dataset, _ = scenario(10, DeformationRegime.none(), 0.2, seed=80)
    single = calibrate(dataset, BOARD, DeformationModel.STANDARD)
    reduced = calibrate_multicamera([dataset], BOARD, DeformationModel.STANDARD)
    assert isinstance(reduced, CalibrationResult)
    assert np.array_equal(reduced.intrinsics.as_array(), single.intrinsics.as_array())
    assert reduced.final_cost == single.final_cost

    rig_config = ScenarioConfig(
        spec=BOARD,
        intrinsics=TRUE_INTR,
        n_frames=12,
        image_size=IMAGE,
        deformation=DeformationRegime.none(),
        noise_px=0.0,
        seed=81,
        distance_range=(0.8, 2.0),
        center_box_fraction=0.55,
        min_corner_fraction=0.85,
    )
    relative = Pose(
        rotation=np.array([0.02, 0.18, 0.01]), translation=np.array([-0.3, 0.01, 0.03])
    )
    datasets, truth = generate_rig_scenario(rig_config, [relative])
    result = calibrate_multicamera(datasets, BOARD, DeformationModel.STANDARD)
    assert result.status is ConvergenceStatus.CONVERGED
    est = result.relative_poses[1]
    assert np.linalg.norm(est.rotation - relative.rotation) < 1e-6
    assert np.linalg.norm(est.translation - relative.translation) < 1e-8


def test_11_byte_identical_reruns(tmp_path):
    config = ScenarioConfig(
        spec=BOARD,
        intrinsics=TRUE_INTR,
        n_frames=10,
        image_size=IMAGE,
        deformation=DeformationRegime.full(3e-4, 2e-3),
        noise_px=0.2,
        seed=17,
    )
    outputs = []
    for name in ("a", "b"):
        root = tmp_path / name
        root.mkdir()
        save_scenario(root / "scenario.json", config)
        assert main(["synth", str(root / "scenario.json"), "-o", str(root / "data.json")]) == 0
        assert main(["calibrate", str(root / "data.json"), "--method", "full",
                     "-o", str(root / "report.json")]) == 0
        outputs.append(root)
    first, second = outputs
    for name in ("data.json", "data.truth.json", "report.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_12_robust_kernel_outlier_rejection():
    clean, _ = scenario(25, DeformationRegime.none(), 0.0, seed=90)
    rng = np.random.default_rng(91)
    corrupted_frames = []
    for frame in clean.frames:
        pixels = np.array(frame.pixels)
        n_out = max(1, round(0.05 * pixels.shape[0]))
        hit = rng.choice(pixels.shape[0], size=n_out, replace=False)
        angles = rng.uniform(0.0, 2.0 * np.pi, size=n_out)
        pixels[hit] += 50.0 * np.column_stack([np.cos(angles), np.sin(angles)])
        corrupted_frames.append(Frame(frame_id=frame.frame_id, corners=frame.corners, pixels=pixels))
    corrupted = Dataset(frames=corrupted_frames, camera_id=clean.camera_id)

    baseline = calibrate(clean, BOARD, DeformationModel.STANDARD)
    robust = calibrate(
        corrupted,
        BOARD,
        DeformationModel.STANDARD,
        SolverConfig(kernel="cauchy", kernel_scale=0.15),
    )
    plain = calibrate(corrupted, BOARD, DeformationModel.STANDARD)
    robust_dev = deviation(robust.intrinsics, baseline.intrinsics)
    plain_dev = deviation(plain.intrinsics, baseline.intrinsics)
    assert robust_dev < 1e-3
    assert plain_dev > 1e-3
