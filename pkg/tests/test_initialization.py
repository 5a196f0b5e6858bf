import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deformcal.exceptions import (
    CheiralityError,
    DegenerateConfigurationError,
    IllConditionedError,
    InsufficientDataError,
)
from deformcal.geometry import Intrinsics, Pose, project, rotation_matrix
from deformcal.initialization import (
    Homography,
    estimate_homography,
    intrinsics_from_homographies,
    pose_from_homography,
)
from deformcal.target import TargetSpec


def plane_homography(intr: Intrinsics, pose: Pose) -> Homography:
    R = rotation_matrix(pose.rotation)
    return Homography(intr.pinhole_matrix @ np.column_stack([R[:, 0], R[:, 1], pose.translation]))


def varied_poses():
    tilts = [(0.3, 0.1), (-0.25, 0.2), (0.1, -0.35), (0.4, 0.25), (-0.15, -0.2), (0.0, 0.45)]
    return [
        Pose(rotation=np.array([rx, ry, 0.15 * k]), translation=np.array([0.05 * k - 0.1, 0.04, 1.2 + 0.2 * k]))
        for k, (rx, ry) in enumerate(tilts)
    ]


def board_xy(spec: TargetSpec) -> np.ndarray:
    return spec.grid()[:, :2]


@settings(max_examples=25)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_homography_recovered_exactly_from_exact_points(seed):
    gen = np.random.default_rng(seed)
    pinhole = Intrinsics(1250.0, 1245.0, 640.3, 479.1)
    pose = Pose(
        rotation=np.array([gen.uniform(-0.5, 0.5), gen.uniform(-0.5, 0.5), gen.uniform(-np.pi, np.pi)]),
        translation=np.array([gen.uniform(-0.2, 0.2), gen.uniform(-0.2, 0.2), gen.uniform(0.8, 2.5)]),
    )
    truth = plane_homography(pinhole, pose)
    xy = board_xy(TargetSpec(9, 6, 0.08))
    est = estimate_homography(xy, truth.apply(xy))
    np.testing.assert_allclose(est.matrix, truth.matrix, atol=1e-9)
    assert est.transfer_rmse < 1e-8


def test_homography_rejects_too_few_points():
    with pytest.raises(InsufficientDataError):
        estimate_homography(np.zeros((3, 2)), np.zeros((3, 2)))


def test_homography_rejects_collinear_points():
    xy = np.column_stack([np.linspace(0, 1, 8), np.linspace(0, 2, 8)])
    px = xy * 100.0 + 50.0
    with pytest.raises(DegenerateConfigurationError):
        estimate_homography(xy, px)


def test_transfer_rmse_invariant_under_rigid_image_motion(board, pinhole, rng):
    pose = Pose(rotation=np.array([0.3, -0.2, 0.4]), translation=np.array([0.0, 0.05, 1.5]))
    xy = board_xy(board)
    pixels = plane_homography(pinhole, pose).apply(xy) + rng.normal(scale=0.5, size=(xy.shape[0], 2))
    base = estimate_homography(xy, pixels).transfer_rmse
    phi = 0.7
    rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    moved = pixels @ rot.T + np.array([37.0, -11.0])
    assert estimate_homography(xy, moved).transfer_rmse == pytest.approx(base, abs=1e-9)


def test_intrinsics_recovered_from_varied_views(board, pinhole):
    xy = board_xy(board)
    hs = [
        estimate_homography(xy, plane_homography(pinhole, pose).apply(xy))
        for pose in varied_poses()
    ]
    est = intrinsics_from_homographies(hs)
    for got, want in [(est.fx, pinhole.fx), (est.fy, pinhole.fy), (est.ppx, pinhole.ppx), (est.ppy, pinhole.ppy)]:
        assert got == pytest.approx(want, rel=1e-6)


def test_intrinsics_require_three_views(board, pinhole):
    xy = board_xy(board)
    hs = [estimate_homography(xy, plane_homography(pinhole, pose).apply(xy)) for pose in varied_poses()[:2]]
    with pytest.raises(InsufficientDataError):
        intrinsics_from_homographies(hs)


def test_intrinsics_reject_degenerate_view_set(pinhole):
    # Identical fronto-parallel views leave the conic system rank deficient.
    pose = Pose(rotation=np.zeros(3), translation=np.array([0.0, 0.0, 1.0]))
    hs = [plane_homography(pinhole, pose)] * 4
    with pytest.raises(IllConditionedError) as err:
        intrinsics_from_homographies(hs)
    assert err.value.condition is not None and err.value.condition > 1e8


def test_pose_decomposition_matches_projection(board, pinhole):
    xy = board_xy(board)
    for pose in varied_poses():
        h = plane_homography(pinhole, pose)
        est = pose_from_homography(h, pinhole, board_xy=xy)
        np.testing.assert_allclose(est.rotation, pose.rotation, atol=1e-8)
        np.testing.assert_allclose(est.translation, pose.translation, atol=1e-8)
        board3 = np.column_stack([xy, np.zeros(xy.shape[0])])
        uv = project(est.transform(board3), pinhole)
        np.testing.assert_allclose(uv, h.apply(xy), atol=1e-6)


def test_pose_decomposition_without_points_checks_origin_depth(pinhole):
    pose = Pose(rotation=np.array([0.2, -0.1, 0.05]), translation=np.array([0.1, -0.05, 1.3]))
    est = pose_from_homography(plane_homography(pinhole, pose), pinhole)
    np.testing.assert_allclose(est.translation, pose.translation, atol=1e-8)


def test_pose_decomposition_rejects_plane_behind_camera(board, pinhole):
    R = rotation_matrix(np.array([np.pi / 2, 0.0, 0.0]))
    h = Homography(pinhole.pinhole_matrix @ np.column_stack([R[:, 0], R[:, 1], np.array([0.2, 0.0, 0.0])]))
    with pytest.raises(CheiralityError):
        pose_from_homography(h, pinhole, board_xy=board_xy(board))
    with pytest.raises(CheiralityError):
        pose_from_homography(h, pinhole)
