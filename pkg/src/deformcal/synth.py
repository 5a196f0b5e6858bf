"""Synthetic scenario generation with known ground truth.

Poses are rejection-sampled: viewing distance and tilt uniform in their ranges,
the target centre back-projected through a pixel drawn from the central portion
of the image, and the draw repeated until enough corners project inside the
image. Per-frame bending coefficients are drawn from a unit box and rescaled so
the largest out-of-plane corner offset hits a magnitude drawn uniformly from
the configured range. Detection noise is i.i.d. Gaussian per pixel coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, Frame
from .exceptions import ScenarioError
from .geometry import (
    Intrinsics,
    Pose,
    invertible_radius,
    rotation_matrix,
    rotation_vector_from_matrix,
    unproject_at_depth,
    _project_core,
)
from .target import (
    DeformationModel,
    ParaboloidCoeffs,
    StaticCorrection,
    TargetSpec,
    gauge_mask,
    paraboloid_heights,
)


@dataclass(frozen=True)
class DeformationRegime:
    """Ground-truth deformation injected into a scenario.

    ``kind`` is one of none, static, static_inplane, dynamic, full. Static
    offsets are uniform within +-``static_amplitude`` per component (gauge
    anchors stay exactly zero). Dynamic bending rescales each frame's
    coefficients so the peak out-of-plane offset lands uniformly in
    [``dynamic_min``, ``dynamic_amplitude``] metres.
    """

    kind: str
    static_amplitude: float = 0.0
    dynamic_amplitude: float = 0.0
    dynamic_min: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "static", "static_inplane", "dynamic", "full"):
            raise ValueError(f"unknown deformation kind {self.kind!r}")
        if self.static_amplitude < 0 or self.dynamic_amplitude < 0 or self.dynamic_min < 0:
            raise ValueError("deformation amplitudes must be non-negative")
        if self.dynamic_min > self.dynamic_amplitude:
            raise ValueError("dynamic_min cannot exceed dynamic_amplitude")

    @property
    def has_static(self) -> bool:
        return self.kind in ("static", "static_inplane", "full")

    @property
    def has_dynamic(self) -> bool:
        return self.kind in ("dynamic", "full")

    @classmethod
    def none(cls) -> "DeformationRegime":
        return cls("none")

    @classmethod
    def static(cls, amplitude: float) -> "DeformationRegime":
        return cls("static", static_amplitude=amplitude)

    @classmethod
    def static_inplane(cls, amplitude: float) -> "DeformationRegime":
        return cls("static_inplane", static_amplitude=amplitude)

    @classmethod
    def dynamic(cls, amplitude: float, minimum: float = 0.0) -> "DeformationRegime":
        return cls("dynamic", dynamic_amplitude=amplitude, dynamic_min=minimum)

    @classmethod
    def full(
        cls, static_amplitude: float, dynamic_amplitude: float, dynamic_min: float = 0.0
    ) -> "DeformationRegime":
        return cls(
            "full",
            static_amplitude=static_amplitude,
            dynamic_amplitude=dynamic_amplitude,
            dynamic_min=dynamic_min,
        )


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to synthesize one calibration sequence."""

    spec: TargetSpec
    intrinsics: Intrinsics
    n_frames: int
    image_size: tuple[int, int]
    deformation: DeformationRegime = field(default_factory=DeformationRegime.none)
    noise_px: float = 0.0
    seed: int = 0
    distance_range: tuple[float, float] = (0.5, 3.0)
    max_tilt: float = math.pi / 4.0
    center_box_fraction: float = 0.8
    min_corner_fraction: float = 1.0
    max_pose_attempts: int = 1000

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be at least 1")
        if self.noise_px < 0:
            raise ValueError("noise_px must be non-negative")
        lo, hi = self.distance_range
        if not (0 < lo <= hi):
            raise ValueError("distance_range must satisfy 0 < lo <= hi")
        if not (0 < self.center_box_fraction <= 1):
            raise ValueError("center_box_fraction must be in (0, 1]")
        if not (0 <= self.min_corner_fraction <= 1):
            raise ValueError("min_corner_fraction must be in [0, 1]")
        if not (0 <= self.max_tilt < math.pi / 2):
            raise ValueError("max_tilt must be in [0, pi/2)")


@dataclass(frozen=True)
class GroundTruth:
    """True generating parameters of a synthetic dataset."""

    intrinsics: Intrinsics
    poses: tuple[Pose, ...]
    static_correction: StaticCorrection | None
    paraboloids: tuple[ParaboloidCoeffs, ...] | None
    image_size: tuple[int, int]
    relative_poses: tuple[Pose, ...] | None = None


def _corner_ids(spec: TargetSpec) -> np.ndarray:
    idx = np.arange(spec.n_corners)
    return np.column_stack([idx % spec.cols, idx // spec.cols])


def _sample_static(
    rng: np.random.Generator, spec: TargetSpec, regime: DeformationRegime
) -> StaticCorrection | None:
    if not regime.has_static:
        return None
    if regime.kind == "static":
        model = DeformationModel.STATIC
        dim = 3
    else:
        model = DeformationModel.FULL
        dim = 2
    offsets = rng.uniform(-regime.static_amplitude, regime.static_amplitude, (spec.n_corners, dim))
    mask = gauge_mask(model, spec)
    flat = offsets.ravel()
    flat[list(mask)] = 0.0
    return StaticCorrection(flat.reshape(spec.n_corners, dim), mask)


def _sample_paraboloid(
    rng: np.random.Generator, spec: TargetSpec, regime: DeformationRegime
) -> ParaboloidCoeffs:
    grid = spec.grid()
    while True:
        coeffs = rng.uniform(-1.0, 1.0, 3)
        peak = float(np.max(np.abs(paraboloid_heights(grid[:, 0], grid[:, 1], coeffs))))
        if peak > 1e-12:
            break
    target = rng.uniform(regime.dynamic_min, regime.dynamic_amplitude)
    return ParaboloidCoeffs.from_array(coeffs * (target / peak))


def _deformed_board(
    spec: TargetSpec,
    static: StaticCorrection | None,
    paraboloid: ParaboloidCoeffs | None,
) -> np.ndarray:
    pts = spec.grid()
    out = pts.copy()
    if static is not None:
        out += static.offsets_3d()
    if paraboloid is not None:
        out[:, 2] += paraboloid_heights(pts[:, 0], pts[:, 1], paraboloid.as_array())
    return out


def _visible(
    uv: np.ndarray,
    points_cam: np.ndarray,
    image_size: tuple[int, int],
    radius_limit: float,
) -> np.ndarray:
    """Corners that land inside the image through the injective part of the
    distortion. Far-off-axis rays folded back into frame by the distortion
    polynomial are not real detections and count as invisible."""
    w, h = image_size
    in_image = (
        (uv[:, 0] >= 0.0)
        & (uv[:, 0] <= w)
        & (uv[:, 1] >= 0.0)
        & (uv[:, 1] <= h)
        & np.all(np.isfinite(uv), axis=1)
    )
    z = points_cam[:, 2]
    front = z > 0.0
    radius = np.linalg.norm(points_cam[:, :2], axis=1) / np.where(front, z, 1.0)
    return in_image & front & (radius <= radius_limit)


def _sample_pose(
    rng: np.random.Generator,
    config: ScenarioConfig,
    board: np.ndarray,
    extra_boards: list[tuple[Pose, np.ndarray, Intrinsics]] | None = None,
) -> tuple[Pose, np.ndarray]:
    """Rejection-sample a pose whose projected corners satisfy the coverage
    constraint; returns the pose and the visibility mask of the first camera."""
    w, h = config.image_size
    margin_u = 0.5 * (1.0 - config.center_box_fraction) * w
    margin_v = 0.5 * (1.0 - config.center_box_fraction) * h
    intr = config.intrinsics
    radius_limit = _radius_limit(intr)
    for _ in range(config.max_pose_attempts):
        u = rng.uniform(margin_u, w - margin_u)
        v = rng.uniform(margin_v, h - margin_v)
        distance = rng.uniform(*config.distance_range)
        tilt = rng.uniform(0.0, config.max_tilt)
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        roll = rng.uniform(0.0, 2.0 * math.pi)
        direction = unproject_at_depth(np.array([u, v]), intr, 1.0)
        direction /= np.linalg.norm(direction)
        center = direction * distance
        axis = np.array([math.cos(azimuth), math.sin(azimuth), 0.0]) * tilt
        R = rotation_matrix(axis) @ rotation_matrix(np.array([0.0, 0.0, roll]))
        pose = Pose(rotation_vector_from_matrix(R), center)
        pc = pose.transform(board)
        if np.any(pc[:, 2] <= 0.0):
            continue
        uv, _ = _project_core(pc, intr.as_array())
        vis = _visible(uv, pc, config.image_size, radius_limit)
        if vis.mean() < config.min_corner_fraction or not vis.any():
            continue
        if extra_boards:
            ok = True
            for rel_pose, b2, intr2 in extra_boards:
                pc2 = rel_pose.transform(pose.transform(b2))
                if np.any(pc2[:, 2] <= 0.0):
                    ok = False
                    break
                uv2, _ = _project_core(pc2, intr2.as_array())
                vis2 = _visible(uv2, pc2, config.image_size, _radius_limit(intr2))
                if vis2.mean() < config.min_corner_fraction or not vis2.any():
                    ok = False
                    break
            if not ok:
                continue
        return pose, vis
    raise ScenarioError(
        f"no acceptable pose found in {config.max_pose_attempts} attempts; "
        "loosen the ranges or the coverage constraint"
    )


def _radius_limit(intr: Intrinsics) -> float:
    # Stay clear of the fold itself, where undistortion is ill-conditioned.
    return 0.95 * invertible_radius(intr)


def generate_scenario(config: ScenarioConfig) -> tuple[Dataset, GroundTruth]:
    """Synthesize one single-camera sequence and its generating parameters.

    The same seed reproduces the dataset bit for bit. Corners projecting
    outside the image are dropped from the frame's observations.
    """
    rng = np.random.default_rng(config.seed)
    spec = config.spec
    corner_ids = _corner_ids(spec)
    static = _sample_static(rng, spec, config.deformation)
    poses: list[Pose] = []
    paraboloids: list[ParaboloidCoeffs] = []
    frames: list[Frame] = []
    clean_uvs: list[np.ndarray] = []
    masks: list[np.ndarray] = []
    for j in range(config.n_frames):
        paraboloid = (
            _sample_paraboloid(rng, spec, config.deformation)
            if config.deformation.has_dynamic
            else None
        )
        board = _deformed_board(spec, static, paraboloid)
        pose, vis = _sample_pose(rng, config, board)
        uv, _ = _project_core(pose.transform(board), config.intrinsics.as_array())
        poses.append(pose)
        if paraboloid is not None:
            paraboloids.append(paraboloid)
        clean_uvs.append(uv[vis])
        masks.append(vis)
    total = sum(uv.shape[0] for uv in clean_uvs)
    noise = config.noise_px * rng.standard_normal((total, 2))
    offset = 0
    for j in range(config.n_frames):
        uv = clean_uvs[j]
        n = uv.shape[0]
        frames.append(Frame(j, corner_ids[masks[j]], uv + noise[offset : offset + n]))
        offset += n
    truth = GroundTruth(
        intrinsics=config.intrinsics,
        poses=tuple(poses),
        static_correction=static,
        paraboloids=tuple(paraboloids) if paraboloids else None,
        image_size=config.image_size,
    )
    return Dataset(tuple(frames)), truth


def generate_rig_scenario(
    config: ScenarioConfig, relative_poses
) -> tuple[tuple[Dataset, ...], GroundTruth]:
    """Synthesize a rigid multi-camera sequence sharing target poses.

    ``relative_poses`` maps the first camera's frame into each further camera;
    all cameras reuse the first camera's intrinsics and image size, and every
    frame must satisfy the coverage constraint in every camera.
    """
    relative_poses = tuple(relative_poses)
    rng = np.random.default_rng(config.seed)
    spec = config.spec
    corner_ids = _corner_ids(spec)
    static = _sample_static(rng, spec, config.deformation)
    n_cams = 1 + len(relative_poses)
    poses: list[Pose] = []
    paraboloids: list[ParaboloidCoeffs] = []
    per_cam_frames: list[list[Frame]] = [[] for _ in range(n_cams)]
    per_cam_clean: list[list[np.ndarray]] = [[] for _ in range(n_cams)]
    per_cam_mask: list[list[np.ndarray]] = [[] for _ in range(n_cams)]
    for j in range(config.n_frames):
        paraboloid = (
            _sample_paraboloid(rng, spec, config.deformation)
            if config.deformation.has_dynamic
            else None
        )
        board = _deformed_board(spec, static, paraboloid)
        extra = [(rel, board, config.intrinsics) for rel in relative_poses]
        pose, _ = _sample_pose(rng, config, board, extra_boards=extra)
        poses.append(pose)
        if paraboloid is not None:
            paraboloids.append(paraboloid)
        for cam in range(n_cams):
            full_pose = pose if cam == 0 else relative_poses[cam - 1].compose(pose)
            pc = full_pose.transform(board)
            uv, _ = _project_core(pc, config.intrinsics.as_array())
            vis = _visible(uv, pc, config.image_size, _radius_limit(config.intrinsics))
            per_cam_clean[cam].append(uv[vis])
            per_cam_mask[cam].append(vis)
    datasets = []
    for cam in range(n_cams):
        total = sum(uv.shape[0] for uv in per_cam_clean[cam])
        noise = config.noise_px * rng.standard_normal((total, 2))
        offset = 0
        for j in range(config.n_frames):
            uv = per_cam_clean[cam][j]
            n = uv.shape[0]
            per_cam_frames[cam].append(
                Frame(j, corner_ids[per_cam_mask[cam][j]], uv + noise[offset : offset + n])
            )
            offset += n
        datasets.append(Dataset(tuple(per_cam_frames[cam]), camera_id=f"cam{cam}"))
    truth = GroundTruth(
        intrinsics=config.intrinsics,
        poses=tuple(poses),
        static_correction=static,
        paraboloids=tuple(paraboloids) if paraboloids else None,
        image_size=config.image_size,
        relative_poses=relative_poses,
    )
    return tuple(datasets), truth


def perfect_observations(truth: GroundTruth, spec: TargetSpec) -> Dataset:
    """Noise-free observations reproduced from ground truth.

    Applies the same deformation and visibility rules as generation, so a
    noiseless scenario equals this output exactly.
    """
    corner_ids = _corner_ids(spec)
    frames = []
    for j, pose in enumerate(truth.poses):
        paraboloid = truth.paraboloids[j] if truth.paraboloids else None
        board = _deformed_board(spec, truth.static_correction, paraboloid)
        pc = pose.transform(board)
        uv, _ = _project_core(pc, truth.intrinsics.as_array())
        vis = _visible(uv, pc, truth.image_size, _radius_limit(truth.intrinsics))
        frames.append(Frame(j, corner_ids[vis], uv[vis]))
    return Dataset(tuple(frames))


def sample_subsets(
    dataset: Dataset, n_subsets: int, subset_size: int, seed: int
) -> list[np.ndarray]:
    """Random frame-index subsets, each drawn without replacement."""
    if subset_size > dataset.n_frames:
        raise ValueError(
            f"subset_size {subset_size} exceeds the {dataset.n_frames} available frames"
        )
    if n_subsets < 1 or subset_size < 1:
        raise ValueError("n_subsets and subset_size must be positive")
    rng = np.random.default_rng(seed)
    return [
        np.sort(rng.choice(dataset.n_frames, size=subset_size, replace=False))
        for _ in range(n_subsets)
    ]
