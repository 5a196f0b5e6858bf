"""Joint nonlinear refinement of intrinsics, target poses, and target deformation.

The packed parameter order is: intrinsics (7 per camera), relative camera poses
(6 each, first camera fixed to the identity and absent), target poses (6 per
frame), then the deformation block: static offsets corner-major, paraboloid
coefficients frame-major. Gauge-fixed and otherwise frozen scalars are removed
from the packed vector entirely.

Residuals are observed minus predicted pixels, stacked camera-major, then
frame-major in dataset order, then corner-minor, interleaving u and v.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .dataset import Dataset
from .exceptions import CalibrationError, IllConditionedError
from .geometry import (
    Intrinsics,
    Pose,
    canonical_rotation_vector,
    projection_derivatives,
    right_jacobians,
    rotation_matrices,
    skew,
    _project_core,
)
from .initialization import (
    estimate_homography,
    intrinsics_from_homographies,
    pose_from_homography,
)
from .target import (
    DeformationModel,
    ParaboloidCoeffs,
    StaticCorrection,
    TargetSpec,
    gauge_mask,
    paraboloid_heights,
)

_LAMBDA_CAP = 1e15
_RANK_RTOL = 1e-12


class ConvergenceStatus(enum.Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    DIVERGED = "diverged"
    RANK_DEFICIENT = "rank_deficient"


@dataclass(frozen=True)
class SolverConfig:
    """Levenberg-Marquardt settings.

    Damping is multiplicative on the normal-equation diagonal; it shrinks by
    ``lambda_down`` after an accepted step and grows by ``lambda_up`` after a
    rejected one. ``kernel`` is "none" or "cauchy" with ``kernel_scale`` pixels.
    """

    max_iterations: int = 200
    initial_lambda: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    cost_tolerance: float = 1e-12
    step_tolerance: float = 1e-10
    gradient_tolerance: float = 1e-10
    kernel: str = "none"
    kernel_scale: float = 1.0
    use_schur: bool = False
    check_rank: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        for name in ("initial_lambda", "lambda_up", "lambda_down",
                     "cost_tolerance", "step_tolerance", "gradient_tolerance"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.kernel not in ("none", "cauchy"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.kernel == "cauchy" and not self.kernel_scale > 0.0:
            raise ValueError("kernel_scale must be positive")


@dataclass
class CalibrationResult:
    """Estimates and diagnostics of a single-camera refinement."""

    intrinsics: Intrinsics
    poses: tuple[Pose, ...]
    frame_ids: tuple[int, ...]
    static_correction: StaticCorrection | None
    paraboloids: tuple[ParaboloidCoeffs, ...] | None
    final_cost: float
    cost_trace: np.ndarray
    rmse: float
    status: ConvergenceStatus
    residuals: np.ndarray
    n_iterations: int
    deficient_blocks: tuple[str, ...] = ()


@dataclass
class MultiCameraResult:
    """Estimates and diagnostics of a joint multi-camera refinement.

    ``relative_poses[0]`` is always the identity; target poses are expressed in
    the first camera's frame.
    """

    intrinsics: tuple[Intrinsics, ...]
    relative_poses: tuple[Pose, ...]
    target_poses: tuple[Pose, ...]
    frame_ids: tuple[int, ...]
    static_correction: StaticCorrection | None
    paraboloids: tuple[ParaboloidCoeffs, ...] | None
    final_cost: float
    cost_trace: np.ndarray
    rmse: float
    status: ConvergenceStatus
    residuals: np.ndarray
    n_iterations: int
    deficient_blocks: tuple[str, ...] = ()


class _Layout:
    """Offsets of the parameter blocks inside the full (unmasked) vector."""

    def __init__(self, n_cameras: int, n_frames: int, spec: TargetSpec, model: DeformationModel):
        self.n_cameras = n_cameras
        self.n_frames = n_frames
        self.static_dim = model.static_components
        self.has_dynamic = model.has_dynamic
        self.n_corners = spec.n_corners
        self.intr_start = 0
        self.rel_start = 7 * n_cameras
        self.tpose_start = self.rel_start + 6 * (n_cameras - 1)
        self.static_start = self.tpose_start + 6 * n_frames
        self.dyn_start = self.static_start + self.static_dim * self.n_corners
        self.n_total = self.dyn_start + (3 * n_frames if self.has_dynamic else 0)

    def intr_slice(self, cam: int) -> slice:
        return slice(7 * cam, 7 * cam + 7)

    def rel_slice(self, cam: int) -> slice:
        # Camera 0 carries no relative-pose parameters.
        base = self.rel_start + 6 * (cam - 1)
        return slice(base, base + 6)

    def tpose_slice(self, frame_pos: int) -> slice:
        base = self.tpose_start + 6 * frame_pos
        return slice(base, base + 6)

    def block_label(self, index: int, frame_ids: tuple[int, ...]) -> str:
        if index < self.rel_start:
            return f"intrinsics[camera {index // 7}]"
        if index < self.tpose_start:
            return f"relative_pose[camera {(index - self.rel_start) // 6 + 1}]"
        if index < self.static_start:
            pos = (index - self.tpose_start) // 6
            return f"target_pose[frame {frame_ids[pos]}]"
        if index < self.dyn_start:
            return f"static[corner {(index - self.static_start) // self.static_dim}]"
        pos = (index - self.dyn_start) // 3
        return f"paraboloid[frame {frame_ids[pos]}]"


class _JacobianBlock:
    __slots__ = ("obs", "comp")

    def __init__(self, obs: np.ndarray, comp: np.ndarray):
        self.obs = obs
        self.comp = comp


class CalibrationProblem:
    """Preprocessed observations plus the parameterization of one refinement.

    Accepts a single dataset or one per camera. The free-parameter mask removes
    gauge-fixed static components and, for reduced refinements, the intrinsics;
    ``fixed_mask`` can freeze further scalars of the full vector.
    """

    def __init__(
        self,
        datasets: Dataset | list[Dataset] | tuple[Dataset, ...],
        spec: TargetSpec,
        model: DeformationModel,
        config: SolverConfig | None = None,
        *,
        anchors: tuple[int, ...] | None = None,
        fix_intrinsics: bool = False,
        board_correction: StaticCorrection | np.ndarray | None = None,
        fixed_mask: np.ndarray | None = None,
    ):
        if isinstance(datasets, Dataset):
            datasets = (datasets,)
        self.datasets = tuple(datasets)
        if not self.datasets:
            raise ValueError("at least one dataset is required")
        self.spec = spec
        self.model = model
        self.config = config if config is not None else SolverConfig()
        self.fix_intrinsics = fix_intrinsics
        for ds in self.datasets:
            ds.validate(spec)

        n_cameras = len(self.datasets)
        if n_cameras == 1:
            self.frame_ids = self.datasets[0].frame_ids
        else:
            self.frame_ids = tuple(sorted({fid for ds in self.datasets for fid in ds.frame_ids}))
        frame_pos = {fid: i for i, fid in enumerate(self.frame_ids)}
        self.layout = _Layout(n_cameras, len(self.frame_ids), spec, model)

        grid = spec.grid()
        base = grid.copy()
        if board_correction is not None:
            if isinstance(board_correction, StaticCorrection):
                board_correction.validate(spec)
                base += board_correction.offsets_3d()
            else:
                base += np.asarray(board_correction, dtype=float)
        self._base_board = base
        self._grid_xy = grid[:, :2]

        cams, frames, corners, pixels = [], [], [], []
        for cam, ds in enumerate(self.datasets):
            for frame in ds.frames:
                flat = frame.corners[:, 1] * spec.cols + frame.corners[:, 0]
                cams.append(np.full(flat.size, cam))
                frames.append(np.full(flat.size, frame_pos[frame.frame_id]))
                corners.append(flat)
                pixels.append(frame.pixels)
        self._obs_cam = np.concatenate(cams)
        self._obs_frame = np.concatenate(frames)
        self._obs_corner = np.concatenate(corners)
        self._obs_uv = np.concatenate(pixels, axis=0)
        self._gx = self._grid_xy[self._obs_corner, 0]
        self._gy = self._grid_xy[self._obs_corner, 1]
        self.n_observations = self._obs_cam.size
        self.n_residuals = 2 * self.n_observations

        lay = self.layout
        free = np.ones(lay.n_total, dtype=bool)
        if fix_intrinsics:
            free[: lay.rel_start] = False
        self.anchors = None
        if model.static_components:
            mask = gauge_mask(model, spec, anchors)
            self.gauge = mask
            for idx in mask:
                free[lay.static_start + idx] = False
            from .target import default_anchors

            self.anchors = anchors if anchors is not None else default_anchors(model, spec)
        else:
            if anchors:
                raise ValueError(f"model {model.value} takes no anchor corners")
            self.gauge = frozenset()
        if fixed_mask is not None:
            fixed_mask = np.asarray(fixed_mask, dtype=bool)
            if fixed_mask.shape != (lay.n_total,):
                raise ValueError("fixed_mask must cover the full parameter vector")
            free &= ~fixed_mask
        self._free = free
        self._free_idx = np.flatnonzero(free)
        self._free_pos = np.full(lay.n_total, -1)
        self._free_pos[self._free_idx] = np.arange(self._free_idx.size)
        self.n_free = int(self._free_idx.size)
        self._fixed_full = np.zeros(lay.n_total)

        self._rot_blocks = self._collect_rotation_blocks()
        self._build_jacobian_pattern()

    # -- parameter packing -------------------------------------------------

    def pack(self, full: np.ndarray) -> np.ndarray:
        """Extract the free scalars of a full parameter vector."""
        full = np.asarray(full, dtype=float)
        if full.shape != (self.layout.n_total,):
            raise ValueError("full vector has the wrong length")
        return full[self._free].copy()

    def pack_start(self, full: np.ndarray) -> np.ndarray:
        """Like pack, but also records the values of the frozen scalars."""
        full = np.asarray(full, dtype=float)
        if full.shape != (self.layout.n_total,):
            raise ValueError("full vector has the wrong length")
        self._fixed_full = np.where(self._free, 0.0, full)
        return full[self._free].copy()

    def unpack(self, packed: np.ndarray) -> np.ndarray:
        packed = np.asarray(packed, dtype=float)
        if packed.shape != (self.n_free,):
            raise ValueError(f"expected {self.n_free} free parameters")
        full = self._fixed_full.copy()
        full[self._free] = packed
        return full

    def full_vector(
        self,
        intrinsics,
        target_poses,
        relative_poses=None,
        static: StaticCorrection | None = None,
        paraboloids=None,
    ) -> np.ndarray:
        """Assemble a full parameter vector from structured estimates."""
        lay = self.layout
        full = np.zeros(lay.n_total)
        if isinstance(intrinsics, Intrinsics):
            intrinsics = [intrinsics]
        if len(intrinsics) != lay.n_cameras:
            raise ValueError("one intrinsics set per camera required")
        for cam, intr in enumerate(intrinsics):
            full[lay.intr_slice(cam)] = intr.as_array()
        if lay.n_cameras > 1:
            if relative_poses is None or len(relative_poses) != lay.n_cameras - 1:
                raise ValueError("relative poses required for cameras beyond the first")
            for cam, pose in enumerate(relative_poses, start=1):
                full[lay.rel_slice(cam)] = pose.as_array()
        if len(target_poses) != lay.n_frames:
            raise ValueError("one target pose per frame required")
        for pos, pose in enumerate(target_poses):
            full[lay.tpose_slice(pos)] = pose.as_array()
        if lay.static_dim:
            if static is not None:
                static.validate(self.spec)
                if static.n_components != lay.static_dim:
                    raise ValueError("static correction has the wrong component count")
                full[lay.static_start : lay.dyn_start] = static.offsets.ravel()
        if lay.has_dynamic and paraboloids is not None:
            if len(paraboloids) != lay.n_frames:
                raise ValueError("one paraboloid per frame required")
            coeffs = np.concatenate([p.as_array() for p in paraboloids])
            full[lay.dyn_start :] = coeffs
        return full

    def _collect_rotation_blocks(self) -> list[np.ndarray]:
        blocks = []
        lay = self.layout
        starts = [lay.rel_slice(c).start for c in range(1, lay.n_cameras)]
        starts += [lay.tpose_slice(p).start for p in range(lay.n_frames)]
        for start in starts:
            pos = self._free_pos[start : start + 3]
            if np.all(pos >= 0):
                blocks.append(pos.copy())
        return blocks

    # -- evaluation --------------------------------------------------------

    def _unpack_blocks(self, full: np.ndarray):
        lay = self.layout
        intr = full[: lay.rel_start].reshape(lay.n_cameras, 7)
        rel_r = np.zeros((lay.n_cameras, 3))
        rel_t = np.zeros((lay.n_cameras, 3))
        if lay.n_cameras > 1:
            rel = full[lay.rel_start : lay.tpose_start].reshape(lay.n_cameras - 1, 6)
            rel_r[1:] = rel[:, :3]
            rel_t[1:] = rel[:, 3:]
        tp = full[lay.tpose_start : lay.static_start].reshape(lay.n_frames, 6)
        static3 = np.zeros((lay.n_corners, 3))
        if lay.static_dim:
            block = full[lay.static_start : lay.dyn_start].reshape(
                lay.n_corners, lay.static_dim
            )
            static3[:, : lay.static_dim] = block
        dyn = None
        if lay.has_dynamic:
            dyn = full[lay.dyn_start :].reshape(lay.n_frames, 3)
        return intr, rel_r, rel_t, tp[:, :3], tp[:, 3:], static3, dyn

    def _forward(self, full: np.ndarray, with_jacobian: bool):
        lay = self.layout
        intr, rel_r, rel_t, tp_r, tp_t, static3, dyn = self._unpack_blocks(full)
        Rt = rotation_matrices(tp_r)
        board = self._base_board[self._obs_corner] + static3[self._obs_corner]
        if dyn is not None:
            board[:, 2] += paraboloid_heights(self._gx, self._gy, dyn[self._obs_frame])
        Rt_obs = Rt[self._obs_frame]
        p1 = np.einsum("mij,mj->mi", Rt_obs, board) + tp_t[self._obs_frame]
        multicam = lay.n_cameras > 1
        if multicam:
            Rrel = rotation_matrices(rel_r)
            Rrel_obs = Rrel[self._obs_cam]
            pc = np.einsum("mij,mj->mi", Rrel_obs, p1) + rel_t[self._obs_cam]
            params = intr[self._obs_cam]
        else:
            pc = p1
            params = intr[0]
        if not with_jacobian:
            uv, _ = _project_core(pc, params)
            return (self._obs_uv - uv).ravel()

        uv, _, d_pt, d_par = projection_derivatives(pc, params)
        res = (self._obs_uv - uv).ravel()

        if multicam:
            d_p1 = np.matmul(d_pt, Rrel_obs)
        else:
            d_p1 = d_pt
        d_board = np.matmul(d_p1, Rt_obs)

        values = []
        if not self.fix_intrinsics:
            values.append(-d_par)
        Jr_t = right_jacobians(tp_r)[self._obs_frame]
        rot_part = np.matmul(d_p1, -np.matmul(np.matmul(Rt_obs, skew(board)), Jr_t))
        values.append(-np.concatenate([rot_part, d_p1], axis=2))
        if multicam:
            Jr_rel = right_jacobians(rel_r)[self._obs_cam]
            rel_rot = np.matmul(d_pt, -np.matmul(np.matmul(Rrel_obs, skew(p1)), Jr_rel))
            values.append(-np.concatenate([rel_rot, d_pt], axis=2))
        if lay.static_dim:
            values.append(-d_board[:, :, : lay.static_dim])
        if lay.has_dynamic:
            dz = d_board[:, :, 2]
            basis = np.stack(
                [self._gx * self._gx, self._gy * self._gy, self._gx * self._gy], axis=1
            )
            values.append(-dz[:, :, None] * basis[:, None, :])
        return res, values

    def residuals(self, packed: np.ndarray) -> np.ndarray:
        """Observed-minus-predicted pixel residuals, NaN where a point falls
        behind the camera."""
        return self._forward(self.unpack(packed), with_jacobian=False)

    def _build_jacobian_pattern(self):
        lay = self.layout
        M = self.n_observations
        obs_all = np.arange(M)
        blocks: list[_JacobianBlock] = []
        cols_parts: list[np.ndarray] = []

        def add_uniform(obs_idx, n_comp, col_full_fn):
            obs_e = np.repeat(obs_idx, n_comp)
            comp_e = np.tile(np.arange(n_comp), obs_idx.size)
            cols = col_full_fn(obs_e, comp_e)
            keep = self._free_pos[cols] >= 0
            blocks.append(_JacobianBlock(obs_e[keep], comp_e[keep]))
            cols_parts.append(self._free_pos[cols[keep]])

        if not self.fix_intrinsics:
            add_uniform(
                obs_all, 7, lambda o, c: lay.intr_start + 7 * self._obs_cam[o] + c
            )
        add_uniform(
            obs_all, 6, lambda o, c: lay.tpose_start + 6 * self._obs_frame[o] + c
        )
        if lay.n_cameras > 1:
            sel = np.flatnonzero(self._obs_cam > 0)
            add_uniform(
                sel, 6, lambda o, c: lay.rel_start + 6 * (self._obs_cam[o] - 1) + c
            )
        if lay.static_dim:
            dim = lay.static_dim
            comps = []
            for corner in range(lay.n_corners):
                free_comps = [
                    c
                    for c in range(dim)
                    if self._free_pos[lay.static_start + corner * dim + c] >= 0
                ]
                comps.append(np.array(free_comps, dtype=int))
            counts = np.array([c.size for c in comps])
            obs_counts = counts[self._obs_corner]
            obs_e = np.repeat(obs_all, obs_counts)
            comp_e = (
                np.concatenate([comps[c] for c in self._obs_corner])
                if M
                else np.empty(0, dtype=int)
            )
            cols = lay.static_start + self._obs_corner[obs_e] * dim + comp_e
            blocks.append(_JacobianBlock(obs_e, comp_e))
            cols_parts.append(self._free_pos[cols])
        if lay.has_dynamic:
            add_uniform(obs_all, 3, lambda o, c: lay.dyn_start + 3 * self._obs_frame[o] + c)

        self._jblocks = blocks
        rows, cols = [], []
        for blk, col in zip(blocks, cols_parts):
            rows.append(2 * blk.obs)
            rows.append(2 * blk.obs + 1)
            cols.append(col)
            cols.append(col)
        self._jac_rows = np.concatenate(rows) if rows else np.empty(0, dtype=int)
        self._jac_cols = np.concatenate(cols) if cols else np.empty(0, dtype=int)

    def _assemble(self, values: list[np.ndarray]) -> scipy.sparse.csr_matrix:
        data = []
        for blk, tensor in zip(self._jblocks, values):
            data.append(tensor[blk.obs, 0, blk.comp])
            data.append(tensor[blk.obs, 1, blk.comp])
        data = np.concatenate(data) if data else np.empty(0)
        return scipy.sparse.csr_matrix(
            (data, (self._jac_rows, self._jac_cols)),
            shape=(self.n_residuals, self.n_free),
        )

    def jacobian(self, packed: np.ndarray) -> scipy.sparse.csr_matrix:
        """Sparse derivative of the residuals with respect to the free parameters."""
        _, values = self._forward(self.unpack(packed), with_jacobian=True)
        return self._assemble(values)

    def residuals_and_jacobian(self, packed: np.ndarray):
        res, values = self._forward(self.unpack(packed), with_jacobian=True)
        return res, self._assemble(values)

    # -- results -----------------------------------------------------------

    def _canonicalize_rotations(self, packed: np.ndarray) -> np.ndarray:
        for pos in self._rot_blocks:
            r = packed[pos]
            if r @ r > math.pi**2:
                packed[pos] = canonical_rotation_vector(r)
        return packed

    def make_result(
        self,
        packed: np.ndarray,
        residuals: np.ndarray,
        final_cost: float,
        cost_trace,
        status: ConvergenceStatus,
        n_iterations: int,
        deficient_blocks: tuple[str, ...],
    ):
        lay = self.layout
        full = self.unpack(packed)
        intr_rows, _, _, _, _, _, dyn = self._unpack_blocks(full)
        try:
            intrinsics = tuple(Intrinsics.from_array(row) for row in intr_rows)
        except ValueError as exc:
            raise CalibrationError(f"optimizer left the valid intrinsics domain: {exc}") from exc
        rel_poses = [Pose.identity()]
        for cam in range(1, lay.n_cameras):
            rel_poses.append(Pose.from_array(full[lay.rel_slice(cam)]))
        target_poses = tuple(
            Pose.from_array(full[lay.tpose_slice(p)]) for p in range(lay.n_frames)
        )
        static = None
        if lay.static_dim:
            offsets = full[lay.static_start : lay.dyn_start].reshape(
                lay.n_corners, lay.static_dim
            )
            static = StaticCorrection(offsets, self.gauge)
        paraboloids = None
        if lay.has_dynamic:
            paraboloids = tuple(ParaboloidCoeffs.from_array(row) for row in dyn)
        rmse = float(np.sqrt(np.mean(residuals**2))) if residuals.size else float("nan")
        common = dict(
            frame_ids=self.frame_ids,
            static_correction=static,
            paraboloids=paraboloids,
            final_cost=final_cost,
            cost_trace=np.asarray(cost_trace, dtype=float),
            rmse=rmse,
            status=status,
            residuals=residuals,
            n_iterations=n_iterations,
            deficient_blocks=deficient_blocks,
        )
        if lay.n_cameras == 1:
            return CalibrationResult(
                intrinsics=intrinsics[0], poses=target_poses, **common
            )
        return MultiCameraResult(
            intrinsics=intrinsics,
            relative_poses=tuple(rel_poses),
            target_poses=target_poses,
            **common,
        )

    def block_label(self, free_col: int) -> str:
        return self.layout.block_label(int(self._free_idx[free_col]), self.frame_ids)


def _sum_sq(r: np.ndarray) -> float:
    return float(np.sum(r * r))


def _kernel_weights(r: np.ndarray, cfg: SolverConfig) -> np.ndarray | None:
    """Per-scalar reweighting from the Cauchy influence function, or None."""
    if cfg.kernel == "none":
        return None
    s2 = cfg.kernel_scale**2
    block = np.sum(r.reshape(-1, 2) ** 2, axis=1)
    return np.repeat(1.0 / (1.0 + block / s2), 2)


def _robust_cost(r: np.ndarray, cfg: SolverConfig) -> float:
    if cfg.kernel == "none":
        return _sum_sq(r)
    s2 = cfg.kernel_scale**2
    block = np.sum(r.reshape(-1, 2) ** 2, axis=1)
    return float(s2 * np.sum(np.log1p(block / s2)))


def _rank_report(problem: CalibrationProblem, J: scipy.sparse.csr_matrix) -> tuple[str, ...]:
    """Labels of parameter blocks spanning the normal-equation null space, if any."""
    A = (J.T @ J).toarray()
    diag = np.diag(A).copy()
    dead = diag <= 0.0
    labels: set[str] = set()
    for col in np.flatnonzero(dead):
        labels.add(problem.block_label(int(col)))
    diag[dead] = 1.0
    d = np.sqrt(diag)
    Ahat = A / np.outer(d, d)
    w, V = np.linalg.eigh(Ahat)
    lam_max = max(w[-1], 0.0)
    bad = np.flatnonzero(w < _RANK_RTOL * lam_max)
    for col in bad:
        v = np.abs(V[:, col])
        for idx in np.flatnonzero(v > 1e-3 * v.max()):
            labels.add(problem.block_label(int(idx)))
    if not labels:
        return ()
    return tuple(sorted(labels))


def _scale_rows(J: scipy.sparse.csr_matrix, sqrt_w: np.ndarray) -> scipy.sparse.csr_matrix:
    Jw = J.copy()
    row_of = np.repeat(np.arange(J.shape[0]), np.diff(J.indptr))
    Jw.data = Jw.data * sqrt_w[row_of]
    return Jw


def _solve_damped(
    A: np.ndarray,
    damp: np.ndarray,
    g: np.ndarray,
    lam: float,
    problem: CalibrationProblem,
) -> np.ndarray:
    """Solve (A + lam diag(damp)) delta = -g, optionally via a Schur complement
    over the target-pose blocks."""
    M = A + lam * np.diag(damp)
    if not problem.config.use_schur:
        c, low = scipy.linalg.cho_factor(M)
        return scipy.linalg.cho_solve((c, low), -g)

    lay = problem.layout
    pose_cols = []
    for p in range(lay.n_frames):
        pos = problem._free_pos[lay.tpose_slice(p)]
        if np.any(pos < 0):
            c, low = scipy.linalg.cho_factor(M)
            return scipy.linalg.cho_solve((c, low), -g)
        pose_cols.append(pos)
    P = np.concatenate(pose_cols)
    C = np.setdiff1d(np.arange(problem.n_free), P)
    frames = np.arange(lay.n_frames)
    Mpp = M[np.ix_(P, P)].reshape(lay.n_frames, 6, lay.n_frames, 6)[frames, :, frames, :]
    Mcp = M[np.ix_(C, P)]
    gP = g[P].reshape(lay.n_frames, 6)
    Mpp_inv = np.linalg.inv(Mpp)
    # Solve the reduced system over the non-pose parameters.
    W = Mcp.reshape(C.size, lay.n_frames, 6)
    WMppInv = np.einsum("cfg,fgh->cfh", W, Mpp_inv)
    S = M[np.ix_(C, C)] - np.einsum("cfh,dfh->cd", WMppInv, W)
    rhs = -g[C] + np.einsum("cfh,fh->c", WMppInv, gP)
    cS, low = scipy.linalg.cho_factor(S)
    dC = scipy.linalg.cho_solve((cS, low), rhs)
    rP = -gP - np.einsum("cfg,c->fg", W, dC)
    dP = np.einsum("fgh,fh->fg", Mpp_inv, rP)
    delta = np.empty(problem.n_free)
    delta[C] = dC
    delta[P] = dP.ravel()
    return delta


def solve_lm(problem: CalibrationProblem, initial_params: np.ndarray):
    """Levenberg-Marquardt refinement from packed initial parameters.

    Returns a CalibrationResult (one camera) or MultiCameraResult. The status
    reports rank deficiency detected at the starting point, divergence from an
    infeasible start, tolerance-based convergence, or iteration exhaustion.
    """
    cfg = problem.config
    x = np.asarray(initial_params, dtype=float).copy()
    if x.shape != (problem.n_free,):
        raise ValueError(f"expected {problem.n_free} free parameters")
    r = problem.residuals(x)
    if not np.all(np.isfinite(r)):
        return problem.make_result(
            x, r, float("nan"), [float("nan")], ConvergenceStatus.DIVERGED, 0, ()
        )
    cost = _robust_cost(r, cfg)
    w = _kernel_weights(r, cfg)
    trace = [cost]
    lam = cfg.initial_lambda
    status = ConvergenceStatus.MAX_ITER
    deficient: tuple[str, ...] = ()
    n_iter = 0

    for it in range(cfg.max_iterations):
        n_iter = it + 1
        r_eval, J = problem.residuals_and_jacobian(x)
        r = r_eval
        if it == 0 and cfg.check_rank:
            deficient = _rank_report(problem, J)
        if w is not None:
            sqrt_w = np.sqrt(w)
            Jw = _scale_rows(J, sqrt_w)
            rw = w * r
        else:
            Jw, rw = J, r
        g = Jw.T @ rw
        if np.max(np.abs(g)) <= cfg.gradient_tolerance:
            status = ConvergenceStatus.CONVERGED
            break
        A = (Jw.T @ Jw).toarray()
        damp = np.diag(A).copy()
        damp = np.maximum(damp, 1e-12 * max(float(damp.max(initial=0.0)), 1e-300))

        accepted = False
        while True:
            try:
                delta = _solve_damped(A, damp, g, lam, problem)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                lam *= cfg.lambda_up
                if lam > _LAMBDA_CAP:
                    break
                continue
            if np.linalg.norm(delta) <= cfg.step_tolerance * (
                np.linalg.norm(x) + cfg.step_tolerance
            ):
                status = ConvergenceStatus.CONVERGED
                break
            x_new = x + delta
            r_new = problem.residuals(x_new)
            cost_new = _robust_cost(r_new, cfg)
            if math.isfinite(cost_new) and cost_new < cost:
                small_drop = (cost - cost_new) <= cfg.cost_tolerance * cost
                x = problem._canonicalize_rotations(x_new)
                r = r_new
                cost = cost_new
                w = _kernel_weights(r, cfg)
                lam = max(lam / cfg.lambda_down, 1e-12)
                trace.append(cost)
                accepted = True
                if small_drop:
                    status = ConvergenceStatus.CONVERGED
                break
            lam *= cfg.lambda_up
            if lam > _LAMBDA_CAP:
                break
        if status is ConvergenceStatus.CONVERGED:
            break
        if not accepted:
            # Damping hit its cap without an acceptable step.
            break

    if deficient:
        status = ConvergenceStatus.RANK_DEFICIENT
    return problem.make_result(x, r, cost, trace, status, n_iter, deficient)


def _with_frame(exc: CalibrationError, frame_id: int) -> CalibrationError:
    if isinstance(exc, IllConditionedError):
        out = IllConditionedError(f"frame {frame_id}: {exc}", condition=exc.condition)
    else:
        out = exc.__class__(f"frame {frame_id}: {exc}")
    out.__cause__ = exc
    return out


def _frame_flat_corners(frame, spec: TargetSpec) -> np.ndarray:
    return frame.corners[:, 1] * spec.cols + frame.corners[:, 0]


def _initial_estimates(
    dataset: Dataset,
    spec: TargetSpec,
    initial_intrinsics: Intrinsics | None,
) -> tuple[Intrinsics, list[Pose]]:
    grid_xy = spec.grid()[:, :2]
    homographies = []
    for frame in dataset.frames:
        flat = _frame_flat_corners(frame, spec)
        try:
            homographies.append(estimate_homography(grid_xy[flat], frame.pixels))
        except CalibrationError as exc:
            raise _with_frame(exc, frame.frame_id)
    if initial_intrinsics is None:
        intr0 = intrinsics_from_homographies(homographies)
    else:
        intr0 = initial_intrinsics
    poses = []
    for frame, h in zip(dataset.frames, homographies):
        flat = _frame_flat_corners(frame, spec)
        try:
            poses.append(pose_from_homography(h, intr0, grid_xy[flat]))
        except CalibrationError as exc:
            raise _with_frame(exc, frame.frame_id)
    return intr0, poses


def calibrate(
    dataset: Dataset,
    spec: TargetSpec,
    model: DeformationModel,
    config: SolverConfig | None = None,
    *,
    anchors: tuple[int, ...] | None = None,
    initial_intrinsics: Intrinsics | None = None,
) -> CalibrationResult:
    """Full single-camera pipeline: homographies per frame, closed-form
    intrinsics (unless provided), pose decomposition, then joint refinement
    with the chosen deformation model."""
    config = config if config is not None else SolverConfig()
    dataset.validate(spec)
    intr0, poses0 = _initial_estimates(dataset, spec, initial_intrinsics)
    problem = CalibrationProblem(dataset, spec, model, config, anchors=anchors)
    x0 = problem.pack_start(problem.full_vector(intr0, poses0))
    return solve_lm(problem, x0)


def reduced_calibrate(
    dataset: Dataset,
    spec: TargetSpec,
    intrinsics: Intrinsics,
    static_correction: StaticCorrection | None = None,
    config: SolverConfig | None = None,
) -> CalibrationResult:
    """Pose-only refinement against frozen intrinsics and target geometry.

    Used to score intrinsics on an independent dataset: only the per-frame
    poses are optimized, with an optional frozen static correction applied to
    the target. The returned rmse is the held-out reprojection error.
    """
    from .geometry import undistort_normalized

    config = config if config is not None else SolverConfig()
    dataset.validate(spec)
    if static_correction is not None:
        static_correction.validate(spec)
        board = spec.grid() + static_correction.offsets_3d()
    else:
        board = spec.grid()
    ident = Intrinsics(1.0, 1.0, 0.0, 0.0)
    poses0 = []
    for frame in dataset.frames:
        flat = _frame_flat_corners(frame, spec)
        normalized = np.column_stack(
            [
                (frame.pixels[:, 0] - intrinsics.ppx) / intrinsics.fx,
                (frame.pixels[:, 1] - intrinsics.ppy) / intrinsics.fy,
            ]
        )
        try:
            und = undistort_normalized(normalized, intrinsics)
            h = estimate_homography(board[flat, :2], und)
            poses0.append(pose_from_homography(h, ident, board[flat, :2]))
        except CalibrationError as exc:
            raise _with_frame(exc, frame.frame_id)
    problem = CalibrationProblem(
        dataset,
        spec,
        DeformationModel.STANDARD,
        config,
        fix_intrinsics=True,
        board_correction=static_correction,
    )
    x0 = problem.pack_start(problem.full_vector(intrinsics, poses0))
    return solve_lm(problem, x0)


def calibrate_multicamera(
    datasets,
    spec: TargetSpec,
    model: DeformationModel,
    config: SolverConfig | None = None,
    *,
    anchors: tuple[int, ...] | None = None,
    initial_intrinsics=None,
) -> CalibrationResult | MultiCameraResult:
    """Joint refinement of several rigidly mounted cameras observing the same
    target sequence.

    Frames are matched across cameras by frame id; target poses and the
    deformation block are shared, while intrinsics and mounting poses are per
    camera (the first camera defines the rig frame). Every additional camera
    must share at least one frame with the first, otherwise its mounting pose
    is unobservable.
    """
    datasets = tuple(datasets)
    if not datasets:
        raise ValueError("at least one dataset is required")
    config = config if config is not None else SolverConfig()
    per_cam_intr: list[Intrinsics] = []
    per_cam_poses: list[dict[int, Pose]] = []
    for cam, ds in enumerate(datasets):
        ds.validate(spec)
        intr_init = None if initial_intrinsics is None else initial_intrinsics[cam]
        intr0, poses0 = _initial_estimates(ds, spec, intr_init)
        per_cam_intr.append(intr0)
        per_cam_poses.append(dict(zip(ds.frame_ids, poses0)))

    relative: list[Pose] = []
    base_frames = per_cam_poses[0]
    for cam in range(1, len(datasets)):
        shared = [fid for fid in datasets[cam].frame_ids if fid in base_frames]
        if not shared:
            raise IllConditionedError(
                f"camera {cam} shares no frames with camera 0; "
                "its mounting pose is unobservable"
            )
        fid = shared[0]
        relative.append(per_cam_poses[cam][fid].compose(base_frames[fid].inverse()))

    problem = CalibrationProblem(datasets, spec, model, config, anchors=anchors)
    target_poses = []
    for fid in problem.frame_ids:
        if fid in base_frames:
            target_poses.append(base_frames[fid])
            continue
        for cam in range(1, len(datasets)):
            if fid in per_cam_poses[cam]:
                target_poses.append(
                    relative[cam - 1].inverse().compose(per_cam_poses[cam][fid])
                )
                break
    x0 = problem.pack_start(
        problem.full_vector(per_cam_intr, target_poses, relative_poses=relative)
    )
    return solve_lm(problem, x0)
