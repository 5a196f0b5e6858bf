"""Pinhole projection with radial distortion, rigid transforms, and their derivatives.

Conventions: camera looks down +z, pixel coordinates follow (u, v) with u along
image columns. Rotations are axis-angle vectors with canonical norm <= pi.
Lengths are metres, image coordinates pixels, angles radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BehindCameraError, UndistortDivergenceError

_TINY_ANGLE = 1e-8


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters plus three radial distortion coefficients."""

    fx: float
    fy: float
    ppx: float
    ppy: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0

    def __post_init__(self):
        values = (self.fx, self.fy, self.ppx, self.ppy, self.k1, self.k2, self.k3)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.fx, self.fy, self.ppx, self.ppy, self.k1, self.k2, self.k3]
        )

    @classmethod
    def from_array(cls, values) -> "Intrinsics":
        values = np.asarray(values, dtype=float)
        if values.shape != (7,):
            raise ValueError("expected 7 intrinsic parameters")
        return cls(*values.tolist())

    @property
    def pinhole_matrix(self) -> np.ndarray:
        """3x3 projection matrix of the undistorted pinhole part."""
        return np.array(
            [
                [self.fx, 0.0, self.ppx],
                [0.0, self.fy, self.ppy],
                [0.0, 0.0, 1.0],
            ]
        )


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for vectors of shape (..., 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _rotation_series(rotvecs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients (theta, sin(t)/t, (1-cos(t))/t^2) with small-angle guards."""
    theta = np.linalg.norm(rotvecs, axis=-1)
    t2 = theta * theta
    small = theta < _TINY_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    return theta, a, b


def rotation_matrices(rotvecs: np.ndarray) -> np.ndarray:
    """Rodrigues formula for a batch of rotation vectors, shape (..., 3) -> (..., 3, 3)."""
    rotvecs = np.asarray(rotvecs, dtype=float)
    _, a, b = _rotation_series(rotvecs)
    K = skew(rotvecs)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def rotation_matrix(rotvec) -> np.ndarray:
    return rotation_matrices(np.asarray(rotvec, dtype=float))


def right_jacobians(rotvecs: np.ndarray) -> np.ndarray:
    """Right Jacobians of the exponential map for a batch of rotation vectors.

    Satisfies R(v + d) ~= R(v) R(Jr(v) d) for small d.
    """
    rotvecs = np.asarray(rotvecs, dtype=float)
    theta, _, b = _rotation_series(rotvecs)
    t2 = theta * theta
    small = theta < _TINY_ANGLE
    safe = np.where(small, 1.0, theta)
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0, (safe - np.sin(safe)) / safe**3)
    K = skew(rotvecs)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye - b[..., None, None] * K + c[..., None, None] * (K @ K)


def rotation_vector_from_matrix(R: np.ndarray) -> np.ndarray:
    """Inverse Rodrigues map, returning the canonical representative (norm <= pi)."""
    R = np.asarray(R, dtype=float)
    axis_raw = 0.5 * np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    )
    cos_t = min(1.0, max(-1.0, (np.trace(R) - 1.0) / 2.0))
    theta = math.acos(cos_t)
    if theta < _TINY_ANGLE:
        return axis_raw
    if theta < math.pi - 1e-6:
        return axis_raw * (theta / math.sin(theta))
    # Near pi the skew part vanishes; recover the axis from R + I instead.
    M = R + np.eye(3)
    col = M[:, int(np.argmax(np.diag(M)))]
    axis = col / np.linalg.norm(col)
    if axis @ axis_raw < 0.0:
        axis = -axis
    return axis * theta


def canonical_rotation_vector(rotvec: np.ndarray) -> np.ndarray:
    """Wrap a rotation vector to its canonical representative with norm <= pi."""
    rotvec = np.asarray(rotvec, dtype=float)
    theta = float(np.linalg.norm(rotvec))
    if theta <= math.pi:
        return rotvec.copy()
    wrapped = math.fmod(theta, 2.0 * math.pi)
    if wrapped > math.pi:
        wrapped -= 2.0 * math.pi
    return rotvec * (wrapped / theta)


@dataclass(frozen=True)
class Pose:
    """Rigid transform taking target-frame points into the camera frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = canonical_rotation_vector(np.asarray(self.rotation, dtype=float))
        t = np.array(self.translation, dtype=float)
        if r.shape != (3,) or t.shape != (3,):
            raise ValueError("pose expects 3-vectors for rotation and translation")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose parameters must be finite")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_array(cls, values) -> "Pose":
        values = np.asarray(values, dtype=float)
        return cls(values[:3], values[3:6])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.rotation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply R x + t to one point (3,) or a batch (N, 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.matrix.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """Transform equal to applying ``other`` first, then ``self``."""
        Ra, Rb = self.matrix, other.matrix
        return Pose(
            rotation_vector_from_matrix(Ra @ Rb),
            Ra @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        R = self.matrix
        return Pose(-self.rotation, -(R.T @ self.translation))


def transform_to_camera(points: np.ndarray, pose: Pose) -> np.ndarray:
    """Map target-frame points into the camera frame."""
    return pose.transform(points)


def _radial_factor(r2: np.ndarray, k1, k2, k3) -> np.ndarray:
    return 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))


def _radial_factor_deriv(r2: np.ndarray, k1, k2, k3) -> np.ndarray:
    # Derivative with respect to r^2.
    return k1 + r2 * (2.0 * k2 + r2 * 3.0 * k3)


def invertible_radius(intr: Intrinsics) -> float:
    """Largest normalized radius below which the distortion stays injective.

    Beyond this radius the distorted radius r (1 + k1 r^2 + ...) r starts to
    decrease, folding far-off-axis rays back into the image; points past the
    fold cannot be recovered by undistortion. Infinite when the polynomial is
    monotone everywhere.
    """
    # d/dr of r D(r^2) expressed in s = r^2.
    coeffs = np.array([7.0 * intr.k3, 5.0 * intr.k2, 3.0 * intr.k1, 1.0])
    nonzero = np.nonzero(coeffs[:-1])[0]
    if nonzero.size == 0:
        return math.inf
    roots = np.roots(coeffs[nonzero[0]:])
    real = roots[np.abs(roots.imag) < 1e-9 * (1.0 + np.abs(roots.real))].real
    positive = real[real > 0.0]
    if positive.size == 0:
        return math.inf
    return float(np.sqrt(positive.min()))


def _project_core(points: np.ndarray, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates and validity for camera-frame points.

    ``params`` holds intrinsic rows (N, 7) or a single row broadcast over points.
    Rows with non-positive depth come back invalid with NaN pixels.
    """
    z = points[:, 2]
    valid = z > 0.0
    zs = np.where(valid, z, 1.0)
    xn = points[:, 0] / zs
    yn = points[:, 1] / zs
    r2 = xn * xn + yn * yn
    fx, fy, ppx, ppy = params[..., 0], params[..., 1], params[..., 2], params[..., 3]
    d = _radial_factor(r2, params[..., 4], params[..., 5], params[..., 6])
    uv = np.empty((points.shape[0], 2))
    uv[:, 0] = fx * xn * d + ppx
    uv[:, 1] = fy * yn * d + ppy
    uv[~valid] = np.nan
    return uv, valid


def project(points: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Project camera-frame points to pixels.

    Accepts one point (3,) or a batch (N, 3). Raises BehindCameraError when any
    point has non-positive depth.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if np.any(pts[:, 2] <= 0.0):
        bad = int(np.argmax(pts[:, 2] <= 0.0))
        raise BehindCameraError(f"point {bad} has depth {pts[bad, 2]:g} <= 0")
    uv, _ = _project_core(pts, intr.as_array())
    return uv[0] if single else uv


def projection_derivatives(
    points: np.ndarray, params: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Projection and its derivatives for camera-frame points.

    Args:
        points: camera-frame points, shape (N, 3).
        params: intrinsic parameter rows, shape (7,) or (N, 7).

    Returns:
        (uv, valid, d_uv_d_point, d_uv_d_params) with derivative shapes
        (N, 2, 3) and (N, 2, 7). Entries for invalid points are NaN.
    """
    points = np.asarray(points, dtype=float)
    params = np.asarray(params, dtype=float)
    if params.ndim == 1:
        params = np.broadcast_to(params, (points.shape[0], 7))
    z = points[:, 2]
    valid = z > 0.0
    zs = np.where(valid, z, 1.0)
    xn = points[:, 0] / zs
    yn = points[:, 1] / zs
    r2 = xn * xn + yn * yn
    fx, fy = params[:, 0], params[:, 1]
    k1, k2, k3 = params[:, 4], params[:, 5], params[:, 6]
    d = _radial_factor(r2, k1, k2, k3)
    dp = _radial_factor_deriv(r2, k1, k2, k3)

    uv = np.empty((points.shape[0], 2))
    uv[:, 0] = fx * xn * d + params[:, 2]
    uv[:, 1] = fy * yn * d + params[:, 3]

    # Normalized-plane derivatives: d(xn d)/dxn etc.
    a_uu = d + 2.0 * xn * xn * dp
    a_uv = 2.0 * xn * yn * dp
    a_vv = d + 2.0 * yn * yn * dp

    inv_z = 1.0 / zs
    d_pt = np.empty((points.shape[0], 2, 3))
    d_pt[:, 0, 0] = fx * a_uu * inv_z
    d_pt[:, 0, 1] = fx * a_uv * inv_z
    d_pt[:, 0, 2] = -fx * (a_uu * xn + a_uv * yn) * inv_z
    d_pt[:, 1, 0] = fy * a_uv * inv_z
    d_pt[:, 1, 1] = fy * a_vv * inv_z
    d_pt[:, 1, 2] = -fy * (a_uv * xn + a_vv * yn) * inv_z

    d_par = np.zeros((points.shape[0], 2, 7))
    d_par[:, 0, 0] = xn * d
    d_par[:, 1, 1] = yn * d
    d_par[:, 0, 2] = 1.0
    d_par[:, 1, 3] = 1.0
    for idx, power in ((4, 1), (5, 2), (6, 3)):
        rp = r2**power
        d_par[:, 0, idx] = fx * xn * rp
        d_par[:, 1, idx] = fy * yn * rp

    uv[~valid] = np.nan
    d_pt[~valid] = np.nan
    d_par[~valid] = np.nan
    return uv, valid, d_pt, d_par


def _undistort_radii(
    r_dist: np.ndarray, intr: Intrinsics, max_iter: int, tol: float
) -> tuple[np.ndarray, np.ndarray]:
    """Solve r * D(r^2) = r_dist per entry; returns (r, converged)."""
    k1, k2, k3 = intr.k1, intr.k2, intr.k3
    r = r_dist.copy()
    best = r.copy()
    best_err = np.abs(r * _radial_factor(r * r, k1, k2, k3) - r_dist)
    fixed_point_iters = max_iter // 2
    for _ in range(fixed_point_iters):
        if np.all(best_err <= tol):
            break
        d = _radial_factor(r * r, k1, k2, k3)
        cand = np.where(d > 1e-8, r_dist / np.maximum(d, 1e-8), r)
        cand_err = np.abs(cand * _radial_factor(cand * cand, k1, k2, k3) - r_dist)
        cur_err = np.abs(r * _radial_factor(r * r, k1, k2, k3) - r_dist)
        # Damp the update whenever the plain fixed-point step overshoots.
        r = np.where(cand_err <= cur_err, cand, 0.5 * (r + cand))
        err = np.abs(r * _radial_factor(r * r, k1, k2, k3) - r_dist)
        better = err < best_err
        best = np.where(better, r, best)
        best_err = np.where(better, err, best_err)
    r = best.copy()
    for _ in range(max_iter - fixed_point_iters):
        if np.all(best_err <= tol):
            break
        r2 = r * r
        d = _radial_factor(r2, k1, k2, k3)
        g = r * d - r_dist
        gp = d + 2.0 * r2 * _radial_factor_deriv(r2, k1, k2, k3)
        step_ok = gp > 1e-8
        r = np.where(step_ok, r - g / np.where(step_ok, gp, 1.0), r)
        r = np.maximum(r, 0.0)
        err = np.abs(r * _radial_factor(r * r, k1, k2, k3) - r_dist)
        better = err < best_err
        best = np.where(better, r, best)
        best_err = np.where(better, err, best_err)
    return best, best_err <= tol


def _undistort_masked(
    points: np.ndarray, intr: Intrinsics, max_iter: int = 50, tol: float = 1e-10
) -> tuple[np.ndarray, np.ndarray]:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    r_dist = np.linalg.norm(points, axis=1)
    r, ok = _undistort_radii(r_dist, intr, max_iter, tol)
    scale = np.where(r_dist > 0.0, r / np.where(r_dist > 0.0, r_dist, 1.0), 1.0)
    return points * scale[:, None], ok


def undistort_normalized(
    points: np.ndarray, intr: Intrinsics, *, max_iter: int = 50, tol: float = 1e-10
) -> np.ndarray:
    """Invert the radial distortion on normalized image coordinates.

    Accepts one point (2,) or a batch (N, 2). Raises UndistortDivergenceError
    when the iteration cannot reproduce the input within ``tol``.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    und, ok = _undistort_masked(pts, intr, max_iter, tol)
    if not np.all(ok):
        n_bad = int(np.count_nonzero(~ok))
        raise UndistortDivergenceError(
            f"undistortion failed for {n_bad} point(s); input outside the invertible region"
        )
    return und[0] if single else und


def unproject_at_depth(pixels: np.ndarray, intr: Intrinsics, depth: float) -> np.ndarray:
    """Back-project pixels to camera-frame points on the plane z = depth."""
    if not depth > 0.0:
        raise ValueError("depth must be positive")
    px = np.asarray(pixels, dtype=float)
    single = px.ndim == 1
    px = np.atleast_2d(px)
    normalized = np.column_stack(
        [(px[:, 0] - intr.ppx) / intr.fx, (px[:, 1] - intr.ppy) / intr.fy]
    )
    und = undistort_normalized(normalized, intr)
    out = np.column_stack([und * depth, np.full(px.shape[0], float(depth))])
    return out[0] if single else out
