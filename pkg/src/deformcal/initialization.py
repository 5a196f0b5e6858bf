"""Closed-form starting values: DLT homographies, intrinsics from the image of
the absolute conic, and pose decomposition of a plane-to-image homography."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    CheiralityError,
    DegenerateConfigurationError,
    IllConditionedError,
    InsufficientDataError,
)
from .geometry import Intrinsics, Pose, rotation_vector_from_matrix

_RANK_RTOL = 1e-9


@dataclass(frozen=True)
class Homography:
    """Plane-to-image map, scaled to unit Frobenius norm with h33 >= 0."""

    matrix: np.ndarray
    transfer_rmse: float = float("nan")

    def __post_init__(self):
        H = np.array(self.matrix, dtype=float)
        if H.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        norm = np.linalg.norm(H)
        if norm == 0.0 or not np.all(np.isfinite(H)):
            raise ValueError("homography must be finite and nonzero")
        H /= norm
        if H[2, 2] < 0.0:
            H = -H
        H.flags.writeable = False
        object.__setattr__(self, "matrix", H)

    def apply(self, points_xy: np.ndarray) -> np.ndarray:
        """Map plane points (N, 2) through the homography to pixel coordinates."""
        pts = np.atleast_2d(np.asarray(points_xy, dtype=float))
        ones = np.ones((pts.shape[0], 1))
        mapped = np.hstack([pts, ones]) @ self.matrix.T
        return mapped[:, :2] / mapped[:, 2:3]


def _normalization(points: np.ndarray) -> np.ndarray:
    """Hartley similarity: centroid to origin, mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    dist = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    if dist <= 0.0:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(2.0) / dist
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def estimate_homography(
    board_xy: np.ndarray, pixels: np.ndarray, *, cond_bound: float = 1e12
) -> Homography:
    """Least-squares homography from plane coordinates to observed pixels.

    Uses the normalized direct linear transform. Raises InsufficientDataError
    for fewer than four correspondences and DegenerateConfigurationError when
    the correspondences do not determine a unique, well-conditioned homography.
    """
    board_xy = np.asarray(board_xy, dtype=float)
    pixels = np.asarray(pixels, dtype=float)
    if board_xy.ndim != 2 or board_xy.shape[1] != 2 or board_xy.shape != pixels.shape:
        raise ValueError("expected matching (n, 2) arrays")
    n = board_xy.shape[0]
    if n < 4:
        raise InsufficientDataError(f"homography needs at least 4 points, got {n}")
    if not (np.all(np.isfinite(board_xy)) and np.all(np.isfinite(pixels))):
        raise ValueError("correspondences must be finite")

    Tb = _normalization(board_xy)
    Ti = _normalization(pixels)
    bh = np.hstack([board_xy, np.ones((n, 1))]) @ Tb.T
    ih = np.hstack([pixels, np.ones((n, 1))]) @ Ti.T

    A = np.zeros((2 * n, 9))
    A[0::2, 0:3] = bh
    A[0::2, 6:9] = -ih[:, 0:1] * bh
    A[1::2, 3:6] = bh
    A[1::2, 6:9] = -ih[:, 1:2] * bh

    _, s, vt = np.linalg.svd(A)
    if s[7] < _RANK_RTOL * s[0]:
        raise DegenerateConfigurationError(
            "correspondences do not determine a unique homography "
            "(collinear or coincident points)"
        )
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Ti) @ Hn @ Tb

    sv = np.linalg.svd(H, compute_uv=False)
    if sv[2] <= 0.0 or sv[0] / sv[2] > cond_bound:
        raise DegenerateConfigurationError(
            f"estimated homography is rank deficient (condition {sv[0] / max(sv[2], 1e-300):.3g})"
        )
    h = Homography(H)
    residual = h.apply(board_xy) - pixels
    rmse = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
    return Homography(h.matrix, rmse)


def _conic_row(H: np.ndarray, i: int, j: int) -> np.ndarray:
    return np.array(
        [
            H[0, i] * H[0, j],
            H[0, i] * H[1, j] + H[1, i] * H[0, j],
            H[1, i] * H[1, j],
            H[2, i] * H[0, j] + H[0, i] * H[2, j],
            H[2, i] * H[1, j] + H[1, i] * H[2, j],
            H[2, i] * H[2, j],
        ]
    )


def intrinsics_from_homographies(
    homographies, *, cond_threshold: float = 1e-8
) -> Intrinsics:
    """Closed-form pinhole intrinsics from three or more plane homographies.

    Each homography contributes two linear constraints on the image of the
    absolute conic. Distortion coefficients start at zero. Raises
    InsufficientDataError below three homographies and IllConditionedError when
    the views do not constrain the conic (for example all fronto-parallel).
    """
    hs = list(homographies)
    if len(hs) < 3:
        raise InsufficientDataError(
            f"intrinsics recovery needs at least 3 homographies, got {len(hs)}"
        )
    rows = []
    for h in hs:
        H = h.matrix if isinstance(h, Homography) else np.asarray(h, dtype=float)
        rows.append(_conic_row(H, 0, 1))
        rows.append(_conic_row(H, 0, 0) - _conic_row(H, 1, 1))
    V = np.array(rows)
    _, s, vt = np.linalg.svd(V)
    if s[4] < cond_threshold * s[0]:
        raise IllConditionedError(
            "views do not constrain the intrinsics (degenerate pose set)",
            condition=float(s[0] / max(s[4], 1e-300)),
        )
    b = vt[-1]
    B = np.array(
        [[b[0], b[1], b[3]], [b[1], b[2], b[4]], [b[3], b[4], b[5]]]
    )
    if B[0, 0] < 0.0:
        B = -B
    try:
        M = np.linalg.inv(B)
        M /= M[2, 2]
        # Factor M = U U^T with U upper triangular via the exchange trick.
        J = np.eye(3)[::-1]
        L = np.linalg.cholesky(J @ M @ J)
        K = J @ L @ J
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(
            "conic estimate is not positive definite (degenerate pose set)"
        ) from exc
    K = K / K[2, 2]
    fx, fy = float(K[0, 0]), float(K[1, 1])
    if not (fx > 0.0 and fy > 0.0):
        raise IllConditionedError("recovered focal lengths are not positive")
    return Intrinsics(fx=fx, fy=fy, ppx=float(K[0, 2]), ppy=float(K[1, 2]))


def pose_from_homography(
    h: Homography, intr: Intrinsics, board_xy: np.ndarray | None = None
) -> Pose:
    """Target pose from a plane homography and known pinhole intrinsics.

    Distortion is ignored here; the decomposition feeds the nonlinear refinement.
    When ``board_xy`` is given, every corner must land in front of the camera,
    otherwise only the target origin is checked. Raises CheiralityError when no
    sign choice achieves that.
    """
    M = np.linalg.inv(intr.pinhole_matrix) @ h.matrix
    n1, n2 = np.linalg.norm(M[:, 0]), np.linalg.norm(M[:, 1])
    if n1 <= 0.0 or n2 <= 0.0:
        raise DegenerateConfigurationError("homography collapses a plane axis")
    scale = 2.0 / (n1 + n2)
    r1, r2, t = scale * M[:, 0], scale * M[:, 1], scale * M[:, 2]
    R0 = np.column_stack([r1, r2, np.cross(r1, r2)])
    U, _, Vt = np.linalg.svd(R0)
    R = U @ np.diag([1.0, 1.0, float(np.linalg.det(U @ Vt))]) @ Vt

    pts = None if board_xy is None else np.atleast_2d(np.asarray(board_xy, dtype=float))
    viable: list[tuple[float, np.ndarray, np.ndarray]] = []
    for Rc, tc in ((R, t), (R @ np.diag([-1.0, -1.0, 1.0]), -t)):
        if pts is None:
            depths = np.array([tc[2]])
        else:
            depths = pts @ Rc[2, :2] + tc[2]
        if np.all(depths > 0.0):
            if pts is None:
                return Pose(rotation_vector_from_matrix(Rc), tc)
            # Both sign choices can pass the depth test; rank them by how well
            # they reproduce the homography's own corner mapping.
            cam = pts @ Rc[:, :2].T + tc
            uv = cam[:, :2] / cam[:, 2:3]
            K = intr.pinhole_matrix
            proj = uv @ K[:2, :2].T + K[:2, 2]
            err = float(np.mean(np.sum((proj - h.apply(pts)) ** 2, axis=1)))
            viable.append((err, Rc, tc))
    if not viable:
        raise CheiralityError("no decomposition places the target in front of the camera")
    _, Rc, tc = min(viable, key=lambda item: item[0])
    return Pose(rotation_vector_from_matrix(Rc), tc)
