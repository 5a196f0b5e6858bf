"""Planar grid targets, their deformation models, and gauge fixing.

Corner (n, m) sits at ((n - (cols-1)/2) d, (m - (rows-1)/2) d, 0) in the target
frame, so the frame origin is the grid centre. Flat corner indices run row-major:
i = m * cols + n.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateConfigurationError


@dataclass(frozen=True)
class TargetSpec:
    """Checkerboard inner-corner grid: rows x cols corners spaced ``spacing`` metres apart."""

    rows: int
    cols: int
    spacing: float

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("target needs at least 2x2 corners")
        if not (math.isfinite(self.spacing) and self.spacing > 0.0):
            raise ValueError("corner spacing must be positive")

    @property
    def n_corners(self) -> int:
        return self.rows * self.cols

    def corner_index(self, n: int, m: int) -> int:
        if not (0 <= n < self.cols and 0 <= m < self.rows):
            raise ValueError(f"corner ({n}, {m}) outside {self.cols}x{self.rows} grid")
        return m * self.cols + n

    def corner_nm(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.n_corners:
            raise ValueError(f"corner index {index} out of range")
        return index % self.cols, index // self.cols

    def grid(self) -> np.ndarray:
        """All corner positions in the target frame, shape (n_corners, 3), flat order."""
        n = np.arange(self.cols)
        m = np.arange(self.rows)
        x = (n - (self.cols - 1) / 2.0) * self.spacing
        y = (m - (self.rows - 1) / 2.0) * self.spacing
        xx, yy = np.meshgrid(x, y)
        return np.column_stack([xx.ravel(), yy.ravel(), np.zeros(self.n_corners)])


def corner_position(spec: TargetSpec, corner_id: tuple[int, int]) -> np.ndarray:
    """Nominal position of corner (n, m) in the centred target frame."""
    n, m = corner_id
    spec.corner_index(n, m)
    return np.array(
        [
            (n - (spec.cols - 1) / 2.0) * spec.spacing,
            (m - (spec.rows - 1) / 2.0) * spec.spacing,
            0.0,
        ]
    )


class DeformationModel(enum.Enum):
    """Target geometry refinements fitted jointly with the calibration."""

    STANDARD = "standard"
    STATIC = "static"
    DYNAMIC = "dynamic"
    FULL = "full"

    @property
    def static_components(self) -> int:
        """Number of per-corner static offset components (0 when unused)."""
        if self is DeformationModel.STATIC:
            return 3
        if self is DeformationModel.FULL:
            return 2
        return 0

    @property
    def has_dynamic(self) -> bool:
        return self in (DeformationModel.DYNAMIC, DeformationModel.FULL)


@dataclass(frozen=True)
class ParaboloidCoeffs:
    """Per-frame out-of-plane bending a x^2 + b y^2 + c x y.

    Constant and linear terms are deliberately absent: they are indistinguishable
    from target translation and rotation.
    """

    a: float
    b: float
    c: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    @classmethod
    def from_array(cls, values) -> "ParaboloidCoeffs":
        values = np.asarray(values, dtype=float)
        return cls(float(values[0]), float(values[1]), float(values[2]))

    def max_offset(self, spec: TargetSpec) -> float:
        """Largest out-of-plane magnitude over the target's corners."""
        grid = spec.grid()
        return float(np.max(np.abs(paraboloid_heights(grid[:, 0], grid[:, 1], self.as_array()))))


def paraboloid_heights(x: np.ndarray, y: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Out-of-plane offsets for board-plane coordinates, vectorized."""
    a, b, c = coeffs[..., 0], coeffs[..., 1], coeffs[..., 2]
    return a * x * x + b * y * y + c * x * y


def paraboloid_offset(point: np.ndarray, coeffs: ParaboloidCoeffs) -> np.ndarray:
    """Deformation offset (0, 0, dz) at a nominal on-plane target point."""
    point = np.asarray(point, dtype=float)
    dz = float(paraboloid_heights(point[0], point[1], coeffs.as_array()))
    return np.array([0.0, 0.0, dz])


def default_anchors(model: DeformationModel, spec: TargetSpec) -> tuple[int, ...]:
    """Anchor corners whose static offsets are pinned to remove gauge freedom."""
    if model is DeformationModel.STATIC:
        return (0, spec.cols - 1, (spec.rows - 1) * spec.cols)
    if model is DeformationModel.FULL:
        return (0, spec.cols - 1)
    return ()


def _check_not_collinear(spec: TargetSpec, anchors: tuple[int, ...]) -> None:
    pts = spec.grid()[list(anchors)]
    cross = np.cross(pts[1] - pts[0], pts[2] - pts[0])
    if np.linalg.norm(cross) <= 1e-12 * spec.spacing**2:
        raise DegenerateConfigurationError(f"anchor corners {anchors} are collinear")


def gauge_mask(
    model: DeformationModel,
    spec: TargetSpec,
    anchors: tuple[int, ...] | None = None,
) -> frozenset[int]:
    """Scalar indices into the corner-major static block held at zero.

    The static 3-offset model pins both in-plane and out-of-plane components of
    two anchors plus the out-of-plane component of a third (seven scalars); the
    combined model pins the in-plane offsets of two anchors (four scalars).
    """
    dim = model.static_components
    if dim == 0:
        if anchors:
            raise ValueError(f"model {model.value} takes no anchor corners")
        return frozenset()
    expected = 3 if dim == 3 else 2
    if anchors is None:
        anchors = default_anchors(model, spec)
    anchors = tuple(int(a) for a in anchors)
    if len(anchors) != expected or len(set(anchors)) != expected:
        raise ValueError(f"model {model.value} needs {expected} distinct anchor corners")
    for a in anchors:
        if not 0 <= a < spec.n_corners:
            raise ValueError(f"anchor corner {a} out of range")
    if dim == 3:
        _check_not_collinear(spec, anchors)
        first, second, third = anchors
        mask = {3 * first, 3 * first + 1, 3 * first + 2}
        mask |= {3 * second, 3 * second + 1, 3 * second + 2}
        mask.add(3 * third + 2)
    else:
        first, second = anchors
        mask = {2 * first, 2 * first + 1, 2 * second, 2 * second + 1}
    return frozenset(mask)


@dataclass(frozen=True)
class StaticCorrection:
    """Per-corner offsets shared by all frames.

    ``offsets`` has shape (n_corners, 3) for free 3-offsets or (n_corners, 2)
    for in-plane refinements; ``mask`` lists the corner-major scalar indices
    pinned at zero to fix the gauge.
    """

    offsets: np.ndarray
    mask: frozenset[int]

    def __post_init__(self):
        offsets = np.array(self.offsets, dtype=float)
        if offsets.ndim != 2 or offsets.shape[1] not in (2, 3):
            raise ValueError("offsets must have shape (n_corners, 2) or (n_corners, 3)")
        if not np.all(np.isfinite(offsets)):
            raise ValueError("offsets must be finite")
        offsets.flags.writeable = False
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "mask", frozenset(int(i) for i in self.mask))
        flat = offsets.ravel()
        for idx in self.mask:
            if not 0 <= idx < flat.size:
                raise ValueError(f"mask index {idx} out of range")
            if flat[idx] != 0.0:
                raise ValueError(f"masked offset component {idx} must be zero")

    @property
    def n_components(self) -> int:
        return self.offsets.shape[1]

    def validate(self, spec: TargetSpec) -> None:
        """Check shape and gauge structure against a target spec."""
        dim = self.n_components
        if self.offsets.shape[0] != spec.n_corners:
            raise ValueError("offset count does not match the target spec")
        expected = 7 if dim == 3 else 4
        if len(self.mask) != expected:
            raise ValueError(f"expected {expected} pinned scalars, found {len(self.mask)}")
        corners = {}
        for idx in self.mask:
            corners.setdefault(idx // dim, set()).add(idx % dim)
        if dim == 3:
            fully = sorted(c for c, comps in corners.items() if comps == {0, 1, 2})
            z_only = sorted(c for c, comps in corners.items() if comps == {2})
            if len(fully) != 2 or len(z_only) != 1:
                raise ValueError("static gauge must pin two full corners and one z component")
            _check_not_collinear(spec, (fully[0], fully[1], z_only[0]))
        else:
            fully = sorted(c for c, comps in corners.items() if comps == {0, 1})
            if len(fully) != 2:
                raise ValueError("in-plane gauge must pin two corners completely")

    @classmethod
    def zeros(
        cls,
        spec: TargetSpec,
        model: DeformationModel,
        anchors: tuple[int, ...] | None = None,
    ) -> "StaticCorrection":
        dim = model.static_components
        if dim == 0:
            raise ValueError(f"model {model.value} has no static correction")
        return cls(np.zeros((spec.n_corners, dim)), gauge_mask(model, spec, anchors))

    def offsets_3d(self) -> np.ndarray:
        """Offsets promoted to 3 components (in-plane corrections get z = 0)."""
        if self.n_components == 3:
            return np.asarray(self.offsets)
        return np.column_stack([self.offsets, np.zeros(self.offsets.shape[0])])


def _check_blocks(
    model: DeformationModel,
    static: StaticCorrection | None,
    paraboloid: ParaboloidCoeffs | None,
) -> None:
    dim = model.static_components
    if dim == 0 and static is not None:
        raise ValueError(f"model {model.value} takes no static correction")
    if dim > 0:
        if static is None:
            raise ValueError(f"model {model.value} requires a static correction")
        if static.n_components != dim:
            raise ValueError(
                f"model {model.value} expects {dim}-component offsets, "
                f"found {static.n_components}"
            )
    if model.has_dynamic and paraboloid is None:
        raise ValueError(f"model {model.value} requires paraboloid coefficients")
    if not model.has_dynamic and paraboloid is not None:
        raise ValueError(f"model {model.value} takes no paraboloid coefficients")


def deformed_point(
    spec: TargetSpec,
    corner_id: tuple[int, int],
    model: DeformationModel,
    static: StaticCorrection | None = None,
    paraboloid: ParaboloidCoeffs | None = None,
) -> np.ndarray:
    """Target-frame position of one corner under the given deformation model.

    The paraboloid is always evaluated at the nominal grid coordinates, so the
    static and dynamic contributions superpose without feedback.
    """
    _check_blocks(model, static, paraboloid)
    base = corner_position(spec, corner_id)
    out = base.copy()
    if static is not None:
        flat = spec.corner_index(*corner_id)
        out += static.offsets_3d()[flat]
    if paraboloid is not None:
        out += paraboloid_offset(base, paraboloid)
    return out


def board_points(
    spec: TargetSpec,
    model: DeformationModel,
    static: StaticCorrection | None = None,
    paraboloid: ParaboloidCoeffs | None = None,
) -> np.ndarray:
    """All corner positions under the deformation model, shape (n_corners, 3)."""
    _check_blocks(model, static, paraboloid)
    pts = spec.grid()
    out = pts.copy()
    if static is not None:
        out += static.offsets_3d()
    if paraboloid is not None:
        out[:, 2] += paraboloid_heights(pts[:, 0], pts[:, 1], paraboloid.as_array())
    return out
