"""Calibration quality measures.

Three complementary figures: the RMSE over a solve's own residuals, a test
error from refitting only poses on held-out reference data, and a mapping
error that compares two intrinsics sets directly in image space without any
observations at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .exceptions import UndistortDivergenceError
from .geometry import Intrinsics, _project_core, _undistort_masked
from .solver import CalibrationResult, SolverConfig, reduced_calibrate
from .target import StaticCorrection, TargetSpec


def training_rmse(result: CalibrationResult) -> float:
    """Root mean square of the run's residual scalars, ignoring any kernel."""
    residuals = result.residuals
    if residuals is None or residuals.size == 0:
        raise ValueError("result carries no residuals")
    return float(np.sqrt(np.mean(residuals**2)))


def test_error(
    intrinsics: Intrinsics,
    reference: Dataset,
    spec: TargetSpec,
    static_correction: StaticCorrection | None = None,
    config: SolverConfig | None = None,
) -> float:
    """Reprojection RMSE of ``intrinsics`` on data they were not fitted to.

    Only the reference poses are optimized; the intrinsics (and the optional
    fixed board correction) stay untouched, so the figure isolates how well
    the intrinsics explain independent observations.
    """
    result = reduced_calibrate(reference, spec, intrinsics, static_correction, config)
    return result.rmse


@dataclass(frozen=True)
class MappingErrorConfig:
    """Image-space grid for comparing two intrinsics sets."""

    width: float
    height: float
    grid_resolution: int = 50
    depth: float = 1.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.grid_resolution < 2:
            raise ValueError("grid_resolution must be at least 2 per axis")
        if self.depth <= 0:
            raise ValueError("depth must be positive")

    def grid(self) -> np.ndarray:
        """Centres of a ``grid_resolution`` squared tiling of the image.

        Cell centres rather than cell corners: an unweighted mean over
        corner samples carries a boundary bias that shrinks only linearly
        with resolution, which would make the figure drift by percents
        between resolutions for distortion-dominated differences.
        """
        du = self.width / self.grid_resolution
        dv = self.height / self.grid_resolution
        u = du * (np.arange(self.grid_resolution) + 0.5)
        v = dv * (np.arange(self.grid_resolution) + 0.5)
        uu, vv = np.meshgrid(u, v, indexing="xy")
        return np.column_stack([uu.ravel(), vv.ravel()])


@dataclass(frozen=True)
class MappingError:
    """RMSE of grid displacements, with the count of excluded grid points."""

    rmse: float
    n_excluded: int
    n_points: int

    def __float__(self) -> float:
        return self.rmse


def mapping_error(
    intr_a: Intrinsics, intr_b: Intrinsics, config: MappingErrorConfig
) -> MappingError:
    """How far grid pixels move when seen through one camera model and
    re-imaged through another.

    Each grid pixel is lifted to a 3D point at the configured depth using
    ``intr_a``, then projected with both models; the figure is the RMSE of the
    displacement lengths between the two projections. Projecting the lifted
    point with ``intr_a`` recovers the grid pixel up to the distortion
    inversion tolerance, so identical inputs give exactly zero. Grid points
    where the distortion cannot be inverted are dropped and counted.
    """
    pixels = config.grid()
    normalized = np.column_stack(
        [(pixels[:, 0] - intr_a.ppx) / intr_a.fx, (pixels[:, 1] - intr_a.ppy) / intr_a.fy]
    )
    undistorted, ok = _undistort_masked(normalized, intr_a)
    if not ok.any():
        raise UndistortDivergenceError(
            "distortion inversion failed on every grid point; the model is not "
            "invertible over this image"
        )
    points = np.column_stack(
        [undistorted[ok] * config.depth, np.full(int(ok.sum()), config.depth)]
    )
    via_a, valid_a = _project_core(points, intr_a.as_array())
    via_b, valid_b = _project_core(points, intr_b.as_array())
    valid = valid_a & valid_b
    distances = np.linalg.norm(via_b - via_a, axis=1)
    n_bad = int(ok.size - ok.sum() + np.count_nonzero(~valid))
    distances = distances[valid]
    if distances.size == 0:
        raise UndistortDivergenceError("no grid point survived the round trip")
    return MappingError(
        rmse=float(np.sqrt(np.mean(distances**2))),
        n_excluded=n_bad,
        n_points=int(pixels.shape[0]),
    )


def symmetric_mapping_error(
    intr_a: Intrinsics, intr_b: Intrinsics, config: MappingErrorConfig
) -> float:
    """Mean of the mapping error taken in both directions."""
    forward = mapping_error(intr_a, intr_b, config)
    backward = mapping_error(intr_b, intr_a, config)
    return 0.5 * (forward.rmse + backward.rmse)
