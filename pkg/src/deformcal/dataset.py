"""In-memory corner observations grouped by frame."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError
from .target import TargetSpec


@dataclass(frozen=True)
class Frame:
    """Observed corners of one image: integer ids (n, m) and pixel coordinates."""

    frame_id: int
    corners: np.ndarray
    pixels: np.ndarray

    def __post_init__(self):
        corners = np.array(self.corners, dtype=int)
        pixels = np.array(self.pixels, dtype=float)
        if corners.ndim != 2 or corners.shape[1] != 2:
            raise ValueError("corners must have shape (k, 2)")
        if pixels.shape != (corners.shape[0], 2):
            raise ValueError("pixels must match corners in shape (k, 2)")
        corners.flags.writeable = False
        pixels.flags.writeable = False
        object.__setattr__(self, "corners", corners)
        object.__setattr__(self, "pixels", pixels)

    @property
    def n_observations(self) -> int:
        return self.corners.shape[0]


@dataclass(frozen=True)
class Dataset:
    """A sequence of frames, optionally tagged with the camera that captured them."""

    frames: tuple[Frame, ...]
    camera_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def n_observations(self) -> int:
        return sum(f.n_observations for f in self.frames)

    @property
    def frame_ids(self) -> tuple[int, ...]:
        return tuple(f.frame_id for f in self.frames)

    def subset(self, indices) -> "Dataset":
        """New dataset keeping the frames at the given positions, in the given order."""
        return Dataset(tuple(self.frames[int(i)] for i in indices), self.camera_id)

    def validate(self, spec: TargetSpec) -> None:
        """Raise DataError when the observations cannot belong to ``spec``."""
        seen_frames = set()
        for frame in self.frames:
            if frame.frame_id in seen_frames:
                raise DataError(f"duplicate frame id {frame.frame_id}")
            seen_frames.add(frame.frame_id)
            if frame.n_observations == 0:
                raise DataError(f"frame {frame.frame_id} has no observations")
            n, m = frame.corners[:, 0], frame.corners[:, 1]
            bad = (n < 0) | (n >= spec.cols) | (m < 0) | (m >= spec.rows)
            if np.any(bad):
                i = int(np.argmax(bad))
                raise DataError(
                    f"frame {frame.frame_id}: corner ({n[i]}, {m[i]}) "
                    f"outside {spec.cols}x{spec.rows} grid"
                )
            flat = m * spec.cols + n
            if np.unique(flat).size != flat.size:
                raise DataError(f"frame {frame.frame_id} observes a corner twice")
            if not np.all(np.isfinite(frame.pixels)):
                raise DataError(f"frame {frame.frame_id} has non-finite pixels")
