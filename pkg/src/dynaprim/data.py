"""Plain data containers shared by the generator, trainer, metrics and I/O."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidSpec
from .geometry import SuperquadricShape

MIN_POINTS_PER_FRAME = 100


@dataclass
class FrameObservation:
    timestamp: float
    points: np.ndarray
    visibility: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(self.points) < MIN_POINTS_PER_FRAME:
            raise InvalidSpec(f"frame at t={self.timestamp} has {len(self.points)} points (< {MIN_POINTS_PER_FRAME})")
        if not 0.0 <= self.timestamp <= 1.0:
            raise InvalidSpec("timestamps must be normalized to [0, 1]")


@dataclass
class TrackingGT:
    canonical_frame_index: int
    points: np.ndarray        # (N, 3) canonical positions
    trajectories: np.ndarray  # (T, N, 3)
    part_ids: np.ndarray      # (N,)

    def __post_init__(self):
        if not np.array_equal(self.trajectories[self.canonical_frame_index], self.points):
            raise InvalidSpec("canonical trajectory slice must equal the canonical points")


@dataclass
class DatasetManifest:
    scene: str
    frame_count: int
    timestamps: list
    motion_bounds: list                 # [[xmin, ymin, zmin], [xmax, ymax, zmax]]
    frame_files: list
    part_ids: list
    part_shapes: list                   # [{"eps": [e1, e2], "scale": [s1, s2, s3]}]
    gt_poses: list                      # per frame, per part {"rot6": [...], "trans": [...]}
    tracking_gt_file: str = "tracking_gt.bin"
    normalization: dict = field(default_factory=dict)
    canonical_frame_index: int = 0
    seed: int = 0
    visibility_mode: str = "full"
    version: int = 1

    def shapes(self) -> list[SuperquadricShape]:
        return [SuperquadricShape.from_arrays(p["eps"], p["scale"]) for p in self.part_shapes]

    def pose_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """GT part rotations (F, P, 3, 3) and translations (F, P, 3)."""
        from .geometry import rot6d_to_matrix

        rot6 = np.array([[p["rot6"] for p in frame] for frame in self.gt_poses], dtype=float)
        trans = np.array([[p["trans"] for p in frame] for frame in self.gt_poses], dtype=float)
        return rot6d_to_matrix(rot6), trans


@dataclass
class Dataset:
    frames: list[FrameObservation]
    tracking: TrackingGT | None
    manifest: DatasetManifest

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])


class ObservationBatch:
    """All frames stacked for loss evaluation, with one KD-tree per frame."""

    def __init__(self, frames: list[FrameObservation]):
        if not frames:
            raise ValueError("empty batch")
        self.frames = frames
        self.timestamps = np.array([f.timestamp for f in frames], dtype=float)
        self.counts = np.array([len(f.points) for f in frames])
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)])
        self.points = np.concatenate([f.points for f in frames])
        self.trees = [cKDTree(f.points) for f in frames]

    def __len__(self):
        return len(self.frames)

    def subset(self, index) -> "ObservationBatch":
        """Batch over the chosen frames, reusing their KD-trees."""
        index = np.asarray(index, dtype=np.int64)
        if index.size == 0:
            raise ValueError("empty batch")
        sub = ObservationBatch.__new__(ObservationBatch)
        sub.frames = [self.frames[i] for i in index]
        sub.timestamps = self.timestamps[index]
        sub.counts = self.counts[index]
        sub.offsets = np.concatenate([[0], np.cumsum(sub.counts)])
        sub.points = np.concatenate([self.points[self.offsets[i]:self.offsets[i + 1]] for i in index])
        sub.trees = [self.trees[i] for i in index]
        return sub
