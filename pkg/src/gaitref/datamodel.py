"""Sequence containers, joint graphs and preprocessing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

SIL_HEIGHT = 64
SIL_WIDTH = 44


class DegenerateInputError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# COCO-17: nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles (left before right).
COCO17_EDGES = (
    (15, 13), (13, 11), (16, 14), (14, 12), (11, 12), (5, 11), (6, 12), (5, 6),
    (5, 7), (6, 8), (7, 9), (8, 10), (1, 2), (0, 1), (0, 2), (1, 3), (2, 4), (3, 5), (4, 6),
)
# OpenPose-18 (COCO body order with neck inserted at index 1).
OPENPOSE18_EDGES = (
    (4, 3), (3, 2), (7, 6), (6, 5), (13, 12), (12, 11), (10, 9), (9, 8), (11, 5),
    (8, 2), (5, 1), (2, 1), (0, 1), (15, 0), (14, 0), (17, 15), (16, 14),
)
LAYOUTS = {"coco17": (17, COCO17_EDGES), "openpose18": (18, OPENPOSE18_EDGES)}


@dataclass(frozen=True)
class SkeletonGraph:
    """Undirected joint graph with a row-normalized, self-looped adjacency."""

    num_joints: int
    edges: tuple[tuple[int, int], ...]
    layout: str = "custom"

    def __post_init__(self):
        for i, j in self.edges:
            if not (0 <= i < self.num_joints and 0 <= j < self.num_joints):
                raise ConfigError(f"edge ({i}, {j}) outside 0..{self.num_joints - 1}")

    @classmethod
    def from_layout(cls, layout: str) -> "SkeletonGraph":
        try:
            k, edges = LAYOUTS[layout]
        except KeyError:
            raise ConfigError(f"unknown skeleton layout {layout!r}") from None
        return cls(k, edges, layout)

    @classmethod
    def for_joints(cls, k: int) -> "SkeletonGraph":
        return cls.from_layout({17: "coco17", 18: "openpose18"}[k]) if k in (17, 18) else cls(k, (), "custom")

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.eye(self.num_joints)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    @cached_property
    def normalized_adjacency(self) -> np.ndarray:
        a = self.adjacency
        return a / a.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class SilhouetteSequence:
    frames: np.ndarray  # (N, H, W) uint8 in {0, 1}
    subject_id: str
    view_tag: Optional[str] = None

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 3 or f.shape[0] < 1:
            raise DegenerateInputError(f"silhouette frames must be (N>=1, H, W), got {f.shape}")
        if not np.isin(f, (0, 1)).all():
            raise ValueError("silhouette values must be 0 or 1")
        f = f.astype(np.uint8)
        f.flags.writeable = False
        object.__setattr__(self, "frames", f)

    def __len__(self):
        return self.frames.shape[0]

    def __eq__(self, other):
        return (isinstance(other, SilhouetteSequence) and self.subject_id == other.subject_id
                and self.view_tag == other.view_tag and np.array_equal(self.frames, other.frames))


@dataclass(frozen=True)
class SkeletonSequence:
    joints: np.ndarray  # (N, K, 2) float64
    subject_id: str
    layout: str = "coco17"

    def __post_init__(self):
        j = np.array(self.joints, dtype=np.float64)
        if j.ndim != 3 or j.shape[0] < 1 or j.shape[2] != 2:
            raise DegenerateInputError(f"joints must be (N>=1, K, 2), got {j.shape}")
        if not np.isfinite(j).all():
            raise ValueError("joint coordinates contain NaN/Inf")
        if self.layout in LAYOUTS and LAYOUTS[self.layout][0] != j.shape[1]:
            raise ConfigError(f"layout {self.layout} expects {LAYOUTS[self.layout][0]} joints, got {j.shape[1]}")
        j.flags.writeable = False
        object.__setattr__(self, "joints", j)

    def __len__(self):
        return self.joints.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joints.shape[1]

    @property
    def graph(self) -> SkeletonGraph:
        return SkeletonGraph.from_layout(self.layout) if self.layout in LAYOUTS else SkeletonGraph.for_joints(self.num_joints)

    def with_joints(self, joints: np.ndarray) -> "SkeletonSequence":
        return SkeletonSequence(joints, self.subject_id, self.layout)

    def __eq__(self, other):
        return (isinstance(other, SkeletonSequence) and self.subject_id == other.subject_id
                and self.layout == other.layout and np.array_equal(self.joints, other.joints))


@dataclass(frozen=True)
class SampleRecord:
    silhouette: SilhouetteSequence
    skeleton: SkeletonSequence
    clean_skeleton: Optional[SkeletonSequence] = None
    sequence_id: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.silhouette.subject_id != self.skeleton.subject_id:
            raise ValueError("silhouette and skeleton belong to different subjects")

    @property
    def subject_id(self) -> str:
        return self.skeleton.subject_id

    @property
    def view_tag(self) -> Optional[str]:
        return self.silhouette.view_tag


def normalize_skeleton(seq: SkeletonSequence) -> SkeletonSequence:
    """Center the mean joint at the origin and scale the sequence's vertical extent to 2."""
    j = seq.joints
    extent = j[..., 1].max() - j[..., 1].min()
    if not extent > 0:
        raise DegenerateInputError("skeleton sequence has zero vertical extent")
    out = (j - j.reshape(-1, 2).mean(axis=0)) * (2.0 / extent)
    return seq.with_joints(out)


def frame_indices(n: int, target_len: int, mode: str = "center-crop") -> np.ndarray:
    if n < 1:
        raise DegenerateInputError("cannot sample frames from an empty sequence")
    if target_len < 1:
        raise ConfigError("target_len must be >= 1")
    if mode == "center-crop":
        if n < target_len:
            log.info("center-crop of %d frames to %d falls back to repeat-pad", n, target_len)
            return np.arange(target_len) % n
        start = (n - target_len) // 2
        return np.arange(start, start + target_len)
    if mode == "repeat-pad":
        return np.arange(target_len) % n
    raise ConfigError(f"unknown sampling mode {mode!r}")


def sample_frames(seq, target_len: int, mode: str = "center-crop"):
    """Resample a silhouette or skeleton sequence to exactly ``target_len`` frames."""
    idx = frame_indices(len(seq), target_len, mode)
    if isinstance(seq, SilhouetteSequence):
        return SilhouetteSequence(seq.frames[idx], seq.subject_id, seq.view_tag)
    if isinstance(seq, SkeletonSequence):
        return seq.with_joints(seq.joints[idx])
    return np.asarray(seq)[idx]


def sample_record(rec: SampleRecord, target_len: int, mode: str = "center-crop") -> SampleRecord:
    """Apply the same frame selection to both modalities (paired by frame index)."""
    n = min(len(rec.silhouette), len(rec.skeleton))
    idx = frame_indices(n, target_len, mode)
    sil = SilhouetteSequence(rec.silhouette.frames[idx], rec.silhouette.subject_id, rec.silhouette.view_tag)
    skel = rec.skeleton.with_joints(rec.skeleton.joints[idx])
    clean = rec.clean_skeleton.with_joints(rec.clean_skeleton.joints[idx]) if rec.clean_skeleton is not None else None
    return SampleRecord(sil, skel, clean, rec.sequence_id, rec.meta)


def mean_joint_error(a: np.ndarray, b: np.ndarray) -> float:
    """Mean Euclidean distance between corresponding joints."""
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1).mean())
