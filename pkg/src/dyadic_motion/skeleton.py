"""Canonical pose, sequence and dyad types shared by every other module.

All 3D coordinates are in millimeters. A pose is stored flattened as a
K-vector with K = 3 * joint_count, laid out joint-major: (x, y, z) of joint 0,
then joint 1, and so on. Frame timestamps are frame_index / frame_rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SkeletonError(ValueError):
    pass


class DyadValidationError(ValueError):
    pass


# Retained subset of the 25-joint capture skeleton. The source rig carries
# extra facial and foot markers; we keep 19 joints (eyes, ears and the small
# toes are dropped). This table is a project convention, not dictated by the
# data itself, so it stays configurable through the Skeleton constructor.
JOINT_NAMES = (
    "nose",            # 0
    "neck",            # 1
    "right_shoulder",  # 2
    "right_elbow",     # 3
    "right_wrist",     # 4
    "left_shoulder",   # 5
    "left_elbow",      # 6
    "left_wrist",      # 7
    "hip_center",      # 8
    "right_hip",       # 9
    "right_knee",      # 10
    "right_ankle",     # 11
    "left_hip",        # 12
    "left_knee",       # 13
    "left_ankle",      # 14
    "left_big_toe",    # 15
    "left_heel",       # 16
    "right_big_toe",   # 17
    "right_heel",      # 18
)

DEFAULT_LIMBS = (
    (1, 0),    # neck - nose
    (1, 2), (2, 3), (3, 4),      # right arm
    (1, 5), (5, 6), (6, 7),      # left arm
    (1, 8),    # spine
    (8, 9), (9, 10), (10, 11),   # right leg
    (8, 12), (12, 13), (13, 14),  # left leg
    (14, 15), (14, 16),          # left foot
    (11, 17), (11, 18),          # right foot
)

DEFAULT_LANDMARKS = dict(
    hip_center=8,
    left_shoulder=5,
    right_shoulder=2,
    neck=1,
    left_hip=12,
    right_hip=9,
    left_foot=14,
    right_foot=11,
)


@dataclass(frozen=True)
class Skeleton:
    """Joint topology plus the named landmarks used for canonicalization
    and refinement constraints. Immutable; safe to share across threads."""

    joint_count: int = 19
    limbs: tuple = DEFAULT_LIMBS
    landmarks: dict = field(default_factory=lambda: dict(DEFAULT_LANDMARKS))

    def __post_init__(self):
        object.__setattr__(self, "limbs", tuple(tuple(l) for l in self.limbs))
        for name, idx in self.landmarks.items():
            if not (0 <= idx < self.joint_count):
                raise SkeletonError(f"landmark {name}={idx} outside joint range")
        self._check_limb_graph()

    def _check_limb_graph(self):
        n = self.joint_count
        for a, b in self.limbs:
            if not (0 <= a < n and 0 <= b < n):
                raise SkeletonError(f"limb ({a},{b}) outside joint range")
        # a connected acyclic graph over n nodes has exactly n-1 edges
        if len(self.limbs) != n - 1:
            raise SkeletonError(
                f"limb graph must be a tree: {len(self.limbs)} edges for {n} joints")
        seen = {self.limbs[0][0]}
        edges = list(self.limbs)
        while edges:
            progressed = False
            for e in list(edges):
                if e[0] in seen or e[1] in seen:
                    seen.update(e)
                    edges.remove(e)
                    progressed = True
            if not progressed:
                raise SkeletonError("limb graph is disconnected")
        if len(seen) != n:
            raise SkeletonError("limb graph does not reach every joint")

    @property
    def dim(self) -> int:
        """Flattened pose dimension K = 3 * joint_count."""
        return 3 * self.joint_count

    def landmark(self, name: str) -> int:
        return self.landmarks[name]

    def flatten(self, pose_3d: np.ndarray) -> np.ndarray:
        """(joint_count, 3) -> K-vector, joint-major."""
        pose_3d = np.asarray(pose_3d)
        if pose_3d.shape != (self.joint_count, 3):
            raise SkeletonError(
                f"expected pose shape {(self.joint_count, 3)}, got {pose_3d.shape}")
        return pose_3d.reshape(self.dim).copy()

    def unflatten(self, pose: np.ndarray) -> np.ndarray:
        """K-vector -> (joint_count, 3)."""
        pose = np.asarray(pose)
        if pose.shape != (self.dim,):
            raise SkeletonError(f"expected pose length {self.dim}, got {pose.shape}")
        return pose.reshape(self.joint_count, 3).copy()

    def joints_of(self, seq: np.ndarray) -> np.ndarray:
        """(T, K) sequence -> (T, joint_count, 3) view-like copy."""
        seq = np.asarray(seq)
        if seq.ndim != 2 or seq.shape[1] != self.dim:
            raise SkeletonError(f"expected (T, {self.dim}) sequence, got {seq.shape}")
        return seq.reshape(seq.shape[0], self.joint_count, 3)


@dataclass
class MotionSequence:
    """One subject's trajectory: (T, K) float array in mm plus frame rate."""

    poses: np.ndarray
    frame_rate: float = 30.0

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=np.float64)
        if self.poses.ndim != 2 or self.poses.shape[0] < 1:
            raise ValueError(f"poses must be (T>=1, K), got {self.poses.shape}")
        if not np.isfinite(self.poses).all():
            t, k = np.argwhere(~np.isfinite(self.poses))[0]
            raise ValueError(f"non-finite pose entry at frame {t}, coordinate {k}")

    @property
    def num_frames(self) -> int:
        return self.poses.shape[0]

    @property
    def dim(self) -> int:
        return self.poses.shape[1]

    def timestamps(self) -> np.ndarray:
        return np.arange(self.num_frames) / self.frame_rate


ROLES = ("leader", "follower", "unlabeled")


@dataclass
class DyadSample:
    """Aligned past/future windows for both subjects of one dyad."""

    subject1_past: np.ndarray    # (T_p, K)
    subject2_past: np.ndarray    # (T_p, K)
    subject1_future: np.ndarray  # (T_f, K)
    subject2_future: np.ndarray  # (T_f, K)
    roles: tuple = ("unlabeled", "unlabeled")

    def __post_init__(self):
        for name in ("subject1_past", "subject2_past",
                     "subject1_future", "subject2_future"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    @property
    def past_len(self) -> int:
        return self.subject1_past.shape[0]

    @property
    def future_len(self) -> int:
        return self.subject1_future.shape[0]

    @property
    def dim(self) -> int:
        return self.subject1_past.shape[1]

    def swapped(self) -> "DyadSample":
        """Same dyad with subject roles exchanged."""
        return DyadSample(self.subject2_past, self.subject1_past,
                          self.subject2_future, self.subject1_future,
                          roles=(self.roles[1], self.roles[0]))


def validate_dyad(sample: DyadSample, skeleton: Skeleton | None = None) -> None:
    """Raise DyadValidationError naming the first violated invariant."""
    arrays = {
        "subject1_past": sample.subject1_past,
        "subject2_past": sample.subject2_past,
        "subject1_future": sample.subject1_future,
        "subject2_future": sample.subject2_future,
    }
    for name, arr in arrays.items():
        if arr.ndim != 2:
            raise DyadValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    dim = sample.subject1_past.shape[1]
    for name, arr in arrays.items():
        if arr.shape[1] != dim:
            raise DyadValidationError(
                f"{name} has K={arr.shape[1]}, expected {dim} (subjects must share a skeleton)")
    if skeleton is not None and dim != skeleton.dim:
        raise DyadValidationError(f"K={dim} does not match skeleton K={skeleton.dim}")
    if sample.subject2_past.shape[0] != sample.subject1_past.shape[0]:
        raise DyadValidationError(
            f"past length mismatch: subject1 T_p={sample.subject1_past.shape[0]}, "
            f"subject2 T_p={sample.subject2_past.shape[0]}")
    if sample.subject2_future.shape[0] != sample.subject1_future.shape[0]:
        raise DyadValidationError(
            f"future length mismatch: subject1 T_f={sample.subject1_future.shape[0]}, "
            f"subject2 T_f={sample.subject2_future.shape[0]}")
    for name, arr in arrays.items():
        bad = ~np.isfinite(arr)
        if bad.any():
            t, k = np.argwhere(bad)[0]
            raise DyadValidationError(
                f"non-finite value in {name} at frame {t}, joint {k // 3}")
    for role in sample.roles:
        if role not in ROLES:
            raise DyadValidationError(f"unknown role label {role!r}")
