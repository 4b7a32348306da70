"""Sequence IO, preprocessing, window sampling, and the synthetic dyad
generator used for desk-scale experiments.

Preprocessing follows the capture pipeline: downsample to 30 fps, subtract
the hip-center joint from every joint in every frame, then rotate each
sequence by one rotation computed from its first pose so the left-to-right
shoulder axis lands on x and the hip-to-neck axis on z.

On-disk formats are language-portable: a line-oriented manifest, and per
subject pose files either as CSV (header frame,j0x,j0y,j0z,...) or as a raw
binary blob with a 16-byte header (magic, version, T, K) followed by
row-major little-endian float32.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .skeleton import DyadSample, MotionSequence, Skeleton

POSE_MAGIC = b"DYPO"
POSE_VERSION = 1

# Neutral standing pose (mm) used as the base of the synthetic generator;
# already canonical: shoulders along x, hip-to-neck along z.
REST_POSE = np.array([
    [0, 30, 650],       # nose
    [0, 0, 500],        # neck
    [180, 0, 470],      # right_shoulder
    [430, 0, 460],      # right_elbow
    [680, 0, 455],      # right_wrist
    [-180, 0, 470],     # left_shoulder
    [-430, 0, 460],     # left_elbow
    [-680, 0, 455],     # left_wrist
    [0, 0, 0],          # hip_center
    [110, 0, -20],      # right_hip
    [120, 20, -480],    # right_knee
    [125, 10, -920],    # right_ankle
    [-110, 0, -20],     # left_hip
    [-120, 20, -480],   # left_knee
    [-125, 10, -920],   # left_ankle
    [-130, 160, -980],  # left_big_toe
    [-120, -60, -985],  # left_heel
    [135, 160, -980],   # right_big_toe
    [125, -60, -985],   # right_heel
], dtype=np.float64)

JOINT_GROUPS = {
    "torso": (0, 1, 8),
    "arms": (2, 3, 4, 5, 6, 7),
    "legs": (9, 10, 11, 12, 13, 14, 15, 16, 17, 18),
}
ARM_JOINTS = (3, 4, 6, 7)  # elbows and wrists, used by the burst event


# -- manifest ---------------------------------------------------------------

@dataclass
class SequenceManifest:
    sequence_id: str
    couple: str
    frames: int
    cameras: int
    split: str  # train | validation | test


def write_manifest(path, records: list[SequenceManifest]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sequence", "couple", "frames", "cameras", "split"])
        for r in records:
            writer.writerow([r.sequence_id, r.couple, r.frames, r.cameras, r.split])


def read_manifest(path) -> list[SequenceManifest]:
    records = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            records.append(SequenceManifest(
                row["sequence"], row["couple"], int(row["frames"]),
                int(row["cameras"]), row["split"]))
    return records


# -- pose files -------------------------------------------------------------

def write_pose_csv(path, poses: np.ndarray):
    poses = np.asarray(poses, dtype=np.float64)
    t, k = poses.shape
    header = ["frame"] + [f"j{j}{a}" for j in range(k // 3) for a in "xyz"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i in range(t):
            writer.writerow([i] + [repr(float(v)) for v in poses[i]])


def read_pose_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)  # header
        rows = [[float(v) for v in row[1:]] for row in reader]
    return np.asarray(rows, dtype=np.float64)


def write_pose_binary(path, poses: np.ndarray):
    poses = np.ascontiguousarray(poses, dtype="<f4")
    t, k = poses.shape
    with open(path, "wb") as f:
        f.write(POSE_MAGIC)
        f.write(struct.pack("<III", POSE_VERSION, t, k))
        f.write(poses.tobytes(order="C"))


def read_pose_binary(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != POSE_MAGIC:
            raise ValueError(f"not a pose file: bad magic {magic!r}")
        version, t, k = struct.unpack("<III", f.read(12))
        if version != POSE_VERSION:
            raise ValueError(f"unsupported pose file version {version}")
        data = np.frombuffer(f.read(), dtype="<f4", count=t * k)
    return data.reshape(t, k).astype(np.float64)


def write_pose_file(path, poses: np.ndarray):
    path = Path(path)
    if path.suffix == ".csv":
        write_pose_csv(path, poses)
    else:
        write_pose_binary(path, poses)


def read_pose_file(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        return read_pose_csv(path)
    return read_pose_binary(path)


# -- preprocessing ----------------------------------------------------------

def downsample(seq: MotionSequence, target_rate: float) -> MotionSequence:
    """Integer-factor frame decimation, e.g. 60 fps -> 30 fps keeps every
    second frame."""
    factor = seq.frame_rate / target_rate
    if abs(factor - round(factor)) > 1e-9 or factor < 1:
        raise ValueError(
            f"source rate {seq.frame_rate} not an integer multiple of {target_rate}")
    return MotionSequence(seq.poses[::int(round(factor))].copy(), target_rate)


def alignment_rotation(first_pose: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Rotation aligning a (hip-centered) pose: left-to-right shoulder axis
    onto x, hip-center-to-neck axis onto z (via Gram-Schmidt, so the neck
    direction lands in the xz half-plane with positive z)."""
    joints = skeleton.unflatten(np.asarray(first_pose, dtype=np.float64))
    shoulder = joints[skeleton.landmark("right_shoulder")] \
        - joints[skeleton.landmark("left_shoulder")]
    up = joints[skeleton.landmark("neck")] - joints[skeleton.landmark("hip_center")]
    ns = np.linalg.norm(shoulder)
    if ns < 1e-9:
        raise ValueError("degenerate first pose: coincident shoulders")
    x_axis = shoulder / ns
    z_raw = up - (up @ x_axis) * x_axis
    nz = np.linalg.norm(z_raw)
    if nz < 1e-9 * max(np.linalg.norm(up), 1.0):
        raise ValueError("degenerate first pose: shoulder and spine axes collinear")
    z_axis = z_raw / nz
    y_axis = np.cross(z_axis, x_axis)
    return np.stack([x_axis, y_axis, z_axis])


def hip_center_frames(poses: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Subtract the hip-center joint from every joint in every frame."""
    joints = skeleton.joints_of(poses)
    centered = joints - joints[:, skeleton.landmark("hip_center"):
                               skeleton.landmark("hip_center") + 1, :]
    return centered.reshape(poses.shape)


def canonicalize_sequence(seq: MotionSequence,
                          skeleton: Skeleton) -> MotionSequence:
    """Hip-center every frame, then apply the first-pose alignment rotation
    to all frames of the sequence."""
    centered = hip_center_frames(seq.poses, skeleton)
    rot = alignment_rotation(centered[0], skeleton)
    joints = skeleton.joints_of(centered)
    rotated = joints @ rot.T
    return MotionSequence(rotated.reshape(seq.poses.shape), seq.frame_rate)


def canonicalize(pair: tuple[MotionSequence, MotionSequence],
                 skeleton: Skeleton) -> tuple[MotionSequence, MotionSequence]:
    """Canonicalize both subjects, each with its own first-pose rotation."""
    return (canonicalize_sequence(pair[0], skeleton),
            canonicalize_sequence(pair[1], skeleton))


def window_samples(pair: tuple[MotionSequence, MotionSequence], past_len: int,
                   future_len: int, stride: int = 1) -> list[DyadSample]:
    """Aligned sliding windows over a dyad; empty list if too short."""
    s1, s2 = pair
    if s1.num_frames != s2.num_frames:
        raise ValueError(
            f"subjects not frame-aligned: {s1.num_frames} vs {s2.num_frames}")
    total = past_len + future_len
    samples = []
    for start in range(0, s1.num_frames - total + 1, stride):
        mid = start + past_len
        samples.append(DyadSample(
            s1.poses[start:mid], s2.poses[start:mid],
            s1.poses[mid:start + total], s2.poses[mid:start + total],
            roles=("leader", "follower")))
    return samples


# -- synthetic dyads ----------------------------------------------------------

@dataclass
class SyntheticDyadConfig:
    """Sinusoidal dyad generator standing in for real capture data.

    Subject 1 is a sum of per-joint sinusoids around a rest pose; subject 2
    follows it according to the coupling mode. Rare arm-opening bursts are
    injected into the shared underlying signal, so in lag mode the partner's
    burst precedes the primary's by the configured lag.
    """

    frequencies_hz: dict = None     # per joint group
    amplitudes_mm: dict = None
    coupling: str = "lag"           # mirror | lag | offset
    lag_frames: int = 15
    offset_mm: tuple = (800.0, 0.0, 0.0)
    noise_mm: float = 0.0
    burst_rate: float = 0.0         # expected bursts per 90-frame window
    burst_len: int = 16
    burst_amplitude_mm: float = 180.0
    frame_rate: float = 30.0

    def __post_init__(self):
        if self.frequencies_hz is None:
            self.frequencies_hz = {"torso": 0.4, "arms": 0.9, "legs": 1.6}
        if self.amplitudes_mm is None:
            self.amplitudes_mm = {"torso": 25.0, "arms": 80.0, "legs": 60.0}
        if self.coupling not in ("mirror", "lag", "offset"):
            raise ValueError(f"unknown coupling mode {self.coupling!r}")
        if any(f <= 0 for f in self.frequencies_hz.values()):
            raise ValueError("frequencies must be positive")
        if self.lag_frames < 0:
            raise ValueError("lag must be nonnegative")


def _base_signal(config: SyntheticDyadConfig, length: int, pad: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Underlying (pad+length, 19, 3) motion: rest pose + group sinusoids
    + burst events; defined back to t = -pad so lagged copies stay exact."""
    t = (np.arange(-pad, length) / config.frame_rate)[:, None, None]
    freq = np.empty((1, 19, 1))
    amp = np.empty((1, 19, 1))
    for group, joints in JOINT_GROUPS.items():
        for j in joints:
            freq[0, j, 0] = config.frequencies_hz[group]
            amp[0, j, 0] = config.amplitudes_mm[group]
    phase = rng.uniform(0, 2 * np.pi, size=(1, 19, 3))
    signal = REST_POSE[None] + amp * np.sin(2 * np.pi * freq * t + phase)

    if config.burst_rate > 0:
        p = config.burst_rate / 90.0
        starts = np.flatnonzero(rng.random(signal.shape[0]) < p)
        envelope = np.hanning(config.burst_len) * config.burst_amplitude_mm
        for start in starts:
            stop = min(start + config.burst_len, signal.shape[0])
            for j in ARM_JOINTS:
                direction = np.array([np.sign(REST_POSE[j, 0]), 0.0, 0.3])
                signal[start:stop, j, :] += envelope[:stop - start, None] * direction
    return signal


def generate_synthetic(config: SyntheticDyadConfig, n_sequences: int,
                       length: int, seed: int = 0
                       ) -> list[tuple[MotionSequence, MotionSequence]]:
    """Seeded, reproducible list of coupled sequence pairs."""
    if length < 1 or n_sequences < 0:
        raise ValueError("need length >= 1 and n_sequences >= 0")
    pairs = []
    for i in range(n_sequences):
        rng = np.random.default_rng([seed, i])
        pad = config.lag_frames if config.coupling == "lag" else 0
        base = _base_signal(config, length, pad, rng)
        s1 = base[pad:]
        if config.coupling == "mirror":
            s2 = s1.copy()
            s2[:, :, 0] *= -1.0
        elif config.coupling == "lag":
            s2 = base[:length] if pad else s1.copy()
        else:
            s2 = s1 + np.asarray(config.offset_mm)[None, None, :]
        s1 = s1.reshape(length, -1).copy()
        s2 = s2.reshape(length, -1)
        if config.noise_mm > 0:
            s1 = s1 + rng.normal(0, config.noise_mm, s1.shape)
            s2 = s2 + rng.normal(0, config.noise_mm, s2.shape)
        pairs.append((MotionSequence(s1, config.frame_rate),
                      MotionSequence(s2, config.frame_rate)))
    return pairs


# -- dataset directories ------------------------------------------------------

def save_dataset(out_dir, pairs, splits=None, couples=None, cameras: int = 0,
                 file_format: str = "csv"):
    """Write manifest.csv plus per-subject pose files for each dyad."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = ".csv" if file_format == "csv" else ".dyb"
    records = []
    for i, (s1, s2) in enumerate(pairs):
        seq_id = f"{i + 1}"
        split = splits[i] if splits else "train"
        couple = couples[i] if couples else f"S{i % 3}"
        records.append(SequenceManifest(seq_id, couple, s1.num_frames,
                                        cameras, split))
        write_pose_file(out_dir / f"seq{seq_id}_subject1{ext}", s1.poses)
        write_pose_file(out_dir / f"seq{seq_id}_subject2{ext}", s2.poses)
    write_manifest(out_dir / "manifest.csv", records)
    return records


def load_dataset(data_dir, frame_rate: float = 30.0):
    """Read manifest + pose files; returns list of
    (SequenceManifest, MotionSequence, MotionSequence)."""
    data_dir = Path(data_dir)
    out = []
    for rec in read_manifest(data_dir / "manifest.csv"):
        found = None
        for ext in (".csv", ".dyb"):
            p1 = data_dir / f"seq{rec.sequence_id}_subject1{ext}"
            if p1.exists():
                found = ext
                break
        if found is None:
            raise FileNotFoundError(f"pose files for sequence {rec.sequence_id}")
        s1 = MotionSequence(read_pose_file(
            data_dir / f"seq{rec.sequence_id}_subject1{found}"), frame_rate)
        s2 = MotionSequence(read_pose_file(
            data_dir / f"seq{rec.sequence_id}_subject2{found}"), frame_rate)
        out.append((rec, s1, s2))
    return out


def split_samples(dataset, past_len: int, future_len: int, stride: int = 1):
    """Window every sequence of a loaded dataset, grouped by split tag."""
    groups = {"train": [], "validation": [], "test": []}
    for rec, s1, s2 in dataset:
        groups.setdefault(rec.split, []).extend(
            window_samples((s1, s2), past_len, future_len, stride))
    return groups
