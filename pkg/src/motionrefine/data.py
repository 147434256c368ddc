"""Pose-sequence persistence, window extraction and synthetic motion.

Binary sequence format "MSEQ1":

    8 bytes   magic b"MSEQ0001"
    u32       joint count
    u32       frame count
    u32       frame rate in millihertz
    u32       skeleton name length, then that many UTF-8 bytes
    f32 * frames*joints*3, little endian, frame-major, joint, then xyz

Storage is 32-bit on purpose (half the size); loading upcasts to 64-bit,
so a write/read round-trip is exact at 32-bit precision.  A CSV import
path (header ``frame,joint,x,y,z``) exists for interoperability.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, FormatError, SkeletonError
from .kinematics import PoseSequence, Skeleton, load_skeleton

MAGIC = b"MSEQ0001"
SYNTH_KINDS = ("sinusoid", "lissajous", "piecewise-constant-velocity")


@dataclass
class SequenceDataset:
    skeleton: Skeleton
    sequences: list[PoseSequence]
    labels: list[str] | None = None

    def __post_init__(self):
        for i, seq in enumerate(self.sequences):
            if seq.joints != self.skeleton.joint_count:
                raise SkeletonError(
                    f"sequence {i} has {seq.joints} joints, "
                    f"skeleton has {self.skeleton.joint_count}")
        if self.labels is not None and len(self.labels) != len(self.sequences):
            raise ConfigurationError("one label per sequence required")


@dataclass(frozen=True)
class TrainingWindow:
    history: np.ndarray   # (history_len, joints, 3)
    target: np.ndarray    # (future_len, joints, 3)
    source: tuple[int, int]  # (sequence index, start frame)


def save_sequence(path, seq: PoseSequence, skeleton_name: str):
    rate_mhz = seq.frame_rate * 1000.0
    if abs(rate_mhz - round(rate_mhz)) > 1e-6:
        raise DataError(f"frame rate {seq.frame_rate} is not millihertz-integral")
    name = skeleton_name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", seq.joints, seq.frames, int(round(rate_mhz))))
        fh.write(struct.pack("<I", len(name)))
        fh.write(name)
        fh.write(seq.coords.astype("<f4").tobytes())


def load_sequence(path) -> tuple[str, PoseSequence]:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an MSEQ1 file")
    offset = len(MAGIC)

    def pull(count):
        nonlocal offset
        if offset + count > len(blob):
            raise FormatError(f"{path}: truncated file")
        piece = blob[offset:offset + count]
        offset += count
        return piece

    joints, frames, rate_mhz = struct.unpack("<III", pull(12))
    (name_len,) = struct.unpack("<I", pull(4))
    name = pull(name_len).decode("utf-8")
    payload = pull(frames * joints * 3 * 4)
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    coords = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    coords = coords.reshape(frames, joints, 3)
    bad = ~np.isfinite(coords)
    if bad.any():
        frame = int(np.argwhere(bad)[0][0])
        raise DataError(f"{path}: non-finite coordinate at frame {frame}")
    return name, PoseSequence(coords, rate_mhz / 1000.0)


def load_csv_sequence(path, frame_rate: float = 25.0) -> PoseSequence:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["frame", "joint", "x", "y", "z"]:
            raise FormatError(f"{path}: expected header frame,joint,x,y,z")
        for row in reader:
            if not row:
                continue
            rows.append((int(row[0]), int(row[1]),
                         float(row[2]), float(row[3]), float(row[4])))
    if not rows:
        raise FormatError(f"{path}: no data rows")
    frames = max(r[0] for r in rows) + 1
    joints = max(r[1] for r in rows) + 1
    coords = np.full((frames, joints, 3), np.nan)
    for frame, joint, x, y, z in rows:
        coords[frame, joint] = (x, y, z)
    if not np.isfinite(coords).all():
        raise DataError(f"{path}: incomplete frame/joint grid")
    return PoseSequence(coords, frame_rate)


def load_dataset(directory) -> SequenceDataset:
    """Load skeleton.mskel (or the unique *.mskel) plus every *.mseq in a directory.

    The text before the last underscore of each file name becomes the
    sequence's action label.
    """
    directory = Path(directory)
    skeleton_files = sorted(directory.glob("*.mskel"))
    if not skeleton_files:
        raise FormatError(f"{directory}: no .mskel skeleton file")
    if len(skeleton_files) > 1:
        raise FormatError(f"{directory}: multiple skeleton files: {skeleton_files}")
    skeleton = load_skeleton(skeleton_files[0])
    sequences, labels = [], []
    for seq_path in sorted(directory.glob("*.mseq")):
        name, seq = load_sequence(seq_path)
        if seq.joints != skeleton.joint_count:
            raise SkeletonError(
                f"{seq_path}: sequence has {seq.joints} joints, "
                f"skeleton {skeleton_files[0].stem} has {skeleton.joint_count}")
        sequences.append(seq)
        stem = seq_path.stem
        labels.append(stem.rsplit("_", 1)[0] if "_" in stem else stem)
    if not sequences:
        raise FormatError(f"{directory}: no .mseq sequence files")
    return SequenceDataset(skeleton, sequences, labels)


def extract_windows(dataset: SequenceDataset, history_len: int, future_len: int,
                    stride: int = 1) -> list[TrainingWindow]:
    """Every contiguous (history, target) pair at the given stride, in order."""
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if history_len < 1 or future_len < 1:
        raise ConfigurationError("history_len and future_len must be >= 1")
    span = history_len + future_len
    windows = []
    for seq_index, seq in enumerate(dataset.sequences):
        for start in range(0, seq.frames - span + 1, stride):
            windows.append(TrainingWindow(
                history=seq.coords[start:start + history_len].copy(),
                target=seq.coords[start + history_len:start + span].copy(),
                source=(seq_index, start)))
    return windows


@dataclass
class SynthSpec:
    kind: str = "sinusoid"
    amplitude: float = 100.0
    period: float = 16.0     # frames per oscillation cycle
    frames: int = 100
    seed: int = 0
    frame_rate: float = 25.0


def rest_pose(skeleton: Skeleton) -> np.ndarray:
    """Chains laid out radially in the xz-plane at their bone lengths."""
    coords = np.zeros((skeleton.joint_count, 3))
    spokes = max(len(skeleton.chains), 1)
    for c, chain in enumerate(skeleton.chains):
        angle = 2.0 * np.pi * c / spokes
        direction = np.array([np.cos(angle), 0.0, np.sin(angle)])
        reach = 0.0
        for position, joint in enumerate(chain.joint_indices):
            if position > 0:
                reach += chain.bone_lengths[position - 1]
            if joint != 0:
                coords[joint] = direction * reach
    return coords


def gen_synthetic(skeleton: Skeleton, spec: SynthSpec) -> PoseSequence:
    """Deterministic articulated motion around a radial rest pose.

    Every chain oscillates about the static root; displacement amplitude
    grows toward the chain tip.  The sinusoid kind repeats exactly every
    ``period`` frames.
    """
    if spec.kind not in SYNTH_KINDS:
        raise ConfigurationError(f"unknown synthetic kind {spec.kind!r}")
    if spec.amplitude < 0 or spec.frames < 1 or spec.period <= 0:
        raise ConfigurationError("amplitude, frames and period must be positive")
    rng = np.random.default_rng(spec.seed)
    base = rest_pose(skeleton)
    joints = skeleton.joint_count
    t = np.arange(spec.frames, dtype=np.float64)

    # per-joint motion profile: amplitude share, phase and direction
    share = np.zeros(joints)
    for chain in skeleton.chains:
        for position, joint in enumerate(chain.joint_indices):
            if position > 0:
                share[joint] = position / chain.bone_count
    phase = rng.uniform(0.0, 2.0 * np.pi, joints)
    direction = rng.normal(size=(joints, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    second = rng.normal(size=(joints, 3))
    second -= (second * direction).sum(axis=1, keepdims=True) * direction
    second /= np.linalg.norm(second, axis=1, keepdims=True)

    omega = 2.0 * np.pi / spec.period
    # phase computed on t mod period so periodic frames match bit for bit
    cycle = np.mod(t, spec.period)
    if spec.kind == "sinusoid":
        wave = np.sin(omega * cycle[:, None] + phase[None, :])      # (T, J)
        offsets = spec.amplitude * share[None, :, None] * wave[:, :, None] * direction[None]
    elif spec.kind == "lissajous":
        wave_a = np.sin(omega * cycle[:, None] + phase[None, :])
        wave_b = np.sin(2.0 * omega * cycle[:, None] + 2.0 * phase[None, :])
        offsets = 0.5 * spec.amplitude * share[None, :, None] * (
            wave_a[:, :, None] * direction[None] + wave_b[:, :, None] * second[None])
    else:  # piecewise-constant-velocity
        segments = int(np.ceil(spec.frames / spec.period))
        speed = spec.amplitude / spec.period
        velocity = rng.normal(scale=speed, size=(segments, joints, 3)) * share[None, :, None]
        seg_index = np.minimum((t // spec.period).astype(int), segments - 1)
        offsets = np.cumsum(velocity[seg_index], axis=0)
        offsets -= offsets[0]
    coords = base[None, :, :] + offsets
    return PoseSequence(coords, spec.frame_rate)
