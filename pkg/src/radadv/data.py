"""Synthetic range-Doppler gesture data.

Each sample is a short stack of H x W frames: a noisy background plus a
localized energy blob whose trajectory over the range (columns) and
velocity (rows) axes is class-specific.  Six gesture classes span the
same spread of motion styles as typical hand-gesture corpora -- two
mirrored lateral swipes, two brief vertical flicks, and two sustained
oscillatory motions -- so classes are separable by trajectory direction
and dynamics rather than by raw intensity.

Subjects add nuisance variation (speed, intensity, pauses) that is
consistent across a subject's samples, which is what makes held-out
subject splits meaningful.  Frames are quantized to an 8-bit grayscale
grid at generation time, mirroring sensors that export frames as images.

Generation is deterministic per (config, seed): every sample draws from a
generator keyed by (seed, subject, class, repeat index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import STREAM_DATA, STREAM_SUBJECT_STYLE, rng_for

DATASET_VERSION = 1

CLASS_NAMES = ("drumming", "shaking", "swipe_left", "swipe_right", "thumb_up", "thumb_down")


class DatasetFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClassMotion:
    """Trajectory template for one gesture class (unit coordinates)."""

    duration_mean_s: float
    duration_std_s: float
    range_start: float
    range_end: float
    velocity_amp: float          # signed deflection from the zero-velocity row
    oscillations: float          # full sine cycles over the gesture; 0 = single bump
    pulse_width: float = 0.0     # >0: velocity deflection is a brief gaussian pulse
    blob_sigma: tuple[float, float] = (0.10, 0.08)   # (rows, cols) as fractions
    amplitude: float = 0.40


# Duration spreads intentionally differ per class: the oscillatory
# gestures run long (usually cropped to the window), the swipes and
# flicks run short (usually padded).
DEFAULT_MOTIONS = (
    ClassMotion(2.92, 0.94, 0.34, 0.38, 0.10, 5.0, blob_sigma=(0.08, 0.07), amplitude=0.34),
    ClassMotion(3.03, 0.97, 0.46, 0.56, 0.22, 2.0, blob_sigma=(0.12, 0.10), amplitude=0.40),
    ClassMotion(1.60, 0.27, 0.72, 0.26, -0.20, 0.0, blob_sigma=(0.11, 0.09), amplitude=0.42),
    ClassMotion(1.71, 0.31, 0.26, 0.72, 0.20, 0.0, blob_sigma=(0.11, 0.09), amplitude=0.42),
    ClassMotion(1.85, 0.37, 0.50, 0.52, 0.17, 0.0, pulse_width=0.16, blob_sigma=(0.09, 0.08), amplitude=0.38),
    ClassMotion(2.06, 0.42, 0.56, 0.54, -0.17, 0.0, pulse_width=0.16, blob_sigma=(0.09, 0.08), amplitude=0.38),
)


@dataclass(frozen=True)
class SyntheticConfig:
    frame_height: int = 16
    frame_width: int = 24
    num_subjects: int = 9
    samples_per_class: int = 14       # per subject
    fps: float = 7.0
    noise_floor: float = 0.31
    value_ceiling: float = 0.83
    noise_sigma: float = 0.012
    quantize_levels: int = 255
    min_frames: int = 3
    max_frames: int = 48
    subject_speed_range: tuple[float, float] = (0.8, 1.25)
    subject_intensity_range: tuple[float, float] = (-0.05, 0.05)
    subject_pause_range: tuple[float, float] = (0.0, 0.22)
    class_motions: tuple[ClassMotion, ...] = DEFAULT_MOTIONS

    def validate(self) -> None:
        if len(self.class_motions) != 6:
            raise ConfigError(f"exactly 6 gesture classes required, got {len(self.class_motions)}")
        if self.num_subjects < 6:
            raise ConfigError("need at least 6 subjects (two per train/val/test partition)")
        if not 0.0 <= self.noise_floor < 1.0:
            raise ConfigError(f"noise_floor must be in [0, 1), got {self.noise_floor}")
        if not self.noise_floor < self.value_ceiling <= 1.0:
            raise ConfigError("value_ceiling must satisfy noise_floor < ceiling <= 1")
        if any(m.duration_mean_s <= 0 for m in self.class_motions):
            raise ConfigError("class durations must be positive")
        if self.samples_per_class < 1 or self.frame_height < 4 or self.frame_width < 4:
            raise ConfigError("degenerate dataset geometry")


@dataclass
class GestureSample:
    sample_id: int
    subject: int
    label: int
    frames: np.ndarray  # (length, H, W) float32


@dataclass
class RadarSequence:
    """Fixed-length frame stack produced by windowing a sample."""

    frames: np.ndarray  # (T, H, W) float32
    orig_len: int       # frames of real action content, <= T
    sample_id: int
    subject: int
    label: int


@dataclass
class DatasetSplit:
    split_id: str
    partitions: dict[str, list[int]]            # partition -> sample ids
    subject_assignment: dict[str, list[int]]    # partition -> subjects


# Subject-to-partition presets for the two complementary 9-subject splits.
SPLIT_PRESETS = {
    "S+": {"train": [2, 6, 8, 9], "val": [1, 7], "test": [3, 4, 5]},
    "S-": {"train": [1, 3, 4, 5, 7], "val": [6, 8], "test": [2, 9]},
}


def quantize_grid(values: np.ndarray, lo: float, hi: float, levels: int) -> np.ndarray:
    """Round to the nearest k/levels point inside [lo, hi] (half away from zero)."""
    kmin = int(np.ceil(lo * levels - 1e-9))
    kmax = int(np.floor(hi * levels + 1e-9))
    if kmin > kmax:
        raise ValueError(f"no representable levels inside [{lo}, {hi}]")
    k = np.clip(np.floor(values * levels + 0.5), kmin, kmax)
    return (k / levels).astype(values.dtype)


def _gaussian_blob(h: int, w: int, row: float, col: float, sig_r: float, sig_c: float) -> np.ndarray:
    rows = (np.arange(h) - row * (h - 1)) / (sig_r * h)
    cols = (np.arange(w) - col * (w - 1)) / (sig_c * w)
    return np.exp(-0.5 * (rows[:, None] ** 2 + cols[None, :] ** 2))


def _motion_track(motion: ClassMotion, tau: np.ndarray, jitter_phase: float):
    """Blob center (row, col) per normalized time point."""
    col = motion.range_start + (motion.range_end - motion.range_start) * tau
    if motion.pulse_width > 0:
        deflect = np.exp(-0.5 * ((tau - 0.5) / motion.pulse_width) ** 2)
    elif motion.oscillations > 0:
        deflect = np.sin(2 * np.pi * motion.oscillations * tau + jitter_phase)
    else:
        deflect = np.sin(np.pi * tau)
    row = 0.5 + motion.velocity_amp * deflect
    return np.clip(row, 0.05, 0.95), np.clip(col, 0.05, 0.95)


def _synth_sample(cfg: SyntheticConfig, motion: ClassMotion, rng, style) -> np.ndarray:
    speed, intensity, pause_p = style
    dur = max(0.3, rng.normal(motion.duration_mean_s, motion.duration_std_s)) / speed
    length = int(np.clip(round(dur * cfg.fps), cfg.min_frames, cfg.max_frames))

    # pauses freeze the trajectory for a frame without shortening it
    steps = (rng.random(length) >= pause_p).astype(np.float64)
    steps[0] = 1.0
    tau = np.cumsum(steps)
    tau = (tau - tau[0]) / max(tau[-1] - tau[0], 1.0)

    phase = rng.uniform(0, 2 * np.pi)
    rows, cols = _motion_track(motion, tau, phase)
    rows = rows + rng.normal(0, 0.01, size=length)
    cols = cols + rng.normal(0, 0.01, size=length)

    amp = np.clip(motion.amplitude + intensity + rng.normal(0, 0.02), 0.10, 0.60)
    h, w = cfg.frame_height, cfg.frame_width
    frames = np.empty((length, h, w), dtype=np.float32)
    for i in range(length):
        background = cfg.noise_floor + np.abs(rng.normal(0, cfg.noise_sigma, size=(h, w)))
        blob = amp * _gaussian_blob(h, w, rows[i], cols[i], *motion.blob_sigma)
        frame = np.clip(background + blob, cfg.noise_floor, cfg.value_ceiling)
        frames[i] = frame.astype(np.float32)
    if cfg.quantize_levels:
        frames = quantize_grid(frames, cfg.noise_floor, cfg.value_ceiling, cfg.quantize_levels)
    return frames


def generate_dataset(cfg: SyntheticConfig, seed: int) -> list[GestureSample]:
    """Deterministic synthetic dataset: subjects x 6 classes x repeats."""
    cfg.validate()
    samples = []
    sample_id = 0
    for subject in range(1, cfg.num_subjects + 1):
        style_rng = rng_for(seed, STREAM_SUBJECT_STYLE, subject)
        style = (style_rng.uniform(*cfg.subject_speed_range),
                 style_rng.uniform(*cfg.subject_intensity_range),
                 style_rng.uniform(*cfg.subject_pause_range))
        for label in range(6):
            for rep in range(cfg.samples_per_class):
                rng = rng_for(seed, STREAM_DATA, subject, label, rep)
                frames = _synth_sample(cfg, cfg.class_motions[label], rng, style)
                samples.append(GestureSample(sample_id, subject, label, frames))
                sample_id += 1
    return samples


# ---------------------------------------------------------------------------
# preprocessing


def median_frame(samples: list[GestureSample]) -> np.ndarray:
    """Per-pixel median over every frame of the supplied samples.

    Even frame counts take the mean of the two middle values.
    """
    if not samples:
        raise ValueError("median_frame requires at least one sample")
    stack = np.concatenate([s.frames for s in samples], axis=0)
    if stack.shape[0] == 0:
        raise ValueError("median_frame requires at least one frame")
    return np.median(stack, axis=0).astype(stack.dtype)


def window(sample: GestureSample, length: int, padding: np.ndarray) -> RadarSequence:
    """Fix a sample to ``length`` frames.

    Short samples get copies of the padding frame appended; long samples
    keep their middle ``length`` frames (offset floor((l - length) / 2)).
    """
    if length < 1:
        raise ValueError("window length must be >= 1")
    frames = sample.frames
    n = frames.shape[0]
    if n < length:
        pad = np.broadcast_to(padding.astype(frames.dtype), (length - n,) + padding.shape)
        out = np.concatenate([frames, pad], axis=0)
        kept = n
    elif n > length:
        start = (n - length) // 2
        out = frames[start:start + length].copy()
        kept = length
    else:
        out = frames.copy()
        kept = n
    return RadarSequence(np.ascontiguousarray(out), kept, sample.sample_id, sample.subject, sample.label)


def split_subjects(samples: list[GestureSample], assignment: dict[str, list[int]],
                   split_id: str = "custom") -> DatasetSplit:
    """Partition samples by subject; partitions must be subject-disjoint."""
    seen: dict[int, str] = {}
    for part, subjects in assignment.items():
        for s in subjects:
            if s in seen:
                raise ValueError(f"subject {s} assigned to both {seen[s]!r} and {part!r}")
            seen[s] = part
    present = {s.subject for s in samples}
    unassigned = present - set(seen)
    if unassigned:
        raise ValueError(f"subjects present in data but unassigned: {sorted(unassigned)}")
    partitions: dict[str, list[int]] = {part: [] for part in assignment}
    for s in samples:
        partitions[seen[s.subject]].append(s.sample_id)
    return DatasetSplit(split_id, partitions, {p: sorted(v) for p, v in assignment.items()})


def value_range(samples: list[GestureSample]) -> tuple[float, float]:
    lo = min(float(s.frames.min()) for s in samples)
    hi = max(float(s.frames.max()) for s in samples)
    return lo, hi


# ---------------------------------------------------------------------------
# persistence: manifest.json + frames.bin (little-endian float32, row-major)


def save_dataset(samples: list[GestureSample], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(directory / "frames.bin", "wb") as fh:
        for s in samples:
            data = np.ascontiguousarray(s.frames, dtype="<f4").tobytes()
            entries.append({"id": s.sample_id, "subject": s.subject, "label": s.label,
                            "num_frames": int(s.frames.shape[0]), "offset": offset})
            fh.write(data)
            offset += len(data)
    h, w = samples[0].frames.shape[1:]
    manifest = {
        "format_version": DATASET_VERSION,
        "frame_shape": [int(h), int(w)],
        "class_names": list(CLASS_NAMES),
        "subjects": sorted({s.subject for s in samples}),
        "total_bytes": offset,
        "samples": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_dataset(directory: str | Path) -> list[GestureSample]:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.exists():
        raise DatasetFormatError(f"dataset manifest missing: {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format_version") != DATASET_VERSION:
        raise DatasetFormatError(f"unknown dataset format version {manifest.get('format_version')!r}")
    blob = (directory / "frames.bin").read_bytes()
    h, w = manifest["frame_shape"]
    frame_bytes = h * w * 4
    declared = manifest.get("total_bytes")
    if declared is not None and declared != len(blob):
        raise DatasetFormatError(f"frames.bin is {len(blob)} bytes, manifest declares {declared}")
    samples = []
    for e in manifest["samples"]:
        nbytes = e["num_frames"] * frame_bytes
        raw = blob[e["offset"]:e["offset"] + nbytes]
        if len(raw) != nbytes:
            raise DatasetFormatError(
                f"sample {e['id']} declares {nbytes} bytes but only {len(raw)} available")
        frames = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(e["num_frames"], h, w)
        samples.append(GestureSample(e["id"], e["subject"], e["label"], frames))
    return samples


# ---------------------------------------------------------------------------
# profiles


@dataclass(frozen=True)
class Profile:
    name: str
    window_length: int
    synthetic: SyntheticConfig


PROFILES = {
    "desk": Profile("desk", 20, SyntheticConfig()),
    "paper-shape": Profile("paper-shape", 50, replace(
        SyntheticConfig(), frame_height=80, frame_width=126, fps=23.0, max_frames=120)),
}
