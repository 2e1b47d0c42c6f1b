"""Power-cepstrogram features: the 420 x 117 network input.

A one-second 25000 Sa/s clip is framed (window 1024, hop 206, no padding ->
117 frames), each frame's power cepstrum is computed, and quefrency bins
[20, 440) are kept.  Window length/hop are reproduction assumptions chosen
as the minimal standard pair yielding the 420 x 117 output size.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip
from .errors import DataError, ShapeError

CLIP_RATE = 25000
CLIP_SAMPLES = 25000
FRAME_LEN = 1024
HOP = 206
N_FRAMES = (CLIP_SAMPLES - FRAME_LEN) // HOP + 1  # 117
QUEF_LO = 20
QUEF_HI = 440
N_QUEF = QUEF_HI - QUEF_LO  # 420
LOG_EPS = 1e-10

FEATURE_MAGIC = b"CEPS"
FEATURE_VERSION = 1

_HANN = np.hanning(FRAME_LEN)


@dataclass(frozen=True)
class Cepstrogram:
    """420 x 117 real matrix, quefrency bins [20, 440) by time frame."""

    values: np.ndarray
    source_id: str = ""
    tags: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (N_QUEF, N_FRAMES):
            raise ShapeError(
                f"cepstrogram must be {N_QUEF} x {N_FRAMES}, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DataError("cepstrogram values must all be finite")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class FeatureStats:
    """Global scalar mean/std of a training set's cepstrogram values."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DataError(f"feature std must be positive, got {self.std}")


def frame_signal(clip: AudioClip) -> np.ndarray:
    """Split a one-second clip into 117 frames of 1024 samples (hop 206)."""
    if clip.rate != CLIP_RATE:
        raise DataError(f"expected {CLIP_RATE} Sa/s, got {clip.rate}")
    if len(clip.samples) != CLIP_SAMPLES:
        raise DataError(
            f"expected exactly {CLIP_SAMPLES} samples, got {len(clip.samples)}"
        )
    starts = np.arange(N_FRAMES) * HOP
    idx = starts[:, None] + np.arange(FRAME_LEN)[None, :]
    return clip.samples[idx]


def power_cepstrum(frame: np.ndarray) -> np.ndarray:
    """|IDFT(log(|DFT(hann(frame))|^2 + eps))|^2 for a 1024-sample frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 1:
        return _power_cepstrum_batch(frame[None, :])[0]
    return _power_cepstrum_batch(frame)


def _power_cepstrum_batch(frames: np.ndarray) -> np.ndarray:
    if frames.shape[-1] != FRAME_LEN:
        raise ShapeError(f"frames must have length {FRAME_LEN}, got {frames.shape[-1]}")
    spectrum = np.fft.fft(frames * _HANN, axis=-1)
    log_power = np.log(np.abs(spectrum) ** 2 + LOG_EPS)
    cep = np.fft.ifft(log_power, axis=-1)
    return cep.real**2 + cep.imag**2


def cepstrogram(clip: AudioClip, tags: tuple = ()) -> Cepstrogram:
    """Stack per-frame power cepstra; keep quefrency bins [20, 440)."""
    frames = frame_signal(clip)
    cep = _power_cepstrum_batch(frames)  # (117, 1024)
    values = cep[:, QUEF_LO:QUEF_HI].T  # (420, 117), column j = frame j
    return Cepstrogram(values=values, source_id=clip.source_id, tags=tags)


def _values_of(c) -> np.ndarray:
    return c.values if isinstance(c, Cepstrogram) else np.asarray(c, dtype=np.float64)


def fit_stats(train_set) -> FeatureStats:
    """Global scalar mean/std over all values of all cepstrograms."""
    if not train_set:
        raise DataError("cannot fit feature stats on an empty set")
    stacked = np.stack([_values_of(c) for c in train_set])
    mean = float(stacked.mean())
    std = float(stacked.std())
    if std <= 1e-12:
        raise DataError("feature set has zero variance")
    return FeatureStats(mean=mean, std=std)


def standardize(c, stats: FeatureStats):
    """(values - mean) / std; preserves the input kind (Cepstrogram or array)."""
    values = (_values_of(c) - stats.mean) / stats.std
    if isinstance(c, Cepstrogram):
        return Cepstrogram(values=values, source_id=c.source_id, tags=c.tags)
    return values


def write_features(path, values) -> None:
    """Binary feature file: magic CEPS, u32 version/rows/cols, f32 LE row-major."""
    arr = _values_of(values).astype("<f4")
    rows, cols = arr.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, rows, cols))
        f.write(arr.tobytes())


def read_features(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such feature file: {p}")
    with open(p, "rb") as f:
        magic = f.read(4)
        if magic != FEATURE_MAGIC:
            raise DataError(f"{p}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        header = f.read(12)
        if len(header) != 12:
            raise DataError(f"{p}: truncated header")
        version, rows, cols = struct.unpack("<III", header)
        if version != FEATURE_VERSION:
            raise DataError(f"{p}: unsupported feature version {version}")
        payload = f.read(rows * cols * 4)
        if len(payload) != rows * cols * 4:
            raise DataError(f"{p}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
