"""16-bit PCM WAV I/O and time-domain transforms (resample, reverse, crop).

All operations are pure: clips are immutable values and every function
returns a new clip.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import AudioFormatError, DataError

PCM_SCALE = 32768.0

# Band-limited resampler kernel: sinc truncated at KERNEL_ZEROS zero
# crossings per side, shaped by a Kaiser window.  beta=12 keeps aliases
# more than 90 dB down.
KERNEL_ZEROS = 32
KAISER_BETA = 12.0
_RESAMPLE_CHUNK = 8192


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class AudioClip:
    """Mono sample sequence with a nominal sample rate.

    Samples are dimensionless amplitudes, nominally in [-1, 1].  The array
    is made read-only so clips can be shared freely across threads.
    """

    samples: np.ndarray
    rate: int
    source_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise DataError("AudioClip requires a non-empty 1-D sample sequence")
        if int(self.rate) <= 0:
            raise DataError(f"AudioClip rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(samples)):
            raise DataError("AudioClip samples must all be finite")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "rate", int(self.rate))

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return len(self.samples) / self.rate

    def with_rate(self, rate: int) -> "AudioClip":
        """Relabel the nominal rate without touching the samples."""
        return replace(self, rate=rate)


def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM RIFF/WAVE file; multichannel input is averaged to mono."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such audio file: {p}")
    try:
        with wave.open(str(p), "rb") as wf:
            n_channels = wf.getnchannels()
            sample_width = wf.getsampwidth()
            rate = wf.getframerate()
            comptype = wf.getcomptype()
            if comptype != "NONE":
                raise AudioFormatError(
                    f"{p}: compression type {comptype!r} not supported, need PCM"
                )
            if sample_width != 2:
                raise AudioFormatError(
                    f"{p}: bit depth {8 * sample_width} not supported, need 16"
                )
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        # wave names the offending fmt field in its message (e.g. format tag)
        raise AudioFormatError(f"{p}: {exc}") from None
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    if data.size == 0:
        raise AudioFormatError(f"{p}: empty audio payload")
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    return AudioClip(samples=data, rate=rate, source_id=p.stem)


def write_wav(clip: AudioClip, path) -> None:
    """Write a clip as mono 16-bit PCM; samples clamped to [-1, 1 - 1/32768]."""
    x = np.clip(clip.samples, -1.0, 1.0 - 1.0 / PCM_SCALE)
    pcm = np.rint(x * PCM_SCALE).astype("<i2")
    try:
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(clip.rate)
            wf.writeframes(pcm.tobytes())
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


def wav_duration(path) -> float:
    """Duration in seconds read from the WAV header without decoding the payload."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such audio file: {p}")
    try:
        with wave.open(str(p), "rb") as wf:
            return wf.getnframes() / wf.getframerate()
    except wave.Error as exc:
        raise AudioFormatError(f"{p}: {exc}") from None


def _kernel(u: np.ndarray) -> np.ndarray:
    """Kaiser-windowed sinc, u in cutoff-normalized units (zeros at integers)."""
    v = u / KERNEL_ZEROS
    out = np.zeros_like(u)
    inside = np.abs(v) <= 1.0
    out[inside] = np.i0(KAISER_BETA * np.sqrt(1.0 - v[inside] ** 2))
    out /= np.i0(KAISER_BETA)
    return np.sinc(u) * out


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited resampling with cutoff at min(rate, target_rate)/2.

    Output length is round(len * target_rate / rate).
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise DataError(f"target rate must be positive, got {target_rate}")
    if target_rate == clip.rate:
        return clip
    x = clip.samples
    n_in = len(x)
    n_out = _round_half_up(n_in * target_rate / clip.rate)
    if n_out < 2:
        raise DataError(
            f"resampling {n_in} samples from {clip.rate} to {target_rate} Sa/s "
            f"would leave {n_out} samples"
        )
    scale = min(1.0, target_rate / clip.rate)
    half_width = KERNEL_ZEROS / scale  # kernel support in input samples
    ratio = clip.rate / target_rate
    taps = np.arange(int(2 * half_width) + 2)
    out = np.empty(n_out)
    for lo in range(0, n_out, _RESAMPLE_CHUNK):
        hi = min(lo + _RESAMPLE_CHUNK, n_out)
        t = np.arange(lo, hi) * ratio  # output instants in input-sample units
        first = np.ceil(t - half_width).astype(np.int64)
        idx = first[:, None] + taps[None, :]
        weights = scale * _kernel(scale * (t[:, None] - idx))
        valid = (idx >= 0) & (idx < n_in)
        seg = x[np.clip(idx, 0, n_in - 1)]
        out[lo:hi] = np.sum(np.where(valid, weights * seg, 0.0), axis=1)
    return AudioClip(samples=out, rate=target_rate, source_id=clip.source_id)


def reverse(clip: AudioClip) -> AudioClip:
    """Samples in reversed index order, same rate."""
    return AudioClip(
        samples=clip.samples[::-1], rate=clip.rate, source_id=clip.source_id
    )


def crop(clip: AudioClip, start_s: float, dur_s: float) -> AudioClip:
    """Sample-index window [round(start*rate), round(start*rate)+round(dur*rate))."""
    if start_s < 0:
        raise DataError(f"crop start {start_s} s is negative")
    i0 = _round_half_up(start_s * clip.rate)
    length = _round_half_up(dur_s * clip.rate)
    n = len(clip.samples)
    if length <= 0:
        raise DataError(f"crop duration {dur_s} s selects no samples")
    if i0 + length > n:
        # allow a single sample of rounding overshoot
        if i0 + length - n <= 1:
            length = n - i0
        else:
            raise DataError(
                f"crop window [{start_s}, {start_s + dur_s}) s exceeds clip "
                f"duration {clip.duration:.6f} s"
            )
    if length <= 0 or i0 >= n:
        raise DataError(
            f"crop window [{start_s}, {start_s + dur_s}) s is outside the clip"
        )
    return AudioClip(
        samples=clip.samples[i0 : i0 + length],
        rate=clip.rate,
        source_id=clip.source_id,
    )
