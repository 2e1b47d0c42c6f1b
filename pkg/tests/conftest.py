import numpy as np
import pytest

from grbasnet.audio import AudioClip
from grbasnet.synth import SynthSpec, synth_voice


def sine_clip(freq, duration=1.0, rate=25000, amp=0.5, source_id="tone"):
    t = np.arange(int(round(duration * rate))) / rate
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), rate, source_id)


def dominant_frequency(samples, rate):
    """FFT-peak frequency with parabolic interpolation (test oracle)."""
    x = np.asarray(samples, dtype=np.float64)
    win = np.hanning(len(x))
    spec = np.abs(np.fft.rfft(x * win))
    k = int(np.argmax(spec[1:])) + 1
    if 1 <= k < len(spec) - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b + c
        delta = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        delta = 0.0
    return (k + delta) * rate / len(x)


@pytest.fixture(scope="session")
def clean_vowel():
    """Noiseless 125 Hz sustained vowel, 1 s @ 25000 (exact 200-sample period)."""
    return synth_voice(SynthSpec(f0=125.0), seed=42, source_id="vowel125")


@pytest.fixture(scope="session")
def long_vowel():
    """2.0 s clean sustained vowel at 25000 Sa/s for augmentation tests."""
    return synth_voice(SynthSpec(f0=140.0, duration=2.0), seed=7, source_id="vowel2s")
