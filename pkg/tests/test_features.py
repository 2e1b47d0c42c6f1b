import numpy as np
import pytest

from grbasnet.audio import AudioClip, reverse
from grbasnet.errors import DataError, ShapeError
from grbasnet.features import (
    FRAME_LEN,
    HOP,
    LOG_EPS,
    N_FRAMES,
    Cepstrogram,
    cepstrogram,
    fit_stats,
    frame_signal,
    power_cepstrum,
    read_features,
    standardize,
    write_features,
)
from grbasnet.synth import SynthSpec, synth_voice


def pulse_train_clip(period_samples, n=25000, rate=25000):
    x = np.zeros(n)
    marks = np.arange(0, n, period_samples)
    x[np.round(marks).astype(int)] = 0.9
    return AudioClip(x, rate, "pulse")


class TestFrameSignal:
    def test_frame_count(self, clean_vowel):
        frames = frame_signal(clean_vowel)
        assert frames.shape == (N_FRAMES, FRAME_LEN) == (117, 1024)

    def test_frame_zero_coverage(self):
        clip = AudioClip(np.arange(25000) / 25000.0 + 0.001, 25000)
        frames = frame_signal(clip)
        assert np.array_equal(frames[0], clip.samples[0:1024])

    def test_last_frame_coverage(self):
        clip = AudioClip(np.arange(25000) / 25000.0 + 0.001, 25000)
        frames = frame_signal(clip)
        assert 116 * HOP == 23896
        assert np.array_equal(frames[116], clip.samples[23896:24920])

    def test_wrong_length_rejected(self):
        with pytest.raises(DataError):
            frame_signal(AudioClip(np.zeros(24000) + 0.1, 25000))

    def test_wrong_rate_rejected(self):
        with pytest.raises(DataError):
            frame_signal(AudioClip(np.zeros(25000) + 0.1, 44100))


class TestPowerCepstrum:
    def test_zero_frame(self):
        c = power_cepstrum(np.zeros(FRAME_LEN))
        assert c[0] == pytest.approx(np.log(LOG_EPS) ** 2)
        assert np.max(np.abs(c[1:])) < 1e-12

    def test_pulse_train_rahmonic(self):
        clip = pulse_train_clip(200)
        frame = frame_signal(clip)[3]
        c = power_cepstrum(frame)
        # dominant rahmonic among bins [20, 512]
        peak = 20 + int(np.argmax(c[20:513]))
        assert peak == 200

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        c = power_cepstrum(rng.standard_normal(FRAME_LEN))
        for q in range(1, 512):
            assert c[q] == pytest.approx(c[1024 - q], rel=1e-9, abs=1e-18)

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        assert np.all(power_cepstrum(rng.standard_normal(FRAME_LEN)) >= 0)

    def test_rahmonic_location_grid(self):
        # brute-force oracle: synthetic tones over f0 in [80, 300] Hz peak
        # at quefrency bin round(rate/f0) within +-1
        for f0 in (80.0, 125.0, 170.0, 220.0, 300.0):
            clip = synth_voice(SynthSpec(f0=f0), seed=3)
            frame = frame_signal(clip)[50]
            c = power_cepstrum(frame)
            period = 25000.0 / f0
            lo = max(20, int(period * 0.5))
            peak = int(np.argmax(c[20:513])) + 20
            assert abs(peak - round(period)) <= 1, f"f0={f0}: peak {peak}"

    def test_wrong_length(self):
        with pytest.raises(ShapeError):
            power_cepstrum(np.zeros(512))


class TestCepstrogram:
    def test_shape(self, clean_vowel):
        cep = cepstrogram(clean_vowel)
        assert cep.values.shape == (420, 117)

    def test_vowel_rahmonic_row(self, clean_vowel):
        # 125 Hz -> period 200 samples -> bin 200 -> row 180 after dropping 20
        cep = cepstrogram(clean_vowel)
        argmax_rows = np.argmax(cep.values, axis=0)
        assert np.mean(argmax_rows == 180) >= 0.90

    def test_flip_mirrors_columns_approximately(self, clean_vowel):
        cep = cepstrogram(clean_vowel).values
        cep_flipped = cepstrogram(reverse(clean_vowel)).values
        diff = np.mean(np.abs(cep_flipped - cep[:, ::-1]))
        dynamic_range = cep.max() - cep.min()
        assert diff < 0.05 * dynamic_range

    def test_source_id_carried(self, clean_vowel):
        assert cepstrogram(clean_vowel).source_id == "vowel125"


class TestStats:
    def _set(self, n=5, seed=0):
        rng = np.random.default_rng(seed)
        return [rng.standard_normal((420, 117)) * 2.0 + 1.0 for _ in range(n)]

    def test_standardized_moments(self):
        cs = self._set()
        stats = fit_stats(cs)
        z = np.stack([standardize(c, stats) for c in cs])
        assert abs(z.mean()) < 1e-6
        assert abs(z.std() - 1.0) < 1e-6

    def test_zero_variance_rejected(self):
        with pytest.raises(DataError, match="zero variance"):
            fit_stats([np.full((420, 117), 3.0)] * 2)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            fit_stats([])

    def test_argmax_preserved(self, clean_vowel):
        cep = cepstrogram(clean_vowel)
        stats = fit_stats([cep])
        z = standardize(cep, stats)
        assert np.array_equal(
            np.argmax(z.values, axis=0), np.argmax(cep.values, axis=0)
        )

    def test_cepstrogram_kind_preserved(self, clean_vowel):
        cep = cepstrogram(clean_vowel)
        stats = fit_stats([cep])
        out = standardize(cep, stats)
        assert isinstance(out, Cepstrogram)
        assert out.source_id == cep.source_id


class TestFeatureFiles:
    def test_round_trip(self, tmp_path, clean_vowel):
        cep = cepstrogram(clean_vowel)
        p = tmp_path / "clip.ceps"
        write_features(p, cep)
        back = read_features(p)
        assert back.shape == (420, 117)
        assert np.allclose(back, cep.values.astype(np.float32), atol=0)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ceps"
        p.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(DataError, match="bad magic"):
            read_features(p)

    def test_truncated(self, tmp_path, clean_vowel):
        cep = cepstrogram(clean_vowel)
        p = tmp_path / "trunc.ceps"
        write_features(p, cep)
        data = p.read_bytes()
        p.write_bytes(data[: len(data) // 2])
        with pytest.raises(DataError, match="truncated"):
            read_features(p)

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            read_features(tmp_path / "none.ceps")
