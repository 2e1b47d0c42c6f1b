import numpy as np
import pytest

from grbasnet.audio import AudioClip, reverse
from grbasnet.augment import ONE_SECOND, augment_file, crop_variants, pitch_variants
from grbasnet.errors import DataError

from conftest import dominant_frequency, sine_clip


def noise_clip(duration, seed=0, rate=25000):
    rng = np.random.default_rng(seed)
    return AudioClip(rng.standard_normal(int(round(duration * rate))) * 0.2, rate, "noise")


class TestPitchVariants:
    def test_durations_for_two_second_input(self):
        variants = dict(pitch_variants(noise_clip(2.0)))
        assert set(variants) == {"none", "up", "down"}
        assert variants["none"].duration == pytest.approx(2.0)
        assert variants["up"].duration == pytest.approx(1.6, abs=1e-4)
        assert variants["down"].duration == pytest.approx(2.5, abs=1e-4)
        assert all(v.rate == 25000 for v in variants.values())

    def test_short_input_drops_up_variant(self):
        variants = dict(pitch_variants(noise_clip(1.1)))
        assert set(variants) == {"none", "down"}

    def test_up_variant_shifts_frequency(self):
        clip = sine_clip(100.0, duration=2.0, rate=25000)
        variants = dict(pitch_variants(clip))
        freq = dominant_frequency(variants["up"].samples, 25000)
        assert freq == pytest.approx(125.0, abs=0.5)
        freq_down = dominant_frequency(variants["down"].samples, 25000)
        assert freq_down == pytest.approx(80.0, abs=0.5)

    def test_requires_25000(self):
        clip = sine_clip(100.0, duration=2.0, rate=44100)
        with pytest.raises(DataError, match="25000"):
            pitch_variants(clip)


class TestCropVariants:
    def test_three_second_clip_boundaries(self):
        clip = noise_clip(3.0, seed=1)
        crops = dict(crop_variants(clip))
        # centered 2 s segment is [0.5, 2.5] s
        assert np.array_equal(crops["L"].samples, clip.samples[12500:37500])
        assert np.array_equal(crops["C"].samples, clip.samples[25000:50000])
        assert np.array_equal(crops["R"].samples, clip.samples[37500:62500])

    def test_one_second_clip_degenerate(self):
        clip = noise_clip(1.0, seed=2)
        crops = dict(crop_variants(clip))
        for tag in ("L", "C", "R"):
            assert np.array_equal(crops[tag].samples, clip.samples)

    def test_one_and_a_half_second_clip(self):
        clip = noise_clip(1.5, seed=3)
        crops = dict(crop_variants(clip))
        assert np.array_equal(crops["L"].samples, clip.samples[0:25000])
        assert np.array_equal(crops["C"].samples, clip.samples[6250:31250])
        assert np.array_equal(crops["R"].samples, clip.samples[12500:37500])

    def test_too_short(self):
        with pytest.raises(DataError):
            crop_variants(noise_clip(0.9))

    def test_all_outputs_exactly_one_second(self):
        for duration in (1.0, 1.2, 1.9999, 2.0, 2.7, 4.0):
            for _, c in crop_variants(noise_clip(duration, seed=5)):
                assert len(c.samples) == ONE_SECOND


class TestAugmentFile:
    def test_two_second_input_gives_18(self, long_vowel):
        out = augment_file(long_vowel)
        assert len(out) == 18
        tags = {(a.pitch, a.crop, a.flipped) for a in out}
        assert len(tags) == 18

    def test_short_input_gives_12(self):
        out = augment_file(noise_clip(1.1, seed=6))
        assert len(out) == 12
        assert {a.pitch for a in out} == {"none", "down"}

    def test_flipped_equals_reverse_of_sibling(self, long_vowel):
        out = augment_file(long_vowel)
        by_tag = {(a.pitch, a.crop, a.flipped): a for a in out}
        for (pitch, crop_tag, flipped), a in by_tag.items():
            if flipped:
                sibling = by_tag[(pitch, crop_tag, False)]
                assert np.array_equal(a.clip.samples, reverse(sibling.clip).samples)

    def test_every_output_one_second_at_25000(self, long_vowel):
        for a in augment_file(long_vowel):
            assert len(a.clip.samples) == 25000
            assert a.clip.rate == 25000

    def test_count_property(self):
        # 18 outputs iff 0.8 x duration >= 1 s
        for n_samples, expected in ((31250, 18), (31249, 12), (50000, 18), (25000, 12)):
            rng = np.random.default_rng(n_samples)
            clip = AudioClip(rng.standard_normal(n_samples) * 0.2, 25000, "c")
            assert len(augment_file(clip)) == expected

    def test_names_unique_and_tagged(self, long_vowel):
        out = augment_file(long_vowel)
        names = {a.name for a in out}
        assert len(names) == 18
        assert all(name.startswith("vowel2s__") for name in names)


def _stft_mag(samples, start, n_frames, win=1024, hop=206):
    frames = np.stack(
        [samples[start + j * hop : start + j * hop + win] for j in range(n_frames)]
    )
    return np.abs(np.fft.rfft(frames * np.hanning(win), axis=1))


class TestFlipSpectralProperties:
    def test_full_signal_spectrum_unchanged(self, long_vowel):
        out = augment_file(long_vowel)
        fwd = next(a for a in out if not a.flipped)
        rev = next(
            a for a in out if a.flipped and (a.pitch, a.crop) == (fwd.pitch, fwd.crop)
        )
        before = np.abs(np.fft.rfft(fwd.clip.samples))
        after = np.abs(np.fft.rfft(rev.clip.samples))
        # 1e-9 relative per bin, floored at 1e-9 of the spectral peak so the
        # vowel's near-empty bins do not amplify float roundoff
        assert np.allclose(after, before, rtol=1e-9, atol=1e-9 * before.max())

    def test_spectrogram_mirrors_on_centered_grid(self, long_vowel):
        # frame a centered 24920-sample region so framing is symmetric
        out = augment_file(long_vowel)
        fwd = next(a for a in out if not a.flipped)
        rev = next(
            a for a in out if a.flipped and (a.pitch, a.crop) == (fwd.pitch, fwd.crop)
        )
        n_frames = 117
        start = (25000 - 24920) // 2
        s_fwd = _stft_mag(fwd.clip.samples, start, n_frames)
        s_rev = _stft_mag(rev.clip.samples, start, n_frames)
        assert np.allclose(s_rev, s_fwd[::-1], atol=1e-9)
