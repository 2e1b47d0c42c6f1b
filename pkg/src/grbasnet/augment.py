"""Three-stage augmentation: pitch variants x crops x time flip.

Each source clip at 25000 Sa/s yields 18 tagged one-second clips, or 12 when
the frequency-up variant would fall below one second and is discarded.
"""
from __future__ import annotations

from dataclasses import dataclass

from .audio import AudioClip, resample, reverse, _round_half_up
from .errors import DataError

TARGET_RATE = 25000
ONE_SECOND = TARGET_RATE  # samples
UP_RATE = 20000  # fewer samples -> frequencies x1.25 after relabeling
DOWN_RATE = 31250  # more samples -> frequencies x0.8 after relabeling

PITCH_TAGS = ("none", "up", "down")
CROP_TAGS = ("L", "C", "R")


@dataclass(frozen=True)
class AugmentedClip:
    """One-second clip plus the (pitch, crop, flip) tag triple."""

    clip: AudioClip
    source_id: str
    pitch: str
    crop: str
    flipped: bool

    @property
    def name(self) -> str:
        flip = "true" if self.flipped else "false"
        return f"{self.source_id}__{self.pitch}_{self.crop}_{flip}"


def pitch_variants(clip: AudioClip) -> list[tuple[str, AudioClip]]:
    """Original plus two resample-then-relabel pitch shifts.

    'up': resample to 20000 Sa/s and relabel as 25000 (duration x0.8,
    frequencies x1.25); dropped when shorter than one second.
    'down': resample to 31250 and relabel (duration x1.25, frequencies x0.8).
    """
    if clip.rate != TARGET_RATE:
        raise DataError(f"pitch_variants requires {TARGET_RATE} Sa/s input, got {clip.rate}")
    variants = [("none", clip)]
    up = resample(clip, UP_RATE).with_rate(TARGET_RATE)
    if len(up.samples) >= ONE_SECOND:
        variants.append(("up", up))
    down = resample(clip, DOWN_RATE).with_rate(TARGET_RATE)
    variants.append(("down", down))
    return variants


def crop_variants(clip: AudioClip) -> list[tuple[str, AudioClip]]:
    """Left / center / right one-second windows of the centered <=2 s segment.

    For clips over 2 s the segment is the centered 2 s window, otherwise the
    whole clip.  Boundaries are computed in samples with round-half-up.
    """
    n = len(clip.samples)
    if n < ONE_SECOND:
        raise DataError(
            f"crop_variants needs at least one second ({ONE_SECOND} samples), got {n}"
        )
    samples = clip.samples
    if n > 2 * ONE_SECOND:
        s0 = _round_half_up((n - 2 * ONE_SECOND) / 2)
        segment = samples[s0 : s0 + 2 * ONE_SECOND]
    else:
        segment = samples
    m = len(segment)
    c0 = _round_half_up((m - ONE_SECOND) / 2)
    windows = {
        "L": segment[:ONE_SECOND],
        "C": segment[c0 : c0 + ONE_SECOND],
        "R": segment[m - ONE_SECOND :],
    }
    return [
        (tag, AudioClip(windows[tag], clip.rate, clip.source_id)) for tag in CROP_TAGS
    ]


def augment_file(clip: AudioClip) -> list[AugmentedClip]:
    """pitch_variants -> crop_variants -> {identity, reverse}.

    18 outputs when all three pitch variants survive, else 12; every output
    is exactly one second at 25000 Sa/s with a unique tag triple.
    """
    out = []
    for pitch_tag, pitched in pitch_variants(clip):
        for crop_tag, cropped in crop_variants(pitched):
            for flipped in (False, True):
                final = reverse(cropped) if flipped else cropped
                out.append(
                    AugmentedClip(
                        clip=final,
                        source_id=clip.source_id,
                        pitch=pitch_tag,
                        crop=crop_tag,
                        flipped=flipped,
                    )
                )
    return out
