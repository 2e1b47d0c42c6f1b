"""Desk-scale GRBAS grade-of-dysphonia pipeline.

Audio preprocessing and augmentation, power-cepstrogram features, a small
two-path convolutional network trained from scratch, speaker-disjoint
dataset construction, and rater-agreement metrics.
"""

from .audio import AudioClip, crop, read_wav, resample, reverse, write_wav
from .augment import AugmentedClip, augment_file, crop_variants, pitch_variants
from .errors import (
    AudioFormatError,
    DataError,
    GrbasError,
    NumericError,
    ShapeError,
)
from .features import (
    Cepstrogram,
    FeatureStats,
    cepstrogram,
    fit_stats,
    frame_signal,
    power_cepstrum,
    read_features,
    standardize,
    write_features,
)
from .metrics import ConfusionMatrix, accuracy, agreement_report, confusion, mae
from .model import GrbasNet, load_checkpoint, one_hot, predict, save_checkpoint
from .pipeline import (
    AssessmentRecord,
    FoldPlan,
    IndexRow,
    ManifestRow,
    balance_group,
    blind_rename,
    build_manifest,
    group_augmented,
    stratified_partition,
)
from .synth import SynthSpec, estimate_hnr, make_synthetic_dataset, synth_voice
from .training import TrainConfig, TrainHistory, adam_step, cross_validate, evaluate, train

__version__ = "0.1.0"
