"""Confusion matrices, accuracy, ordinal MAE, and rater-agreement tables.

Grades are ordinal (0..3), so disagreement is summarized both as joint
probability of agreement (accuracy) and as mean absolute error on the
numeric class values.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError

N_GRADES = 4


@dataclass(frozen=True)
class ConfusionMatrix:
    """4x4 count matrix; rows = reference, columns = comparison."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (N_GRADES, N_GRADES):
            raise DataError(f"confusion matrix must be 4x4, got {counts.shape}")
        if np.any(counts < 0):
            raise DataError("confusion matrix entries must be non-negative")
        counts = counts.copy()
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(ref, cmp) -> ConfusionMatrix:
    """counts[r][c] = number of items rated r by the reference and c by the other."""
    ref = list(ref)
    cmp = list(cmp)
    if len(ref) != len(cmp):
        raise DataError(f"length mismatch: {len(ref)} reference vs {len(cmp)} comparison")
    if not ref:
        raise DataError("cannot build a confusion matrix from empty grade lists")
    counts = np.zeros((N_GRADES, N_GRADES), dtype=np.int64)
    for r, c in zip(ref, cmp):
        r, c = int(r), int(c)
        if not (0 <= r < N_GRADES and 0 <= c < N_GRADES):
            raise DataError(f"grade out of range 0..3: ({r}, {c})")
        counts[r, c] += 1
    return ConfusionMatrix(counts)


def accuracy(cm: ConfusionMatrix) -> float:
    """Joint probability of agreement: trace / total."""
    if cm.total == 0:
        raise DataError("confusion matrix is empty")
    return float(np.trace(cm.counts) / cm.total)


def mae(cm: ConfusionMatrix) -> float:
    """Mean absolute error on the numeric class values."""
    if cm.total == 0:
        raise DataError("confusion matrix is empty")
    r, c = np.indices((N_GRADES, N_GRADES))
    return float(np.sum(cm.counts * np.abs(r - c)) / cm.total)


@dataclass(frozen=True)
class PairComparison:
    """Agreement between two (rater, instance) assessment sets."""

    ref_rater: str
    ref_inst: int
    cmp_rater: str
    cmp_inst: int
    kind: str  # intra | inter
    matrix: ConfusionMatrix
    agreement: float
    mae: float
    n: int


@dataclass(frozen=True)
class AgreementReport:
    pairs: list[PairComparison]
    summary: dict[str, float]


def agreement_report(records) -> AgreementReport:
    """Pairwise agreement over every pair of (rater, instance) grade sets.

    intra = same rater, different instances; inter = different raters (all
    instance pairings).  Files where either side is NC are dropped pairwise.
    Summary means are reported for intra pairs, for same-instance inter
    pairs, and for all inter pairs, since the averaging set used for the
    headline percentages is a convention.
    """
    sets: dict[tuple[str, int], dict[str, int]] = {}
    for rec in records:
        key = (str(rec.rater_id), int(rec.instance))
        if rec.g is not None:
            sets.setdefault(key, {})[rec.file_id] = int(rec.g)
        else:
            sets.setdefault(key, {})
    if len(sets) < 2:
        raise DataError(f"need at least 2 assessment sets, found {len(sets)}")
    keys = sorted(sets)
    pairs = []
    for a_idx in range(len(keys)):
        for b_idx in range(a_idx + 1, len(keys)):
            a, b = keys[a_idx], keys[b_idx]
            if a[0] == b[0] and a[1] == b[1]:
                continue
            common = sorted(set(sets[a]) & set(sets[b]))
            if not common:
                continue
            ref = [sets[a][f] for f in common]
            other = [sets[b][f] for f in common]
            cm = confusion(ref, other)
            kind = "intra" if a[0] == b[0] else "inter"
            pairs.append(
                PairComparison(
                    ref_rater=a[0],
                    ref_inst=a[1],
                    cmp_rater=b[0],
                    cmp_inst=b[1],
                    kind=kind,
                    matrix=cm,
                    agreement=accuracy(cm),
                    mae=mae(cm),
                    n=cm.total,
                )
            )
    if not pairs:
        raise DataError("no comparable assessment pairs (no shared gradable files)")

    def _mean(vals):
        return float(np.mean(vals)) if vals else float("nan")

    intra = [p for p in pairs if p.kind == "intra"]
    inter = [p for p in pairs if p.kind == "inter"]
    inter_same = [p for p in inter if p.ref_inst == p.cmp_inst]
    summary = {
        "intra_agreement": _mean([p.agreement for p in intra]),
        "intra_mae": _mean([p.mae for p in intra]),
        "inter_same_instance_agreement": _mean([p.agreement for p in inter_same]),
        "inter_same_instance_mae": _mean([p.mae for p in inter_same]),
        "inter_all_agreement": _mean([p.agreement for p in inter]),
        "inter_all_mae": _mean([p.mae for p in inter]),
    }
    return AgreementReport(pairs=pairs, summary=summary)


def write_agreement_csv(report: AgreementReport, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["ref_rater", "ref_inst", "cmp_rater", "cmp_inst", "kind", "agreement", "mae", "n"]
        )
        for p in report.pairs:
            writer.writerow(
                [
                    p.ref_rater,
                    p.ref_inst,
                    p.cmp_rater,
                    p.cmp_inst,
                    p.kind,
                    f"{p.agreement:.6f}",
                    f"{p.mae:.6f}",
                    p.n,
                ]
            )
        for kind in ("intra", "inter_same_instance", "inter_all"):
            writer.writerow(
                [
                    "",
                    "",
                    "",
                    "",
                    f"mean_{kind}",
                    f"{report.summary[f'{kind}_agreement']:.6f}",
                    f"{report.summary[f'{kind}_mae']:.6f}",
                    "",
                ]
            )
