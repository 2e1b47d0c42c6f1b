"""Manifest persistence, preprocessing bookkeeping, stratified speaker-disjoint
partitioning, augmentation grouping, and per-group class balancing.

All randomized steps take an explicit seed and are deterministic given it.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import wav_duration
from .errors import DataError

NC = "NC"
STATUSES = ("kept", "removed_short", "removed_flagged", "edited")
MIN_DURATION_S = 1.0
ASSESSMENT_FIELDS = ["file_id", "rater_id", "instance", "G", "R", "B", "A", "S", "comment"]
MANIFEST_FIELDS = [
    "file_id",
    "original_name",
    "blinded_name",
    "speaker_id",
    "duration_s",
    "status",
    "g_local",
]
INDEX_FIELDS = ["clip_name", "source_file_id", "pitch", "crop", "flip"]


def _parse_grade(text: str, where: str):
    text = text.strip()
    if text == NC or text == "":
        return None
    try:
        value = int(text)
    except ValueError:
        raise DataError(f"{where}: grade {text!r} is not 0..3 or NC") from None
    if not 0 <= value <= 3:
        raise DataError(f"{where}: grade {value} outside 0..3")
    return value


def _grade_str(value) -> str:
    return NC if value is None else str(int(value))


@dataclass(frozen=True)
class AssessmentRecord:
    """One rater's GRBAS assessment of one file in one instance."""

    file_id: str
    rater_id: str
    instance: int
    g: int | None
    r: int | None = None
    b: int | None = None
    a: int | None = None
    s: int | None = None
    comment: str = ""


@dataclass(frozen=True)
class ManifestRow:
    file_id: str
    original_name: str
    blinded_name: str
    speaker_id: str
    duration_s: float
    status: str
    g_local: int | None


@dataclass(frozen=True)
class IndexRow:
    """One augmented clip: its name, provenance, and tag triple."""

    clip_name: str
    source_file_id: str
    pitch: str
    crop: str
    flip: bool


@dataclass(frozen=True)
class FoldPlan:
    """k tables of file ids; one is the held-out test table."""

    tables: list[list[str]]
    test_index: int
    deviations: list[str] = field(default_factory=list)

    @property
    def cv_indices(self) -> list[int]:
        return [i for i in range(len(self.tables)) if i != self.test_index]


def read_assessments(path) -> list[AssessmentRecord]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such assessments file: {p}")
    records = []
    with open(p, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(ASSESSMENT_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{p}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{p}:{lineno}"
            try:
                instance = int(row["instance"])
            except ValueError:
                raise DataError(f"{where}: instance {row['instance']!r} is not an integer") from None
            records.append(
                AssessmentRecord(
                    file_id=row["file_id"].strip(),
                    rater_id=row["rater_id"].strip(),
                    instance=instance,
                    g=_parse_grade(row["G"], where),
                    r=_parse_grade(row["R"], where),
                    b=_parse_grade(row["B"], where),
                    a=_parse_grade(row["A"], where),
                    s=_parse_grade(row["S"], where),
                    comment=row.get("comment", ""),
                )
            )
    return records


def write_assessments(records, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(ASSESSMENT_FIELDS)
        for r in records:
            writer.writerow(
                [
                    r.file_id,
                    r.rater_id,
                    r.instance,
                    _grade_str(r.g),
                    _grade_str(r.r),
                    _grade_str(r.b),
                    _grade_str(r.a),
                    _grade_str(r.s),
                    r.comment,
                ]
            )


def read_manifest(path) -> list[ManifestRow]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such manifest: {p}")
    rows = []
    with open(p, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{p}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{p}:{lineno}"
            if row["status"] not in STATUSES:
                raise DataError(f"{where}: unknown status {row['status']!r}")
            rows.append(
                ManifestRow(
                    file_id=row["file_id"],
                    original_name=row["original_name"],
                    blinded_name=row["blinded_name"],
                    speaker_id=row["speaker_id"],
                    duration_s=float(row["duration_s"]),
                    status=row["status"],
                    g_local=_parse_grade(row["g_local"], where),
                )
            )
    return rows


def write_manifest(rows, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_FIELDS)
        for r in rows:
            writer.writerow(
                [
                    r.file_id,
                    r.original_name,
                    r.blinded_name,
                    r.speaker_id,
                    f"{r.duration_s:.6f}",
                    r.status,
                    _grade_str(r.g_local),
                ]
            )


def read_index(path) -> list[IndexRow]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such augmentation index: {p}")
    rows = []
    with open(p, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(INDEX_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{p}: missing columns {sorted(missing)}")
        for row in reader:
            rows.append(
                IndexRow(
                    clip_name=row["clip_name"],
                    source_file_id=row["source_file_id"],
                    pitch=row["pitch"],
                    crop=row["crop"],
                    flip=row["flip"] == "true",
                )
            )
    return rows


def write_index(rows, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(INDEX_FIELDS)
        for r in rows:
            writer.writerow(
                [r.clip_name, r.source_file_id, r.pitch, r.crop, "true" if r.flip else "false"]
            )


def build_manifest(audio_dir, records, local_rater: str = "local") -> list[ManifestRow]:
    """One row per WAV: files under one second are removed_short, files the
    local rater could not grade (NC or no local assessment) removed_flagged.

    Every assessment must reference an existing file.
    """
    audio_dir = Path(audio_dir)
    if not audio_dir.is_dir():
        raise DataError(f"no such audio directory: {audio_dir}")
    paths = sorted(audio_dir.glob("*.wav"))
    known = {p.stem for p in paths}
    for rec in records:
        if rec.file_id not in known:
            raise DataError(
                f"assessment references missing file {rec.file_id!r} "
                f"(not found in {audio_dir})"
            )
    local = {}
    for rec in records:
        if rec.rater_id == local_rater:
            prev = local.get(rec.file_id)
            if prev is None or rec.instance < prev.instance:
                local[rec.file_id] = rec
    rows = []
    for p in paths:
        duration = wav_duration(p)
        rec = local.get(p.stem)
        g_local = rec.g if rec is not None else None
        if duration < MIN_DURATION_S:
            status = "removed_short"
        elif g_local is None:
            status = "removed_flagged"
        else:
            status = "kept"
        rows.append(
            ManifestRow(
                file_id=p.stem,
                original_name=str(p),
                blinded_name="",
                speaker_id=p.stem,
                duration_s=duration,
                status=status,
                g_local=g_local,
            )
        )
    return rows


_NAME_LETTERS = np.array(list("abcdefghijklmnopqrstuvwxyz"))
_NAME_LEN = 10


def blind_rename(manifest, seed: int) -> dict[str, str]:
    """Bijective map from file ids to seeded random names.

    Random letter strings share no prefix structure with the originals, so
    alphabetical order of the new names is independent of grade.
    """
    rng = np.random.default_rng(seed)
    mapping: dict[str, str] = {}
    used: set[str] = set()
    for row in manifest:
        while True:
            name = "".join(rng.choice(_NAME_LETTERS, size=_NAME_LEN))
            if name not in used:
                break
        used.add(name)
        mapping[row.file_id] = name
    return mapping


def apply_blinding(manifest, mapping) -> list[ManifestRow]:
    return [replace(r, blinded_name=mapping.get(r.file_id, r.blinded_name)) for r in manifest]


def stratified_partition(manifest, k: int = 5, seed: int = 0) -> FoldPlan:
    """Split kept files into k speaker-disjoint tables, stratified by grade.

    Speakers are assigned whole: each speaker block goes to the table with
    the fewest files of the block's primary class (ties to the emptier,
    then lower-indexed table).  Per-class deviations beyond +-1 of the
    proportional share are reported, not fatal.  The test table is a seeded
    choice recorded in the plan.
    """
    if k < 2:
        raise DataError(f"need k >= 2 tables, got {k}")
    kept = [r for r in manifest if r.status in ("kept", "edited")]
    if not kept:
        raise DataError("no kept rows to partition")
    for r in kept:
        if r.g_local is None:
            raise DataError(f"kept file {r.file_id} has no usable grade")
        if not r.speaker_id:
            raise DataError(f"kept file {r.file_id} has no speaker id")

    rng = np.random.default_rng(seed)
    by_speaker: dict[str, list[ManifestRow]] = {}
    for r in kept:
        by_speaker.setdefault(r.speaker_id, []).append(r)

    # primary class of a block: most frequent grade, ties to the lower grade
    blocks = []
    for speaker in sorted(by_speaker):
        rows = by_speaker[speaker]
        counts = np.zeros(4, dtype=int)
        for r in rows:
            counts[r.g_local] += 1
        primary = int(np.argmax(counts))
        blocks.append((speaker, rows, primary))

    class_totals = np.zeros(4, dtype=int)
    for r in kept:
        class_totals[r.g_local] += 1
    class_order = sorted(range(4), key=lambda c: (-class_totals[c], c))

    tables: list[list[str]] = [[] for _ in range(k)]
    table_class_counts = np.zeros((k, 4), dtype=int)
    for cls in class_order:
        cls_blocks = [b for b in blocks if b[2] == cls]
        order = rng.permutation(len(cls_blocks))
        for bi in order:
            speaker, rows, _ = cls_blocks[bi]
            target = min(
                range(k),
                key=lambda t: (table_class_counts[t, cls], len(tables[t]), t),
            )
            for r in rows:
                tables[target].append(r.file_id)
                table_class_counts[target, r.g_local] += 1

    deviations = []
    for t in range(k):
        for cls in range(4):
            share = class_totals[cls] / k
            dev = table_class_counts[t, cls] - share
            if abs(dev) > 1.0:
                deviations.append(
                    f"table {t} class {cls}: {table_class_counts[t, cls]} files, "
                    f"proportional share {share:.2f}"
                )
    test_index = int(rng.integers(k))
    return FoldPlan(
        tables=[sorted(t) for t in tables],
        test_index=test_index,
        deviations=deviations,
    )


def write_fold_plan(plan: FoldPlan, path) -> None:
    with open(path, "w") as f:
        f.write(f"test={plan.test_index}\n")
        for dev in plan.deviations:
            f.write(f"# deviation: {dev}\n")
        for t, table in enumerate(plan.tables):
            for file_id in table:
                f.write(f"{t},{file_id}\n")


def read_fold_plan(path) -> FoldPlan:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such fold plan: {p}")
    test_index = None
    deviations = []
    entries: dict[int, list[str]] = {}
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("# deviation:"):
            deviations.append(line[len("# deviation:") :].strip())
            continue
        if line.startswith("#"):
            continue
        if line.startswith("test="):
            test_index = int(line[len("test=") :])
            continue
        idx_s, _, file_id = line.partition(",")
        try:
            idx = int(idx_s)
        except ValueError:
            raise DataError(f"{p}:{lineno}: malformed plan line {line!r}") from None
        entries.setdefault(idx, []).append(file_id)
    if test_index is None:
        raise DataError(f"{p}: missing test=<index> line")
    if not entries:
        raise DataError(f"{p}: plan lists no files")
    k = max(entries) + 1
    tables = [entries.get(i, []) for i in range(k)]
    if not 0 <= test_index < k:
        raise DataError(f"{p}: test index {test_index} outside 0..{k - 1}")
    return FoldPlan(tables=tables, test_index=test_index, deviations=deviations)


def group_augmented(table, index) -> list[IndexRow]:
    """All augmented clips whose source file belongs to the table."""
    table_set = set(table)
    return [row for row in index if row.source_file_id in table_set]


def balance_group(group, grades_by_file, seed: int = 0) -> list[IndexRow]:
    """Subsample the group to mc clips per class, mc = the smallest class count.

    Sampling is without replacement with the seeded generator; the subset
    keeps the group's original ordering.
    """
    by_class: dict[int, list[int]] = {0: [], 1: [], 2: [], 3: []}
    for pos, row in enumerate(group):
        grade = grades_by_file.get(row.source_file_id)
        if grade is None:
            raise DataError(f"no grade for source file {row.source_file_id!r}")
        by_class[int(grade)].append(pos)
    empty = [c for c, positions in by_class.items() if not positions]
    if empty:
        raise DataError(f"group has no clips for class(es) {empty}")
    mc = min(len(p) for p in by_class.values())
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for cls in range(4):
        positions = by_class[cls]
        pick = rng.choice(len(positions), size=mc, replace=False)
        chosen.extend(positions[i] for i in pick)
    return [group[i] for i in sorted(chosen)]
