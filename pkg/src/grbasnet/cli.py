"""Command-line surface binding the pipeline end to end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every command echoes its effective configuration next to its outputs so a
run can be reproduced from the output directory alone.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from . import pipeline as pl
from .audio import read_wav, resample, write_wav
from .errors import DataError, GrbasError, NumericError
from .features import cepstrogram, read_features, standardize, write_features
from .metrics import accuracy, agreement_report, confusion, mae, write_agreement_csv
from .model import (
    feature_stats_from_meta,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .synth import make_synthetic_dataset
from .training import (
    TrainConfig,
    cross_validate,
    write_history_csv,
    write_weight_track_csv,
)

CONFIG_KEYS = {
    "epochs": int,
    "learning_rate": float,
    "batch_size": int,
    "lambda": float,
    "seed": int,
    "precision": int,
    "stop_at_train_acc": float,
    "plan": str,
    "features": str,
    "index": str,
    "manifest": str,
    "out_dir": str,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def read_config(path) -> dict:
    """Plain-text key-value config; '#' starts a comment; unknown keys rejected."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such config file: {p}")
    values = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep or not key:
            raise DataError(f"{p}:{lineno}: expected key = value, got {raw!r}")
        if key not in CONFIG_KEYS:
            raise DataError(f"{p}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise DataError(f"{p}:{lineno}: bad value {value!r} for {key}") from None
    return values


def _default_seed() -> int:
    env = os.environ.get("GRBAS_SEED")
    return int(env) if env else 0


def _echo_config(target_dir: Path, settings: dict) -> None:
    target_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={settings[k]}" for k in sorted(settings)]
    (target_dir / "run_config.txt").write_text("\n".join(lines) + "\n")


def _echo_config_for_file(out_file: Path, settings: dict) -> None:
    lines = [f"{k}={settings[k]}" for k in sorted(settings)]
    Path(str(out_file) + ".cfg").write_text("\n".join(lines) + "\n")


def cmd_prep(args) -> int:
    records = pl.read_assessments(args.ratings)
    manifest = pl.build_manifest(args.audio_dir, records, local_rater=args.rater)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pl.write_manifest(manifest, out)
    _echo_config_for_file(
        out,
        {"audio_dir": args.audio_dir, "ratings": args.ratings, "rater": args.rater},
    )
    by_status: dict[str, int] = {}
    for row in manifest:
        by_status[row.status] = by_status.get(row.status, 0) + 1
    print(f"manifest: {len(manifest)} files -> {out}")
    for status in pl.STATUSES:
        if status in by_status:
            print(f"  {status}: {by_status[status]}")
    return 0


def cmd_blind(args) -> int:
    manifest = pl.read_manifest(args.manifest)
    mapping = pl.blind_rename(manifest, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["file_id", "blinded_name"])
        for file_id, name in mapping.items():
            writer.writerow([file_id, name])
    pl.write_manifest(pl.apply_blinding(manifest, mapping), args.manifest)
    _echo_config_for_file(out, {"manifest": args.manifest, "seed": args.seed})
    print(f"blinded {len(mapping)} names -> {out}")
    return 0


def cmd_augment(args) -> int:
    manifest = pl.read_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_rows = []
    for row in manifest:
        if row.status not in ("kept", "edited"):
            continue
        clip = read_wav(row.original_name)
        if clip.rate != aug.TARGET_RATE:
            clip = resample(clip, aug.TARGET_RATE)
        clips = aug.augment_file(clip)
        for a in clips:
            write_wav(a.clip, out_dir / f"{a.name}.wav")
            index_rows.append(
                pl.IndexRow(
                    clip_name=a.name,
                    source_file_id=row.file_id,
                    pitch=a.pitch,
                    crop=a.crop,
                    flip=a.flipped,
                )
            )
        print(f"{row.file_id}: {len(clips)} clips")
    pl.write_index(index_rows, out_dir / "index.csv")
    _echo_config(out_dir, {"manifest": args.manifest, "out_dir": args.out_dir})
    print(f"augmented {len(index_rows)} clips -> {out_dir}")
    return 0


def cmd_featurize(args) -> int:
    index_path = Path(args.index)
    index = pl.read_index(index_path)
    clip_dir = index_path.parent
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for row in index:
        clip = read_wav(clip_dir / f"{row.clip_name}.wav")
        cep = cepstrogram(clip, tags=(row.pitch, row.crop, row.flip))
        write_features(out_dir / f"{row.clip_name}.ceps", cep)
    _echo_config(out_dir, {"index": args.index, "out_dir": args.out_dir})
    print(f"featurized {len(index)} clips -> {out_dir}")
    return 0


def cmd_split(args) -> int:
    manifest = pl.read_manifest(args.manifest)
    plan = pl.stratified_partition(manifest, k=args.k, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pl.write_fold_plan(plan, out)
    _echo_config_for_file(
        out, {"manifest": args.manifest, "k": args.k, "seed": args.seed}
    )
    sizes = ", ".join(str(len(t)) for t in plan.tables)
    print(f"fold plan: {args.k} tables of sizes [{sizes}], test table {plan.test_index} -> {out}")
    for dev in plan.deviations:
        print(f"  stratification deviation: {dev}")
    return 0


def _load_table_datasets(plan, index, manifest_rows, features_dir, seed):
    grades = {
        r.file_id: r.g_local
        for r in manifest_rows
        if r.status in ("kept", "edited") and r.g_local is not None
    }
    features_dir = Path(features_dir)
    datasets = []
    for t, table in enumerate(plan.tables):
        group = pl.group_augmented(table, index)
        if not group:
            raise DataError(f"fold table {t} has no augmented clips in the index")
        balanced = pl.balance_group(group, grades, seed=seed + t)
        table_data = []
        for row in balanced:
            x = read_features(features_dir / f"{row.clip_name}.ceps")
            table_data.append((x, grades[row.source_file_id], row.source_file_id))
        datasets.append(table_data)
    return datasets


def _train_config_from(args, file_cfg) -> TrainConfig:
    def pick(flag_value, key, fallback):
        if flag_value is not None:
            return flag_value
        if key in file_cfg:
            return file_cfg[key]
        return fallback

    seed = pick(args.seed, "seed", _default_seed())
    return TrainConfig(
        epochs=pick(args.epochs, "epochs", 500),
        learning_rate=pick(args.learning_rate, "learning_rate", 1e-3),
        batch_size=pick(args.batch_size, "batch_size", 32),
        lam=pick(getattr(args, "lam", None), "lambda", 0.001),
        seed=seed,
        precision=pick(args.precision, "precision", 32),
        stop_at_train_acc=pick(args.stop_at_train_acc, "stop_at_train_acc", None),
    )


def cmd_train(args) -> int:
    file_cfg = read_config(args.config) if args.config else {}
    cfg = _train_config_from(args, file_cfg)
    plan_path = args.plan or file_cfg.get("plan")
    features_dir = args.features or file_cfg.get("features")
    index_path = args.index or file_cfg.get("index")
    manifest_path = args.manifest or file_cfg.get("manifest")
    for name, value in (
        ("--plan", plan_path),
        ("--features", features_dir),
        ("--index", index_path),
        ("--manifest", manifest_path),
    ):
        if not value:
            raise DataError(f"{name} is required (flag or config key)")

    plan = pl.read_fold_plan(plan_path)
    index = pl.read_index(index_path)
    manifest_rows = pl.read_manifest(manifest_path)
    datasets = _load_table_datasets(plan, index, manifest_rows, features_dir, cfg.seed)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = cross_validate(datasets, plan.test_index, cfg)

    for fold in result.folds:
        fold_dir = out_dir / f"fold_{fold.fold}"
        fold_dir.mkdir(exist_ok=True)
        stats = fold.history.feature_stats
        save_checkpoint(
            fold.net,
            fold_dir / "model.ckpt",
            meta={
                "seed": cfg.seed + fold.fold,
                "epoch": fold.history.epochs_run,
                "best_epoch": fold.history.best_epoch,
                "feature_mean": repr(stats.mean),
                "feature_std": repr(stats.std),
            },
        )
        write_history_csv(fold.history, fold_dir / "history.csv")
        write_weight_track_csv(fold.history, fold_dir / "weight_track.csv")
        print(
            f"fold {fold.fold} (val table {fold.val_table}): "
            f"accuracy {fold.accuracy:.3f}, mae {fold.mae:.3f}, "
            f"final train accuracy {fold.history.train_acc[-1]:.3f}"
        )
    final_dir = out_dir / "final"
    final_dir.mkdir(exist_ok=True)
    stats = result.final_history.feature_stats
    save_checkpoint(
        result.final_net,
        final_dir / "model.ckpt",
        meta={
            "seed": cfg.seed + len(result.folds),
            "epoch": result.final_history.epochs_run,
            "best_epoch": result.final_history.best_epoch,
            "feature_mean": repr(stats.mean),
            "feature_std": repr(stats.std),
        },
    )
    write_history_csv(result.final_history, final_dir / "history.csv")
    write_weight_track_csv(result.final_history, final_dir / "weight_track.csv")
    with open(out_dir / "metrics.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["run", "accuracy", "mae"])
        for fold in result.folds:
            writer.writerow([f"fold_{fold.fold}", f"{fold.accuracy:.6f}", f"{fold.mae:.6f}"])
        writer.writerow(["cv_mean", f"{result.mean_accuracy:.6f}", f"{result.mean_mae:.6f}"])
        writer.writerow(["test", f"{result.test_accuracy:.6f}", f"{result.test_mae:.6f}"])
    _echo_config(
        out_dir,
        {
            "plan": plan_path,
            "features": features_dir,
            "index": index_path,
            "manifest": manifest_path,
            "epochs": cfg.epochs,
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "lambda": cfg.lam,
            "seed": cfg.seed,
            "precision": cfg.precision,
            "stop_at_train_acc": cfg.stop_at_train_acc,
        },
    )
    print(f"cv mean: accuracy {result.mean_accuracy:.3f}, mae {result.mean_mae:.3f}")
    print(
        f"final train accuracy {result.final_history.train_acc[-1]:.3f}; "
        f"test: accuracy {result.test_accuracy:.3f}, mae {result.test_mae:.3f}"
    )
    return 0


def _print_confusion(cm) -> None:
    print("confusion matrix (rows = reference, columns = predicted):")
    header = "      " + "".join(f"{c:>6d}" for c in range(4))
    print(header)
    for r in range(4):
        cells = "".join(f"{int(cm.counts[r, c]):>6d}" for c in range(4))
        print(f"  G={r}{cells}")


def cmd_evaluate(args) -> int:
    if args.predictions:
        refs, preds = [], []
        with open(args.predictions, newline="") as f:
            reader = csv.DictReader(f)
            if not reader.fieldnames or not {"ref", "pred"} <= set(reader.fieldnames):
                raise DataError(f"{args.predictions}: need columns ref,pred")
            for row in reader:
                refs.append(int(row["ref"]))
                preds.append(int(row["pred"]))
        cm = confusion(refs, preds)
    else:
        if not (args.model and args.features and args.labels):
            raise DataError("evaluate needs --predictions or --model/--features/--labels")
        net, meta = load_checkpoint(args.model)
        stats = feature_stats_from_meta(meta)
        if stats is None:
            raise DataError(f"{args.model}.meta does not carry feature stats")
        labels = {}
        with open(args.labels, newline="") as f:
            reader = csv.DictReader(f)
            if not reader.fieldnames or not {"clip_name", "G"} <= set(reader.fieldnames):
                raise DataError(f"{args.labels}: need columns clip_name,G")
            for row in reader:
                labels[row["clip_name"]] = int(row["G"])
        if not labels:
            raise DataError(f"{args.labels}: no labeled clips")
        refs, preds = [], []
        features_dir = Path(args.features)
        for clip_name in sorted(labels):
            x = read_features(features_dir / f"{clip_name}.ceps")
            activations, _ = net.forward(standardize(x, stats).astype(net.dtype))
            refs.append(labels[clip_name])
            preds.append(predict(activations))
        cm = confusion(refs, preds)
    acc = accuracy(cm)
    err = mae(cm)
    _print_confusion(cm)
    print(f"accuracy {acc:.3f}")
    print(f"mae {err:.3f}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["ref_grade"] + [f"pred_{c}" for c in range(4)])
            for r in range(4):
                writer.writerow([r] + [int(v) for v in cm.counts[r]])
            writer.writerow(["accuracy", f"{acc:.6f}", "", "", ""])
            writer.writerow(["mae", f"{err:.6f}", "", "", ""])
        _echo_config_for_file(
            out,
            {
                "model": args.model or "",
                "features": args.features or "",
                "labels": args.labels or "",
                "predictions": args.predictions or "",
            },
        )
    return 0


def cmd_agreement(args) -> int:
    records = pl.read_assessments(args.ratings)
    report = agreement_report(records)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_agreement_csv(report, out)
    _echo_config_for_file(out, {"ratings": args.ratings})
    for key in sorted(report.summary):
        print(f"{key}: {report.summary[key]:.3f}")
    print(f"report -> {out}")
    return 0


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = make_synthetic_dataset(args.n, seed=args.seed, duration=args.duration)
    records = []
    index_rows = []
    manifest_rows = []
    for clip, grade in dataset:
        write_wav(clip, out_dir / f"{clip.source_id}.wav")
        records.append(
            pl.AssessmentRecord(
                file_id=clip.source_id,
                rater_id="synthetic",
                instance=1,
                g=grade,
                comment=f"synthetic tier {grade}",
            )
        )
        index_rows.append(
            pl.IndexRow(
                clip_name=clip.source_id,
                source_file_id=clip.source_id,
                pitch="none",
                crop="C",
                flip=False,
            )
        )
        manifest_rows.append(
            pl.ManifestRow(
                file_id=clip.source_id,
                original_name=str(out_dir / f"{clip.source_id}.wav"),
                blinded_name="",
                speaker_id=clip.source_id,
                duration_s=clip.duration,
                status="kept",
                g_local=grade,
            )
        )
    pl.write_assessments(records, out_dir / "labels.csv")
    pl.write_index(index_rows, out_dir / "index.csv")
    pl.write_manifest(manifest_rows, out_dir / "manifest.csv")
    _echo_config(
        out_dir, {"n": args.n, "seed": args.seed, "duration": args.duration}
    )
    print(f"synthesized {len(dataset)} clips ({args.n} per grade) -> {out_dir}")
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wrote = []
    if args.history:
        hist_path = Path(args.history)
        hist_files = (
            sorted(hist_path.rglob("history.csv")) if hist_path.is_dir() else [hist_path]
        )
        if not hist_files:
            raise DataError(f"no history CSVs under {hist_path}")
        with open(out_dir / "boxplot.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["run", "final_val_acc", "final_val_mae"])
            for h in hist_files:
                with open(h, newline="") as hf:
                    rows = list(csv.DictReader(hf))
                if not rows:
                    raise DataError(f"{h}: empty history")
                last = rows[-1]
                run = h.parent.name if h.name == "history.csv" else h.stem
                writer.writerow([run, last["val_acc"], last["val_mae"]])
        wrote.append("boxplot.csv")
        track_files = (
            sorted(hist_path.rglob("weight_track.csv")) if hist_path.is_dir() else []
        )
        if hist_path.is_file():
            sibling = hist_path.parent / "weight_track.csv"
            if sibling.exists():
                track_files = [sibling]
        if track_files:
            with open(out_dir / "weight_evolution.csv", "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["run", "epoch", "weight", "value"])
                for t in track_files:
                    run = t.parent.name
                    with open(t, newline="") as tf:
                        reader = csv.reader(tf)
                        names = next(reader)[1:]
                        for row in reader:
                            epoch = row[0]
                            for name, value in zip(names, row[1:]):
                                writer.writerow([run, epoch, name, value])
            wrote.append("weight_evolution.csv")
    if args.weights:
        ckpt = Path(args.weights)
        if ckpt.is_dir():
            candidates = sorted(ckpt.rglob("*.ckpt"))
            if not candidates:
                raise DataError(f"no checkpoints under {ckpt}")
            ckpt = candidates[0]
        net, _ = load_checkpoint(ckpt)
        with open(out_dir / "weights.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["parameter", "index", "value"])
            for name, arr in net.dump_weights().items():
                for i, v in enumerate(arr.ravel()):
                    writer.writerow([name, i, f"{v:.7g}"])
        wrote.append("weights.csv")
        if args.input_features:
            meta = load_checkpoint(ckpt)[1]
            stats = feature_stats_from_meta(meta)
            x = read_features(args.input_features)
            if stats is not None:
                x = standardize(x, stats)
            acts = net.dump_activations(x.astype(net.dtype))
            with open(out_dir / "activations.csv", "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["layer", "index", "value"])
                for name, arr in acts.items():
                    for i, v in enumerate(np.asarray(arr).ravel()):
                        writer.writerow([name, i, f"{v:.7g}"])
            wrote.append("activations.csv")
    if not wrote:
        raise DataError("report needs --history and/or --weights")
    _echo_config(
        out_dir,
        {
            "history": args.history or "",
            "weights": args.weights or "",
            "input_features": args.input_features or "",
        },
    )
    print(f"report wrote {', '.join(wrote)} -> {out_dir}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="grbasnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", parents=[], help="build the preprocessing manifest")
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--ratings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rater", default="local", help="rater id supplying the working grade")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("blind", help="generate blinded review names")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_blind)

    p = sub.add_parser("augment", help="write augmented one-second clips + index")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("featurize", help="compute cepstrogram feature files")
    p.add_argument("--index", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("split", help="stratified speaker-disjoint fold plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="cross-validated training")
    p.add_argument("--plan")
    p.add_argument("--features")
    p.add_argument("--index")
    p.add_argument("--manifest")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", type=int, choices=(32, 64))
    p.add_argument("--stop-at-train-acc", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="confusion matrix + accuracy + MAE")
    p.add_argument("--model")
    p.add_argument("--features")
    p.add_argument("--labels", help="CSV with clip_name,G columns")
    p.add_argument("--predictions", help="CSV with ref,pred columns")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("agreement", help="inter/intra-rater agreement report")
    p.add_argument("--ratings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("synth", help="synthetic 4-tier corpus")
    p.add_argument("--n", type=int, required=True, help="clips per grade")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out-dir", required=True)
    p.add_argument("--duration", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="CSV series for plots and dumps")
    p.add_argument("--history")
    p.add_argument("--weights")
    p.add_argument("--input-features")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except GrbasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
