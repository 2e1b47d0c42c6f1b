"""Adam optimizer, epoch loop, cross-validation orchestration, evaluation.

Training is fixed-epoch (no validation-based early stopping); runs are
bit-reproducible given (seed, data, config) because shuffling, batching and
gradient reduction all follow a fixed order.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .features import FeatureStats, fit_stats, standardize
from .metrics import ConfusionMatrix, accuracy, confusion, mae
from .model import GrbasNet, one_hot, predict

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
EVAL_BATCH = 64


@dataclass
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 1e-3
    batch_size: int = 32
    lam: float = 0.001
    seed: int = 0
    precision: int = 32
    # optional convenience for smoke runs: stop once the epoch's running
    # training accuracy reaches this value (None = fixed-epoch training)
    stop_at_train_acc: float | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate <= 0 or self.batch_size < 1:
            raise DataError("epochs must be >= 0, learning_rate > 0, batch_size >= 1")
        if self.lam < 0:
            raise DataError(f"lambda must be >= 0, got {self.lam}")
        if self.precision not in (32, 64):
            raise DataError(f"precision must be 32 or 64, got {self.precision}")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64


@dataclass
class TrainHistory:
    """Per-epoch series plus per-epoch snapshots of the tracked weights."""

    loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    weight_names: list[str] = field(default_factory=list)
    weight_track: list[np.ndarray] = field(default_factory=list)
    best_epoch: int = -1
    feature_stats: FeatureStats | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.loss)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params, grads, state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, applied to the parameters in place."""
    state.t += 1
    correction1 = 1.0 - ADAM_BETA1**state.t
    correction2 = 1.0 - ADAM_BETA2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DataError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(g)
        m_hat = m / correction1
        v_hat = v / correction2
        p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return state


def _as_dataset(pairs, dtype):
    """Normalize (cepstrogram-or-array, grade-or-one-hot) pairs."""
    xs, grades = [], []
    for x, y in pairs:
        values = x.values if hasattr(x, "values") else np.asarray(x)
        xs.append(np.asarray(values, dtype=dtype))
        y_arr = np.asarray(y)
        if y_arr.ndim == 1 and y_arr.size == 4:
            grades.append(int(np.argmax(y_arr)))
        else:
            grades.append(int(y_arr))
    return np.stack(xs), np.asarray(grades, dtype=np.int64)


_TRACKED_PREFIXES = ("b2_",)  # Fig-6-style evolution is for the B2 layers


def _tracked_names(net: GrbasNet) -> list[str]:
    names = []
    for pname, arr in net.params.items():
        if pname.startswith(_TRACKED_PREFIXES):
            for i in range(arr.size):
                names.append(f"{pname}[{i}]")
    return names


def _tracked_values(net: GrbasNet) -> np.ndarray:
    parts = [
        arr.ravel()
        for pname, arr in net.params.items()
        if pname.startswith(_TRACKED_PREFIXES)
    ]
    return np.concatenate(parts).astype(np.float32)


def train(net: GrbasNet, train_set, val_set, cfg: TrainConfig):
    """Train in place; returns (net, TrainHistory).

    Feature standardization is fitted on the training set only and applied
    to both sets.  Each epoch shuffles with the seeded generator and steps
    on mini-batch mean gradients of the BCE + L2 loss.  The reported
    training accuracy is the running accuracy over the epoch's mini-batch
    forward passes; validation metrics are computed at each epoch end.
    """
    if not train_set:
        raise DataError("training set is empty")
    dtype = cfg.dtype
    xs_raw, grades = _as_dataset(train_set, np.float64)
    stats = fit_stats(list(xs_raw))
    xs = standardize(xs_raw, stats).astype(dtype)
    targets = np.stack([one_hot(g) for g in grades]).astype(dtype)

    if val_set:
        val_x_raw, val_grades = _as_dataset(val_set, np.float64)
        val_x = standardize(val_x_raw, stats).astype(dtype)
    else:
        val_x, val_grades = None, None

    history = TrainHistory(weight_names=_tracked_names(net), feature_stats=stats)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_params(net.params)
    n = len(xs)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        n_correct = 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grads, activations = net.loss_and_grads(
                xs[batch], targets[batch], cfg.lam
            )
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {n_batches}"
                )
            adam_step(net.params, grads, state, cfg.learning_rate)
            epoch_loss += loss
            n_batches += 1
            n_correct += int(np.sum(predict(activations) == grades[batch]))
        history.loss.append(epoch_loss / n_batches)
        train_acc = n_correct / n
        history.train_acc.append(train_acc)
        if val_x is not None:
            cm, acc, err = _evaluate_arrays(net, val_x, val_grades)
            history.val_acc.append(acc)
            history.val_mae.append(err)
        else:
            history.val_acc.append(float("nan"))
            history.val_mae.append(float("nan"))
        history.weight_track.append(_tracked_values(net))
        if cfg.stop_at_train_acc is not None and train_acc >= cfg.stop_at_train_acc:
            break

    if history.val_acc and not all(np.isnan(history.val_acc)):
        history.best_epoch = int(np.nanargmax(history.val_acc))
    elif history.train_acc:
        history.best_epoch = int(np.argmax(history.train_acc))
    return net, history


def _evaluate_arrays(net: GrbasNet, xs: np.ndarray, grades: np.ndarray):
    preds = []
    for start in range(0, len(xs), EVAL_BATCH):
        activations, _ = net.forward(xs[start : start + EVAL_BATCH])
        preds.extend(np.atleast_1d(predict(activations)))
    cm = confusion(grades.tolist(), preds)
    return cm, accuracy(cm), mae(cm)


def evaluate(net: GrbasNet, dataset):
    """(ConfusionMatrix, accuracy, MAE) on a standardized labeled set."""
    if not dataset:
        raise DataError("evaluation set is empty")
    xs, grades = _as_dataset(dataset, net.dtype)
    return _evaluate_arrays(net, xs, grades)


@dataclass
class FoldResult:
    fold: int
    val_table: int
    accuracy: float
    mae: float
    history: TrainHistory
    net: GrbasNet


@dataclass
class CVResult:
    folds: list[FoldResult]
    mean_accuracy: float
    mean_mae: float
    test_confusion: ConfusionMatrix
    test_accuracy: float
    test_mae: float
    final_history: TrainHistory
    final_net: GrbasNet


def cross_validate(datasets, test_index: int, cfg: TrainConfig) -> CVResult:
    """k-fold CV over the non-test tables plus a final test evaluation.

    datasets: one list per table of (features, grade, source_file_id)
    triples.  Aborts if any source file appears in more than one table.
    The final model is trained on all CV tables and evaluated on the test
    table with its own training-set statistics.
    """
    k = len(datasets)
    if not 0 <= test_index < k:
        raise DataError(f"test index {test_index} outside 0..{k - 1}")
    seen: dict[str, int] = {}
    for t, table in enumerate(datasets):
        for _, _, source in table:
            if source in seen and seen[source] != t:
                raise DataError(
                    f"fold-plan leakage: source file {source!r} appears in "
                    f"tables {seen[source]} and {t}"
                )
            seen[source] = t

    cv_tables = [i for i in range(k) if i != test_index]
    folds = []
    for fold, val_table in enumerate(cv_tables):
        train_pairs = [
            (x, g)
            for t in cv_tables
            if t != val_table
            for x, g, _ in datasets[t]
        ]
        val_pairs = [(x, g) for x, g, _ in datasets[val_table]]
        net = GrbasNet(seed=cfg.seed + fold, dtype=cfg.dtype)
        _, history = train(net, train_pairs, val_pairs, cfg)
        folds.append(
            FoldResult(
                fold=fold,
                val_table=val_table,
                accuracy=history.val_acc[-1] if history.val_acc else float("nan"),
                mae=history.val_mae[-1] if history.val_mae else float("nan"),
                history=history,
                net=net,
            )
        )

    final_net = GrbasNet(seed=cfg.seed + len(cv_tables), dtype=cfg.dtype)
    final_train = [(x, g) for t in cv_tables for x, g, _ in datasets[t]]
    test_pairs = [(x, g) for x, g, _ in datasets[test_index]]
    _, final_history = train(final_net, final_train, test_pairs, cfg)
    test_x_raw, test_grades = _as_dataset(test_pairs, np.float64)
    test_x = standardize(test_x_raw, final_history.feature_stats).astype(cfg.dtype)
    test_cm, test_acc, test_mae = _evaluate_arrays(final_net, test_x, test_grades)

    return CVResult(
        folds=folds,
        mean_accuracy=float(np.mean([f.accuracy for f in folds])),
        mean_mae=float(np.mean([f.mae for f in folds])),
        test_confusion=test_cm,
        test_accuracy=test_acc,
        test_mae=test_mae,
        final_history=final_history,
        final_net=final_net,
    )


def write_history_csv(history: TrainHistory, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss", "train_acc", "val_acc", "val_mae"])
        for e in range(history.epochs_run):
            writer.writerow(
                [
                    e,
                    f"{history.loss[e]:.8f}",
                    f"{history.train_acc[e]:.6f}",
                    f"{history.val_acc[e]:.6f}",
                    f"{history.val_mae[e]:.6f}",
                ]
            )


def write_weight_track_csv(history: TrainHistory, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch"] + history.weight_names)
        for e, snapshot in enumerate(history.weight_track):
            writer.writerow([e] + [f"{v:.7g}" for v in snapshot])
