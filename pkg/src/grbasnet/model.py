"""The fixed two-path grade-of-dysphonia network.

Input: a standardized 420 x 117 cepstrogram.  Four Gaussian-initialized
smoothing convolutions feed two feature paths: Path 1 (pooling and
convolutions aimed at amplitude/frequency perturbation patterns) and Path 2
(global max/avg pooling per smoothing scale, a peak-minus-mean prominence
in the spirit of smoothed cepstral peak prominence).  A small dense head
ends in four sigmoid outputs decoded by argmax.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError
from .features import N_FRAMES, N_QUEF, FeatureStats
from .nn import (
    ConvLayer,
    DenseLayer,
    PoolSpec,
    conv2d_forward,
    conv2d_backward,
    dense_forward,
    dense_backward,
    l2_penalty,
    pool2d_forward,
    pool2d_backward,
)

A1_HEIGHTS = (3, 11, 21, 31)
PARAM_COUNT = 3769
BCE_EPS = 1e-7

POOL_B1 = PoolSpec("max", (3, 5), (3, 5))
POOL_B3 = PoolSpec("max", (6, 2), (6, 2))
POOL_GLOBAL_MAX = PoolSpec("max", (N_QUEF, N_FRAMES), (N_QUEF, N_FRAMES))
POOL_GLOBAL_AVG = PoolSpec("avg", (N_QUEF, N_FRAMES), (N_QUEF, N_FRAMES))

# forward intermediate shapes, asserted by tests and the shape pipeline check
EXPECTED_SHAPES = {
    "a1": (420, 117, 1),
    "b1": (140, 23, 1),
    "b2": (140, 23, 2),
    "b3": (23, 11, 2),
    "b4": (23, 11, 8),
    "b5": (23, 1, 2),
    "c3": (8,),
    "c4": (2,),
    "d1": (48,),
    "d2": (3,),
    "d3": (10,),
    "out": (4,),
}


def gaussian_kernel(n: int, dtype=np.float64) -> np.ndarray:
    """Unit-sum Gaussian of length n with sigma = n/6 (kernel spans +-3 sigma)."""
    sigma = n / 6.0
    i = np.arange(n, dtype=np.float64)
    g = np.exp(-((i - (n - 1) / 2.0) ** 2) / (2.0 * sigma**2))
    g /= g.sum()
    return g.astype(dtype)


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class GrbasNet:
    """Two-path network predicting grade G in one-hot form (4 sigmoids)."""

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        dt = self.dtype

        self.a1 = []
        for n in A1_HEIGHTS:
            kernel = gaussian_kernel(n, dt).reshape(n, 1, 1, 1)
            self.a1.append(
                ConvLayer(kernel, np.zeros(1, dt), (1, 1), "same", "linear")
            )
        # draw order is fixed: b2_0..b2_3, b5, c4, d2, d3, out
        self.b2 = [
            ConvLayer(
                _glorot(rng, (10, 32, 1, 2), 10 * 32 * 1, 10 * 32 * 2, dt),
                np.zeros(2, dt),
                (1, 1),
                "same",
                "relu",
            )
            for _ in range(4)
        ]
        self.b5 = ConvLayer(
            _glorot(rng, (5, 11, 8, 2), 5 * 11 * 8, 5 * 11 * 2, dt),
            np.zeros(2, dt),
            (1, 11),
            "same",
            "relu",
        )
        self.c4 = DenseLayer(_glorot(rng, (8, 2), 8, 2, dt), np.zeros(2, dt), "relu")
        self.d2 = DenseLayer(_glorot(rng, (48, 3), 48, 3, dt), np.zeros(3, dt), "relu")
        self.d3 = DenseLayer(_glorot(rng, (3, 10), 3, 10, dt), np.zeros(10, dt), "relu")
        self.out = DenseLayer(
            _glorot(rng, (10, 4), 10, 4, dt), np.zeros(4, dt), "sigmoid"
        )

        count = sum(a.size for a in self.params.values())
        if count != PARAM_COUNT:
            raise ShapeError(f"parameter count {count} != expected {PARAM_COUNT}")

    @property
    def params(self) -> dict[str, np.ndarray]:
        """Named trainable parameters; the arrays are the live ones."""
        out = {}
        for s, layer in enumerate(self.a1):
            out[f"a1_{s}/kernel"] = layer.kernels
            out[f"a1_{s}/bias"] = layer.biases
        for s, layer in enumerate(self.b2):
            out[f"b2_{s}/kernel"] = layer.kernels
            out[f"b2_{s}/bias"] = layer.biases
        out["b5/kernel"] = self.b5.kernels
        out["b5/bias"] = self.b5.biases
        for name, layer in (("c4", self.c4), ("d2", self.d2), ("d3", self.d3), ("out", self.out)):
            out[f"{name}/weight"] = layer.weights
            out[f"{name}/bias"] = layer.biases
        return out

    def regularized_weights(self) -> dict[str, np.ndarray]:
        """Weight tensors under L2 (B2 and B5 kernels; biases excluded)."""
        out = {f"b2_{s}/kernel": layer.kernels for s, layer in enumerate(self.b2)}
        out["b5/kernel"] = self.b5.kernels
        return out

    def forward(self, x: np.ndarray):
        """Run the network; returns (sigmoid activations, cache).

        x: standardized cepstrogram values, (420, 117) or a batch
        (N, 420, 117).  Output is (4,) or (N, 4) accordingly.
        """
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 2
        xb = x[None] if single else x
        if xb.ndim != 3 or xb.shape[1:] != (N_QUEF, N_FRAMES):
            raise ShapeError(
                f"expected input ( {N_QUEF}, {N_FRAMES} ) or batch thereof, got {x.shape}"
            )
        xb = xb[..., None]  # (N, 420, 117, 1)
        n = xb.shape[0]

        cache = {"single": single, "n": n, "acts": {}}
        acts = cache["acts"]
        b3_outs = []
        c1_vals = []
        c2_vals = []
        for s in range(4):
            a1, ca1 = conv2d_forward(xb, self.a1[s])
            b1, cb1 = pool2d_forward(a1, POOL_B1)
            b2, cb2 = conv2d_forward(b1, self.b2[s])
            b3, cb3 = pool2d_forward(b2, POOL_B3)
            c1, cc1 = pool2d_forward(a1, POOL_GLOBAL_MAX)
            c2, cc2 = pool2d_forward(a1, POOL_GLOBAL_AVG)
            cache[f"scale{s}"] = (ca1, cb1, cb2, cb3, cc1, cc2)
            acts[f"a1_{s}"] = a1
            acts[f"b1_{s}"] = b1
            acts[f"b2_{s}"] = b2
            acts[f"b3_{s}"] = b3
            acts[f"c1_{s}"] = c1
            acts[f"c2_{s}"] = c2
            b3_outs.append(b3)
            c1_vals.append(c1.reshape(n, 1))
            c2_vals.append(c2.reshape(n, 1))

        b4 = np.concatenate(b3_outs, axis=-1)  # (N, 23, 11, 8)
        b5, cb5 = conv2d_forward(b4, self.b5)  # (N, 23, 1, 2)
        path1 = b5.reshape(n, -1)  # (N, 46)
        c3 = np.concatenate(c1_vals + c2_vals, axis=1)  # (N, 8)
        c4, cc4 = dense_forward(c3, self.c4)
        d1 = np.concatenate([path1, c4], axis=1)  # (N, 48)
        d2, cd2 = dense_forward(d1, self.d2)
        d3, cd3 = dense_forward(d2, self.d3)
        out, cout = dense_forward(d3, self.out)

        cache["head"] = (cb5, cc4, cd2, cd3, cout)
        acts.update(b4=b4, b5=b5, c3=c3, c4=c4, d1=d1, d2=d2, d3=d3, out=out)
        return (out[0] if single else out), cache

    def backward(self, cache: dict, gout: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar w.r.t. every parameter given d(scalar)/d(out)."""
        n = cache["n"]
        gout = np.asarray(gout)
        if gout.ndim == 1:
            gout = gout[None]
        cb5, cc4, cd2, cd3, cout = cache["head"]
        grads = {}

        gd3, gw, gb = dense_backward(self.out, cout, gout)
        grads["out/weight"], grads["out/bias"] = gw, gb
        gd2, gw, gb = dense_backward(self.d3, cd3, gd3)
        grads["d3/weight"], grads["d3/bias"] = gw, gb
        gd1, gw, gb = dense_backward(self.d2, cd2, gd2)
        grads["d2/weight"], grads["d2/bias"] = gw, gb

        gpath1 = gd1[:, :46].reshape(n, 23, 1, 2)
        gc4 = gd1[:, 46:]
        gc3, gw, gb = dense_backward(self.c4, cc4, gc4)
        grads["c4/weight"], grads["c4/bias"] = gw, gb

        gb4, gk, gb = conv2d_backward(self.b5, cb5, gpath1)
        grads["b5/kernel"], grads["b5/bias"] = gk, gb

        for s in range(4):
            ca1, cb1, cb2, cb3, cc1, cc2 = cache[f"scale{s}"]
            gb3 = gb4[..., 2 * s : 2 * s + 2]
            gb2 = pool2d_backward(POOL_B3, cb3, gb3)
            gb1, gk, gb = conv2d_backward(self.b2[s], cb2, gb2)
            grads[f"b2_{s}/kernel"], grads[f"b2_{s}/bias"] = gk, gb
            ga1 = pool2d_backward(POOL_B1, cb1, gb1)
            ga1 += pool2d_backward(
                POOL_GLOBAL_MAX, cc1, gc3[:, s].reshape(n, 1, 1, 1)
            )
            ga1 += pool2d_backward(
                POOL_GLOBAL_AVG, cc2, gc3[:, 4 + s].reshape(n, 1, 1, 1)
            )
            # the network input needs no gradient
            _, gk, gb = conv2d_backward(self.a1[s], ca1, ga1, need_input_grad=False)
            grads[f"a1_{s}/kernel"], grads[f"a1_{s}/bias"] = gk, gb
        return grads

    def loss(self, activations: np.ndarray, target: np.ndarray, lam: float) -> float:
        """Summed per-output binary cross-entropy plus L2 on B2/B5 kernels."""
        bce = bce_loss(activations, target)
        penalty, _ = l2_penalty(list(self.regularized_weights().values()), lam)
        return bce + penalty

    def loss_and_grads(self, x: np.ndarray, targets: np.ndarray, lam: float):
        """(loss, grads, activations) for a sample or batch.

        The data term is the batch mean of per-sample BCE sums; the L2
        penalty enters once per batch.
        """
        activations, cache = self.forward(x)
        acts = activations[None] if activations.ndim == 1 else activations
        targs = np.asarray(targets, dtype=acts.dtype)
        if targs.ndim == 1:
            targs = targs[None]
        _validate_targets(targs)
        n = acts.shape[0]
        clamped = np.clip(acts, BCE_EPS, 1.0 - BCE_EPS)
        bce = float(
            -np.sum(targs * np.log(clamped) + (1 - targs) * np.log1p(-clamped)) / n
        )
        inside = (acts > BCE_EPS) & (acts < 1.0 - BCE_EPS)
        gout = (-targs / clamped + (1 - targs) / (1 - clamped)) * inside / n
        grads = self.backward(cache, gout.astype(acts.dtype))
        penalty, reg_grads = l2_penalty(list(self.regularized_weights().values()), lam)
        for name, g in zip(self.regularized_weights(), reg_grads):
            grads[name] = grads[name] + g
        return bce + penalty, grads, activations

    def dump_weights(self) -> dict[str, np.ndarray]:
        """Copies of every named parameter."""
        return {name: arr.copy() for name, arr in self.params.items()}

    def dump_activations(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Every intermediate output for one input, without the batch axis."""
        out, cache = self.forward(x)
        return {name: np.asarray(val[0]).copy() for name, val in cache["acts"].items()}


def _validate_targets(targets: np.ndarray) -> None:
    if targets.shape[-1] != 4:
        raise DataError(f"targets must have 4 entries per sample, got {targets.shape}")
    ok_onehot = np.all(np.isin(targets, (0.0, 1.0))) and np.all(
        targets.sum(axis=-1) == 1.0
    )
    if not ok_onehot:
        raise DataError("targets must be one-hot vectors of length 4")


def bce_loss(activations: np.ndarray, target: np.ndarray) -> float:
    """Sum over outputs of -[t log a + (1-t) log(1-a)], activations clamped."""
    a = np.asarray(activations, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if a.ndim == 1:
        a, t = a[None], t[None]
    _validate_targets(t)
    a = np.clip(a, BCE_EPS, 1.0 - BCE_EPS)
    per_sample = -np.sum(t * np.log(a) + (1 - t) * np.log1p(-a), axis=-1)
    return float(per_sample.mean())


def predict(activations: np.ndarray) -> int | np.ndarray:
    """Argmax grade; ties break toward the lower grade."""
    a = np.asarray(activations)
    if a.ndim == 1:
        return int(np.argmax(a))
    return np.argmax(a, axis=-1)


def one_hot(grade: int) -> np.ndarray:
    if not 0 <= int(grade) <= 3:
        raise DataError(f"grade {grade} outside 0..3")
    t = np.zeros(4)
    t[int(grade)] = 1.0
    return t


def activation_pattern(cache: dict) -> bytes:
    """Hash of every pool argmax / ReLU on-off pattern in a forward cache.

    Two evaluations with equal patterns lie on the same smooth piece of the
    piecewise-differentiable loss; finite differences are only meaningful
    between such points.
    """
    h = hashlib.blake2b(digest_size=16)
    for s in range(4):
        for c in cache[f"scale{s}"]:
            if c.get("kinks") is not None:
                h.update(c["kinks"].tobytes())
    for c in cache["head"]:
        if c.get("kinks") is not None:
            h.update(c["kinks"].tobytes())
    return h.digest()


def loss_with_pattern(net: GrbasNet, x, target, lam: float):
    """(loss, activation pattern) for finite-difference gradient checks."""
    activations, cache = net.forward(x)
    loss = net.loss(activations, target, lam)
    clamp_mask = (activations > BCE_EPS) & (activations < 1.0 - BCE_EPS)
    return loss, activation_pattern(cache) + clamp_mask.tobytes()


CHECKPOINT_HEADER = b"GRBASNET v1\n"


def save_checkpoint(net: GrbasNet, path, meta: dict | None = None) -> None:
    """Header line, then per parameter: name+shape line and raw f32 LE data."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_HEADER)
        for name, arr in net.params.items():
            dims = " ".join(str(d) for d in arr.shape)
            f.write(f"{name} {dims}\n".encode())
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    if meta is not None:
        lines = [f"{k}={meta[k]}" for k in sorted(meta)]
        Path(str(path) + ".meta").write_text("\n".join(lines) + "\n")


def load_checkpoint(path, dtype=np.float32) -> tuple[GrbasNet, dict]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such checkpoint: {p}")
    net = GrbasNet(seed=0, dtype=dtype)
    params = net.params
    with open(p, "rb") as f:
        header = f.readline()
        if header != CHECKPOINT_HEADER:
            raise DataError(f"{p}: bad checkpoint header {header!r}")
        for name, arr in params.items():
            line = f.readline().decode().split()
            if not line or line[0] != name:
                raise DataError(f"{p}: expected parameter {name!r}, found {line}")
            shape = tuple(int(d) for d in line[1:])
            if shape != arr.shape:
                raise DataError(f"{p}: parameter {name} has shape {shape}, want {arr.shape}")
            raw = f.read(arr.size * 4)
            if len(raw) != arr.size * 4:
                raise DataError(f"{p}: truncated data for parameter {name}")
            arr[...] = np.frombuffer(raw, dtype="<f4").reshape(arr.shape)
    meta = {}
    meta_path = Path(str(path) + ".meta")
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                meta[key] = value
    return net, meta


def feature_stats_from_meta(meta: dict) -> FeatureStats | None:
    if "feature_mean" in meta and "feature_std" in meta:
        return FeatureStats(float(meta["feature_mean"]), float(meta["feature_std"]))
    return None
