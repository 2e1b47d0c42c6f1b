"""Minimal tensor/layer toolkit: conv2d, pooling, dense, activations, L2.

Every operation has a forward variant returning a cache and an analytic
backward consuming it.  Spatial tensors are laid out height x width x
channels; an optional leading batch axis is accepted everywhere and the
output matches the input's layout.  Upstream gradients passed to backward
are taken as-is, so parameter gradients come back summed over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

_CONV_ACTIVATIONS = ("linear", "relu")
_DENSE_ACTIVATIONS = ("linear", "relu", "sigmoid")
_POOL_KINDS = ("max", "avg")
_PAD_MODES = ("same", "valid")
_COLUMN_DIRECT_MAX = 16  # column kernels up to this height skip the FFT


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu_grad(x: np.ndarray) -> np.ndarray:
    """d relu / dx evaluated at pre-activation x (0 at the kink)."""
    return (x > 0).astype(x.dtype)


def sigmoid_grad(y: np.ndarray) -> np.ndarray:
    """d sigmoid / dx expressed through the activation value y."""
    return y * (1.0 - y)


@dataclass
class ConvLayer:
    """2-D convolution: kernels (kh, kw, cin, cout), per-output-channel bias."""

    kernels: np.ndarray
    biases: np.ndarray
    stride: tuple[int, int] = (1, 1)
    padding: str = "same"
    activation: str = "linear"

    def __post_init__(self):
        if self.kernels.ndim != 4:
            raise ShapeError(f"conv kernels must be 4-D, got {self.kernels.shape}")
        if min(self.kernels.shape) < 1:
            raise ShapeError(f"conv kernel extents must be >= 1: {self.kernels.shape}")
        if self.biases.shape != (self.kernels.shape[3],):
            raise ShapeError(
                f"conv biases {self.biases.shape} do not match {self.kernels.shape[3]} kernels"
            )
        if min(self.stride) < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.padding not in _PAD_MODES:
            raise ShapeError(f"unknown padding mode {self.padding!r}")
        if self.activation not in _CONV_ACTIVATIONS:
            raise ShapeError(f"unsupported conv activation {self.activation!r}")


@dataclass
class DenseLayer:
    """Fully connected layer: weights (n_in, n_out), activation applied last."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ShapeError(f"dense weights must be 2-D, got {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[1],):
            raise ShapeError(
                f"dense biases {self.biases.shape} do not match {self.weights.shape}"
            )
        if self.activation not in _DENSE_ACTIVATIONS:
            raise ShapeError(f"unsupported dense activation {self.activation!r}")


@dataclass
class PoolSpec:
    """Max or average pooling with valid padding."""

    kind: str
    window: tuple[int, int]
    stride: tuple[int, int]

    def __post_init__(self):
        if self.kind not in _POOL_KINDS:
            raise ShapeError(f"unknown pool kind {self.kind!r}")
        if min(self.window) < 1 or min(self.stride) < 1:
            raise ShapeError(f"pool window/stride must be >= 1: {self.window}/{self.stride}")


def _as_batch(x: np.ndarray, rank: int):
    """Promote a single sample to a batch of one; report whether we did."""
    x = np.asarray(x)
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected a rank-{rank} sample or batch, got shape {x.shape}")


def _pad_amounts(size: int, k: int, stride: int, mode: str) -> tuple[int, int]:
    if mode == "same":
        out = -(-size // stride)  # ceil division
        total = max((out - 1) * stride + k - size, 0)
        return total // 2, total - total // 2
    if k > size:
        raise ShapeError(f"kernel extent {k} exceeds input extent {size} under 'valid'")
    return 0, 0


def _fast_fft_len(n: int) -> int:
    """Smallest 5-smooth integer >= n (FFT-friendly size)."""
    best = 1 << (n - 1).bit_length()
    p5 = 1
    while p5 < best:
        p35 = p5
        while p35 < best:
            p = p35
            while p < n:
                p *= 2
            best = min(best, p)
            p35 *= 3
        p5 *= 5
    return best


def conv2d_forward(x: np.ndarray, layer: ConvLayer):
    xb, single = _as_batch(x, 3)
    kh, kw, cin, cout = layer.kernels.shape
    if xb.shape[3] != cin:
        raise ShapeError(
            f"input has {xb.shape[3]} channels, kernels expect {cin}"
        )
    sh, sw = layer.stride
    h, w = xb.shape[1], xb.shape[2]
    pt, pb = _pad_amounts(h, kh, sh, layer.padding)
    pl, pr = _pad_amounts(w, kw, sw, layer.padding)
    xpad = np.pad(xb, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cache = {
        "pads": (pt, pb, pl, pr),
        "in_shape": xb.shape,
        "single": single,
    }
    if sh == 1 and sw == 1 and kw == 1 and kh <= _COLUMN_DIRECT_MAX:
        # short column kernels: a handful of shifted multiply-adds beats FFT
        p_out = xpad.shape[1] - kh + 1
        z = np.zeros(
            (xb.shape[0], p_out, xpad.shape[2], cout),
            dtype=np.result_type(xb.dtype, layer.kernels.dtype),
        )
        for i in range(kh):
            z += xpad[:, i : i + p_out] @ layer.kernels[i, 0]
        cache["xpad"] = xpad
        cache["column"] = True
    elif sh == 1 and sw == 1 and kw == 1:
        # column kernels need only a 1-D transform along the height axis
        size = _fast_fft_len(xpad.shape[1])
        xf = np.fft.rfft(xpad, n=size, axis=1)
        kf = np.fft.rfft(layer.kernels[:, 0], n=size, axis=0)
        yf = np.einsum("nfwc,fco->nfwo", xf, np.conj(kf))
        full = np.fft.irfft(yf, n=size, axis=1)
        p_out = xpad.shape[1] - kh + 1
        z = full[:, :p_out].astype(xb.dtype, copy=False)
        cache["xf"] = xf
        cache["kf"] = kf
        cache["padded_size"] = size
    elif sh == 1 and sw == 1:
        # stride-1 convolutions run in the frequency domain; any circular
        # size >= the padded extent keeps the valid region wrap-free, so
        # round up to FFT-friendly lengths
        size = (_fast_fft_len(xpad.shape[1]), _fast_fft_len(xpad.shape[2]))
        xf = np.fft.rfft2(xpad, s=size, axes=(1, 2))
        kf = np.fft.rfft2(layer.kernels, s=size, axes=(0, 1))
        yf = np.einsum("npqc,pqco->npqo", xf, np.conj(kf))
        full = np.fft.irfft2(yf, s=size, axes=(1, 2))
        p_out = xpad.shape[1] - kh + 1
        q_out = xpad.shape[2] - kw + 1
        z = full[:, :p_out, :q_out].astype(xb.dtype, copy=False)
        cache["xf"] = xf
        cache["kf"] = kf
        cache["padded_size"] = size
    else:
        view = sliding_window_view(xpad, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
        z = np.einsum("npqcij,ijco->npqo", view, layer.kernels, optimize=True)
        cache["xpad"] = xpad
    z += layer.biases
    if layer.activation == "relu":
        y = relu(z)
        cache["mask"] = z > 0
    else:
        y = z
        cache["mask"] = None
    cache["kinks"] = cache["mask"]
    return (y[0] if single else y), cache


def conv2d(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    return conv2d_forward(x, layer)[0]


def conv2d_backward(layer: ConvLayer, cache: dict, gy: np.ndarray, need_input_grad: bool = True):
    """Returns (input gradient, kernel gradient, bias gradient).

    need_input_grad=False skips the input-gradient computation (first layer
    of a network) and returns None in its place.
    """
    gyb, _ = _as_batch(gy, 3)
    kh, kw, cin, cout = layer.kernels.shape
    sh, sw = layer.stride
    gz = gyb * cache["mask"] if cache["mask"] is not None else gyb
    gb = gz.sum(axis=(0, 1, 2))
    pt, _, pl, _ = cache["pads"]
    n, h, w, c = cache["in_shape"]
    p, q = gz.shape[1], gz.shape[2]
    gx = None

    if cache.get("column"):
        xpad = cache["xpad"]
        gk = np.empty_like(layer.kernels)
        for i in range(kh):
            gk[i, 0] = np.einsum("npwc,npwo->co", xpad[:, i : i + p], gz)
        if need_input_grad:
            gxpad = np.zeros_like(xpad)
            for i in range(kh):
                gxpad[:, i : i + p] += gz @ layer.kernels[i, 0].T
            gx = gxpad[:, pt : pt + h]
    elif sh == 1 and sw == 1 and kw == 1:
        xf = cache["xf"]
        size = cache["padded_size"]
        gzf = np.fft.rfft(gz, n=size, axis=1)
        gkf = np.einsum("nfwc,nfwo->fco", xf, np.conj(gzf))
        gk = np.fft.irfft(gkf, n=size, axis=0)[:kh].astype(layer.kernels.dtype, copy=False)
        gk = gk[:, None]  # restore the kw=1 axis
        if need_input_grad:
            gxf = np.einsum("nfwo,fco->nfwc", gzf, cache["kf"])
            gxpad = np.fft.irfft(gxf, n=size, axis=1)
            gx = gxpad[:, pt : pt + h].astype(gz.dtype, copy=False)
    elif sh == 1 and sw == 1:
        xf = cache["xf"]
        size = cache["padded_size"]
        gzf = np.fft.rfft2(gz, s=size, axes=(1, 2))
        # kernel gradient: batch-summed valid correlation of xpad with gz
        gkf = np.einsum("npqc,npqo->pqco", xf, np.conj(gzf))
        gk = np.fft.irfft2(gkf, s=size, axes=(0, 1))[:kh, :kw].astype(
            layer.kernels.dtype, copy=False
        )
        if need_input_grad:
            # input gradient: full convolution of gz with the kernel
            gxf = np.einsum("npqo,pqco->npqc", gzf, cache["kf"])
            gxpad = np.fft.irfft2(gxf, s=size, axes=(1, 2))
            gx = gxpad[:, pt : pt + h, pl : pl + w].astype(gz.dtype, copy=False)
    else:
        xpad = cache["xpad"]
        view = sliding_window_view(xpad, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
        gk = np.einsum("npqcij,npqo->ijco", view, gz, optimize=True)
        if need_input_grad:
            gxpad = np.zeros_like(xpad)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.einsum("npqo,co->npqc", gz, layer.kernels[i, j])
                    gxpad[:, i : i + sh * p : sh, j : j + sw * q : sw] += contrib
            gx = gxpad[:, pt : pt + h, pl : pl + w]
    if gx is not None and cache["single"]:
        gx = gx[0]
    return gx, gk, gb


def pool2d_forward(x: np.ndarray, spec: PoolSpec):
    xb, single = _as_batch(x, 3)
    wh, ww = spec.window
    sh, sw = spec.stride
    h, w = xb.shape[1], xb.shape[2]
    if wh > h or ww > w:
        raise ShapeError(f"pool window {spec.window} exceeds input extents {(h, w)}")
    if (wh, ww) == (h, w):
        # global pool: one window covering the whole map
        flat = xb.reshape(xb.shape[0], 1, 1, h * w, xb.shape[3])
        if spec.kind == "max":
            idx = flat.argmax(axis=3)  # first occurrence wins on ties (row-major)
            y = np.take_along_axis(flat, idx[:, :, :, None], axis=3)[:, :, :, 0]
        else:
            idx = None
            y = flat.mean(axis=3)
    else:
        view = sliding_window_view(xb, (wh, ww), axis=(1, 2))[:, ::sh, ::sw]
        # view: (N, P, Q, C, wh, ww)
        if spec.kind == "max":
            flat = view.reshape(view.shape[:4] + (wh * ww,))
            idx = flat.argmax(axis=-1)  # first occurrence wins on ties (row-major)
            y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        else:
            idx = None
            y = view.mean(axis=(-2, -1))
    cache = {"in_shape": xb.shape, "idx": idx, "single": single, "kinks": idx}
    return (y[0] if single else y), cache


def pool2d(x: np.ndarray, spec: PoolSpec) -> np.ndarray:
    return pool2d_forward(x, spec)[0]


def pool2d_backward(spec: PoolSpec, cache: dict, gy: np.ndarray) -> np.ndarray:
    gyb, _ = _as_batch(gy, 3)
    n, h, w, c = cache["in_shape"]
    wh, ww = spec.window
    sh, sw = spec.stride
    dtype = gyb.dtype
    if spec.kind == "max":
        idx = cache["idx"]
        ni, pi, qi, ci = np.indices(idx.shape)
        rows = pi * sh + idx // ww
        cols = qi * sw + idx % ww
        flat = ((ni * h + rows) * w + cols) * c + ci
        gx = np.bincount(
            flat.ravel(), weights=gyb.ravel().astype(np.float64), minlength=n * h * w * c
        ).reshape(n, h, w, c)
        gx = gx.astype(dtype, copy=False)
    else:
        share = gyb / (wh * ww)
        p, q = gyb.shape[1], gyb.shape[2]
        gx = np.zeros((n, h, w, c), dtype=dtype)
        if p == 1 and q == 1:
            gx[:, :wh, :ww, :] = share
        else:
            for i in range(wh):
                for j in range(ww):
                    gx[:, i : i + sh * p : sh, j : j + sw * q : sw] += share
    return gx[0] if cache["single"] else gx


def dense_forward(x: np.ndarray, layer: DenseLayer):
    xb, single = _as_batch(x, 1)
    if xb.shape[1] != layer.weights.shape[0]:
        raise ShapeError(
            f"dense input length {xb.shape[1]} != weight rows {layer.weights.shape[0]}"
        )
    z = xb @ layer.weights + layer.biases
    if layer.activation == "relu":
        y = relu(z)
        aux = z > 0
        kinks = aux
    elif layer.activation == "sigmoid":
        y = sigmoid(z)
        aux = y
        kinks = None
    else:
        y = z
        aux = None
        kinks = None
    cache = {"x": xb, "aux": aux, "single": single, "kinks": kinks}
    return (y[0] if single else y), cache


def dense(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    return dense_forward(x, layer)[0]


def dense_backward(layer: DenseLayer, cache: dict, gy: np.ndarray):
    """Returns (input gradient, weight gradient, bias gradient)."""
    gyb, _ = _as_batch(gy, 1)
    if layer.activation == "relu":
        gz = gyb * cache["aux"]
    elif layer.activation == "sigmoid":
        gz = gyb * sigmoid_grad(cache["aux"])
    else:
        gz = gyb
    gw = cache["x"].T @ gz
    gb = gz.sum(axis=0)
    gx = gz @ layer.weights.T
    return (gx[0] if cache["single"] else gx), gw, gb


def backward(layer, cache: dict, gy: np.ndarray):
    """Dispatch to the matching backward for a layer or pool spec."""
    if isinstance(layer, ConvLayer):
        return conv2d_backward(layer, cache, gy)
    if isinstance(layer, PoolSpec):
        return pool2d_backward(layer, cache, gy)
    if isinstance(layer, DenseLayer):
        return dense_backward(layer, cache, gy)
    raise ShapeError(f"no backward rule for {type(layer).__name__}")


def l2_penalty(weights: list[np.ndarray], lam: float):
    """lam * sum(w^2) over the given weight tensors; gradient 2*lam*w each."""
    if lam < 0:
        raise ShapeError(f"L2 penalty requires lam >= 0, got {lam}")
    penalty = lam * float(sum(np.sum(np.square(w, dtype=np.float64)) for w in weights))
    grads = [2.0 * lam * w for w in weights]
    return penalty, grads


def finite_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, coordinate by coordinate."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(|a|+|b|, 1e-8), the usual gradient-check metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-8)
    return float(np.max(np.abs(a - b) / denom))
