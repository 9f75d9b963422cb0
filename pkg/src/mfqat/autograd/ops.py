"""Layer operations with exact analytic backward rules.

Every op takes the tape as its first argument and records its backward
closure on it; passing ``tape=None`` runs inference without recording.
Convolutions are 3x3/pad-1/stride-1 or 1x1/no-pad; pooling is 2x2/stride-2;
upsampling is bilinear x2 (half-pixel corners). All reductions use fixed
numpy evaluation order, so repeated runs are bit-identical.
"""

from __future__ import annotations

import math

import numpy as np

from .. import losses
from ..quantizer import QuantizerState, quantize, saturation_bias_grad
from .engine import Parameter, Tape, Tensor, accumulate, check_finite


def _shape4(x: Tensor, who: str) -> tuple[int, int, int, int]:
    if x.data.ndim != 4:
        raise ValueError(f"{who} expects a (N, C, H, W) tensor, got shape {x.shape}")
    return x.data.shape


def relu(tape: Tape | None, x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    if tape is not None:
        def bwd():
            if out.grad is not None:
                accumulate(x, out.grad * mask)
        tape.record(bwd)
    return out


def _pad1(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2))
    xp[:, :, 1 : h + 1, 1 : w + 1] = x
    return xp


def _conv3x3_gemm(x4: np.ndarray, w4: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """im2col + one GEMM; returns (output NCHW, patch matrix)."""
    n, c, h, wd = x4.shape
    f = w4.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(_pad1(x4), (3, 3), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * wd, c * 9)
    out = cols @ w4.reshape(f, c * 9).T
    return np.ascontiguousarray(out.reshape(n, h, wd, f).transpose(0, 3, 1, 2)), cols


def conv3x3(tape: Tape | None, x: Tensor, w: Tensor) -> Tensor:
    """3x3 convolution, padding 1, stride 1, no bias."""
    n, c, h, wd = _shape4(x, "conv3x3")
    f, cw, kh, kw = w.data.shape
    if (cw, kh, kw) != (c, 3, 3):
        raise ValueError(f"weight shape {w.data.shape} does not match input channels {c}")
    out_data, cols = _conv3x3_gemm(x.data, w.data)
    out = Tensor(out_data)
    check_finite(out.data, "conv3x3")
    if tape is not None:
        def bwd():
            go = out.grad
            if go is None:
                return
            go2 = np.ascontiguousarray(go.transpose(0, 2, 3, 1)).reshape(n * h * wd, f)
            accumulate(w, (go2.T @ cols).reshape(w.data.shape))
            # input gradient = same-padding conv of go with the transposed,
            # spatially flipped kernel
            wt = np.ascontiguousarray(w.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
            gx, _ = _conv3x3_gemm(np.ascontiguousarray(go), wt)
            accumulate(x, gx)
        tape.record(bwd)
    return out


def conv1x1(tape: Tape | None, x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """1x1 convolution, no padding, optional bias."""
    n, c, h, wd = _shape4(x, "conv1x1")
    if w.data.ndim != 4 or w.data.shape[1:] != (c, 1, 1):
        raise ValueError(f"weight shape {w.data.shape} does not match input channels {c}")
    f = w.data.shape[0]
    wm = w.data[:, :, 0, 0]
    out_data = np.tensordot(wm, x.data, axes=(1, 1)).transpose(1, 0, 2, 3)
    if b is not None:
        out_data += b.data.reshape(1, f, 1, 1)
    out = Tensor(out_data)
    check_finite(out.data, "conv1x1")
    if tape is not None:
        def bwd():
            go = out.grad
            if go is None:
                return
            gw = np.tensordot(go, x.data, axes=([0, 2, 3], [0, 2, 3]))
            accumulate(w, gw.reshape(w.data.shape))
            if b is not None:
                accumulate(b, go.sum(axis=(0, 2, 3)))
            accumulate(x, np.tensordot(wm, go, axes=(0, 1)).transpose(1, 0, 2, 3))
        tape.record(bwd)
    return out


def dense(tape: Tape | None, x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Fully connected layer; flattens non-batch dims of the input."""
    x2 = x.data.reshape(x.data.shape[0], -1)
    k, d = w.data.shape
    if x2.shape[1] != d:
        raise ValueError(f"dense expects {d} features, got {x2.shape[1]}")
    out_data = x2 @ w.data.T
    if b is not None:
        out_data = out_data + b.data
    out = Tensor(out_data)
    check_finite(out.data, "dense")
    if tape is not None:
        def bwd():
            go = out.grad
            if go is None:
                return
            accumulate(w, go.T @ x2)
            if b is not None:
                accumulate(b, go.sum(axis=0))
            accumulate(x, (go @ w.data).reshape(x.data.shape))
        tape.record(bwd)
    return out


def batchnorm(
    tape: Tape | None,
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalisation over (N, H, W).

    In training mode uses biased batch statistics and updates the running
    buffers in place; in eval mode normalises with the running buffers.
    """
    n, c, h, wd = _shape4(x, "batchnorm")
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(f"batchnorm affine shape mismatch for {c} channels")
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
    ivstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(1, c, 1, 1)) * ivstd.reshape(1, c, 1, 1)
    out = Tensor(gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1))
    check_finite(out.data, "batchnorm")
    if tape is not None:
        def bwd():
            go = out.grad
            if go is None:
                return
            g_gamma = np.sum(go * xhat, axis=axes)
            g_beta = np.sum(go, axis=axes)
            accumulate(gamma, g_gamma)
            accumulate(beta, g_beta)
            scale = (gamma.data * ivstd).reshape(1, c, 1, 1)
            if training:
                cnt = n * h * wd
                gx = scale * (go - (g_beta / cnt).reshape(1, c, 1, 1)
                              - xhat * (g_gamma / cnt).reshape(1, c, 1, 1))
            else:
                gx = scale * go
            accumulate(x, gx)
        tape.record(bwd)
    return out


def maxpool2x2(tape: Tape | None, x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties pick the first element of the window."""
    n, c, h, wd = _shape4(x, "maxpool2x2")
    if h % 2 or wd % 2:
        raise ValueError(f"maxpool2x2 needs even spatial dims, got {h}x{wd}")
    h2, w2 = h // 2, wd // 2
    windows = (
        x.data.reshape(n, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2, w2, 4)
    )
    idx = np.argmax(windows, axis=-1)
    out = Tensor(np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0])
    if tape is not None:
        def bwd():
            go = out.grad
            if go is None:
                return
            g4 = np.zeros((n, c, h2, w2, 4))
            np.put_along_axis(g4, idx[..., None], go[..., None], axis=-1)
            gx = (
                g4.reshape(n, c, h2, w2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, wd)
            )
            accumulate(x, gx)
        tape.record(bwd)
    return out


def _up2_last(x: np.ndarray) -> np.ndarray:
    """Bilinear x2 along the last axis (half-pixel centers, edges clamped).

    Output 2k   = 0.75 x[k] + 0.25 x[k-1]   (clamped at the left edge)
    Output 2k+1 = 0.75 x[k] + 0.25 x[k+1]   (clamped at the right edge)
    """
    out = np.empty(x.shape[:-1] + (2 * x.shape[-1],))
    lo = out[..., 0::2]
    hi = out[..., 1::2]
    lo[...] = 0.75 * x
    lo[..., 1:] += 0.25 * x[..., :-1]
    lo[..., 0] += 0.25 * x[..., 0]
    hi[...] = 0.75 * x
    hi[..., :-1] += 0.25 * x[..., 1:]
    hi[..., -1] += 0.25 * x[..., -1]
    return out


def _up2_last_t(go: np.ndarray) -> np.ndarray:
    """Transpose of :func:`_up2_last` (scatter the taps back)."""
    ge = go[..., 0::2]
    gd = go[..., 1::2]
    gx = 0.75 * (ge + gd)
    gx[..., :-1] += 0.25 * ge[..., 1:]
    gx[..., 0] += 0.25 * ge[..., 0]
    gx[..., 1:] += 0.25 * gd[..., :-1]
    gx[..., -1] += 0.25 * gd[..., -1]
    return gx


def upsample2x_bilinear(tape: Tape | None, x: Tensor) -> Tensor:
    """Bilinear x2 upsampling (half-pixel convention, edges clamped)."""
    _shape4(x, "upsample2x")
    y = _up2_last(x.data)                      # width
    y = _up2_last(y.swapaxes(2, 3)).swapaxes(2, 3)  # height
    out = Tensor(np.ascontiguousarray(y))
    if tape is not None:
        def bwd():
            go = out.grad
            if go is None:
                return
            g = _up2_last_t(go.swapaxes(2, 3)).swapaxes(2, 3)
            accumulate(x, _up2_last_t(g))
        tape.record(bwd)
    return out


def concat_channels(tape: Tape | None, xs: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis."""
    if not xs:
        raise ValueError("concat needs at least one input")
    for t in xs:
        _shape4(t, "concat")
    out = Tensor(np.concatenate([t.data for t in xs], axis=1))
    if tape is not None:
        sizes = [t.data.shape[1] for t in xs]
        def bwd():
            go = out.grad
            if go is None:
                return
            off = 0
            for t, sz in zip(xs, sizes):
                accumulate(t, go[:, off : off + sz], copy=True)
                off += sz
        tape.record(bwd)
    return out


def quantize_ste(
    tape: Tape | None,
    x: Tensor,
    state: QuantizerState,
    ste_clip_zero: bool = False,
) -> Tensor:
    """Quantizer node: exact grid snap forward, straight-through backward.

    The bias gradient is accumulated on ``state.grad_e0`` only when the
    state is learnable.
    """
    fmt, e0 = state.format, state.e0
    out = Tensor(quantize(x.data, fmt, e0))
    if tape is not None:
        x_saved = x.data
        def bwd():
            go = out.grad
            if go is None:
                return
            if state.learnable:
                state.grad_e0 += saturation_bias_grad(go, x_saved, fmt, e0)
            if ste_clip_zero:
                x_max = fmt.x_max(math.ceil(e0))
                accumulate(x, np.where(np.abs(x_saved) > x_max, 0.0, go))
            else:
                # pure straight-through: the upstream gradient passes as-is
                accumulate(x, go)
        tape.record(bwd)
    return out


def jaccard_bce(tape: Tape | None, logits: Tensor, targets: np.ndarray) -> Tensor:
    value, grad = losses.jaccard_bce_with_grad(logits.data, targets)
    out = Tensor(value)
    if tape is not None:
        def bwd():
            if out.grad is not None:
                accumulate(logits, out.grad * grad)
        tape.record(bwd)
    return out


def softmax_cross_entropy(tape: Tape | None, logits: Tensor, labels: np.ndarray) -> Tensor:
    value, grad = losses.softmax_cross_entropy_with_grad(logits.data, labels)
    out = Tensor(value)
    if tape is not None:
        def bwd():
            if out.grad is not None:
                accumulate(logits, out.grad * grad)
        tape.record(bwd)
    return out


def weighted_sum(tape: Tape | None, x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar projection sum(x * weights); handy for building test losses."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != x.data.shape:
        raise ValueError(f"weights shape {weights.shape} != input shape {x.shape}")
    out = Tensor(float(np.sum(x.data * weights)))
    if tape is not None:
        def bwd():
            if out.grad is not None:
                accumulate(x, out.grad * weights)
        tape.record(bwd)
    return out
