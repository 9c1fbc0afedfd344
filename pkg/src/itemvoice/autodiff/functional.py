"""Network layers and losses on top of :mod:`.tensor`."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidRate, InvalidTarget, ShapeMismatch
from .tensor import Tensor, _sigmoid, getitem, linear, make, mul, add, sigmoid, tanh

# upper bound on im2col buffer elements per chunk (~32 MB of float64)
_COLS_BUDGET = 1 << 22


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride=(2, 2),
    padding=0,
    layout: str = "NCHW",
) -> Tensor:
    """Cross-correlation with kernel ``weight`` of shape (O, C, kH, kW).

    ``layout`` selects the activation layout: "NCHW" (N, C, H, W) or the
    faster channels-last "NHWC" (N, H, W, C). The output uses the same
    layout as the input.
    """
    if layout not in ("NCHW", "NHWC"):
        raise ValueError(f"layout must be 'NCHW' or 'NHWC', got {layout!r}")
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatch(f"conv2d: input {x.shape} and kernel {weight.shape} must both be 4-d")
    if layout == "NCHW":
        n, c, h, w = x.shape
    else:
        n, h, w, c = x.shape
    o, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeMismatch(f"conv2d: input has {c} channels, kernel expects {wc}")
    if bias is not None and bias.shape != (o,):
        raise ShapeMismatch(f"conv2d: bias {bias.shape} does not fit kernel {weight.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeMismatch(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}")
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(w, kw, sw, pw)
    # work channels-last; kernel flattened in (kh, kw, C) order to match the columns
    xd = x.data if layout == "NHWC" else x.data.transpose(0, 2, 3, 1)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(o, kh * kw * c)
    chunk = max(1, _COLS_BUDGET // max(ho * wo * c * kh * kw, 1))

    def columns(lo: int, hi: int) -> np.ndarray:
        xp = np.pad(xd[lo:hi], ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw][:, :ho, :wo]
        return win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, kh * kw * c)

    out = np.empty((n, ho, wo, o))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        out[lo:hi] = (columns(lo, hi) @ wmat.T).reshape(hi - lo, ho, wo, o)
    if bias is not None:
        out += bias.data
    if layout == "NCHW":
        out = out.transpose(0, 3, 1, 2)

    def backward(g):
        g = g if layout == "NHWC" else g.transpose(0, 2, 3, 1)
        gw = np.zeros_like(wmat)
        gx = np.zeros((n, h + 2 * ph, w + 2 * pw, c)) if x.requires_grad else None
        for lo in range(0, n, chunk):
            hi = min(n, lo + chunk)
            gmat = g[lo:hi].reshape(-1, o)
            gw += gmat.T @ columns(lo, hi)
            if gx is not None:
                dcols = (gmat @ wmat).reshape(hi - lo, ho, wo, kh, kw, c)
                for i in range(kh):
                    for j in range(kw):
                        gx[lo:hi, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += dcols[:, :, :, i, j]
        if gx is not None:
            gx = gx[:, ph:ph + h, pw:pw + w]
            if layout == "NCHW":
                gx = gx.transpose(0, 3, 1, 2)
        gk = gw.reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
        grads = (gx, gk)
        return grads if bias is None else grads + (g.sum(axis=(0, 1, 2)),)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, backward)


def global_avg_pool(x: Tensor, layout: str = "NCHW") -> Tensor:
    """Average over the spatial axes: (N, C, H, W) or (N, H, W, C) -> (N, C)."""
    if x.ndim != 4:
        raise ShapeMismatch(f"global_avg_pool expects a 4-d input, got {x.shape}")
    axes = (2, 3) if layout == "NCHW" else (1, 2)
    area = x.shape[axes[0]] * x.shape[axes[1]]

    def backward(g):
        g = g[:, :, None, None] if layout == "NCHW" else g[:, None, None, :]
        return (np.broadcast_to(g / area, x.shape).copy(),)

    return make(x.data.mean(axis=axes), (x,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make(x.data * mask, (x,), lambda g: (g * mask,))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    layout: str = "NCHW",
) -> Tensor:
    """Per-feature normalization for (N, F) or per-channel for 4-d input.

    In training mode batch statistics are used and the running estimates
    are updated in place (unbiased variance); in eval mode the running
    estimates are used.
    """
    if x.ndim == 2:
        axes, view = (0,), (1, -1)
    elif x.ndim == 4 and layout == "NCHW":
        axes, view = (0, 2, 3), (1, -1, 1, 1)
    elif x.ndim == 4:
        axes, view = (0, 1, 2), (1, 1, 1, -1)
    else:
        raise ShapeMismatch(f"batch_norm expects 2-d or 4-d input, got {x.shape}")
    features = x.shape[-1] if x.ndim == 4 and layout == "NHWC" else x.shape[1]
    if gamma.shape != (features,) or beta.shape != (features,):
        raise ShapeMismatch(f"batch_norm: gamma/beta must have shape ({features},)")
    gm, bt = gamma.data.reshape(view), beta.data.reshape(view)

    if not training:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(view)) * inv.reshape(view)

        def backward_eval(g):
            return g * gm * inv.reshape(view), (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return make(gm * xhat + bt, (x, gamma, beta), backward_eval)

    m = x.size // features
    mean = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(view)) * inv.reshape(view)
    running_mean *= 1.0 - momentum
    running_mean += momentum * mean
    running_var *= 1.0 - momentum
    running_var += momentum * var * (m / max(m - 1, 1))

    def backward(g):
        dxhat = g * gm
        s1 = dxhat.sum(axis=axes).reshape(view)
        s2 = (dxhat * xhat).sum(axis=axes).reshape(view)
        dx = inv.reshape(view) / m * (m * dxhat - s1 - xhat * s2)
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make(gm * xhat + bt, (x, gamma, beta), backward)


def softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return make(s, (x,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    s = np.exp(out)
    return make(out, (x,), lambda g: (g - s * g.sum(axis=-1, keepdims=True),))


def lstm_step(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step. Gate rows of the weights are ordered input, forget, cell, output."""
    hidden = h.shape[1]
    if w_ih.shape[0] != 4 * hidden or w_hh.shape != (4 * hidden, hidden) or bias.shape != (4 * hidden,):
        raise ShapeMismatch(
            f"lstm_step: weights {w_ih.shape}, {w_hh.shape}, {bias.shape} do not fit hidden size {hidden}"
        )
    if c.shape != h.shape or x.shape[0] != h.shape[0]:
        raise ShapeMismatch(f"lstm_step: x {x.shape}, h {h.shape}, c {c.shape} disagree")
    gates = add(linear(x, w_ih, bias), linear(h, w_hh))
    i = sigmoid(getitem(gates, (slice(None), slice(0, hidden))))
    f = sigmoid(getitem(gates, (slice(None), slice(hidden, 2 * hidden))))
    g = tanh(getitem(gates, (slice(None), slice(2 * hidden, 3 * hidden))))
    o = sigmoid(getitem(gates, (slice(None), slice(3 * hidden, 4 * hidden))))
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


def nll_loss(log_probs: Tensor, targets, class_weights: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of integer targets.

    With ``class_weights`` the mean is weighted by the weight of each
    sample's target class.
    """
    targets = np.asarray(targets)
    if log_probs.ndim != 2 or targets.shape != (log_probs.shape[0],):
        raise ShapeMismatch(f"nll_loss: log_probs {log_probs.shape} vs targets {targets.shape}")
    k = log_probs.shape[1]
    if targets.dtype.kind not in "iub" and not np.all(np.mod(targets, 1) == 0):
        raise InvalidTarget("targets must be integers")
    targets = targets.astype(np.intp)
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise InvalidTarget(f"targets must lie in [0, {k}), got {sorted(set(targets.tolist()))}")
    rows = np.arange(len(targets))
    w = np.ones(len(targets)) if class_weights is None else np.asarray(class_weights, float)[targets]
    total = w.sum()
    value = -(w * log_probs.data[rows, targets]).sum() / total

    def backward(g):
        grad = np.zeros_like(log_probs.data)
        grad[rows, targets] = -float(g) * w / total
        return (grad,)

    return make(np.array(value), (log_probs,), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    n = diff.size
    return make(np.array((diff * diff).mean()), (pred,), lambda g: (2.0 * float(g) * diff / n,))


def softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


sigmoid_np = _sigmoid
