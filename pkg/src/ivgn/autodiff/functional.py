"""Differentiable primitives beyond plain elementwise arithmetic."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ivgn.autodiff.tensor import (
    Tensor,
    add,
    as_tensor,
    make_result,
)
from ivgn.errors import ConfigError, DimensionError, DomainError

BN_MOMENTUM = 0.1


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``(..., m, k) @ (k, n)`` or ``(..., m, k) @ (..., k, n)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return make_result(ad @ bd, (a, b), "matmul", backward)


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0:
        raise ConfigError(f"kernel {kernel} larger than padded input {size + 2 * padding}")
    if span % stride:
        raise ConfigError(
            f"conv output size not exact: ({size} + 2*{padding} - {kernel}) / {stride}"
        )
    return span // stride + 1


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``N x Cin x H x W`` input with ``Cout x Cin x kh x kw`` kernels."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"conv2d shape mismatch: input {x.shape}, kernel {kernel.shape}")
    n, cin, h, w = x.shape
    cout, _, kh, kw = kernel.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    kflat = kernel.data.reshape(cout, -1)
    out = (cols @ kflat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gk = (gflat.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gflat @ kflat).reshape(n, ho, wo, cin, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        return gx, gk

    out = make_result(np.ascontiguousarray(out), (x, kernel), "conv2d", backward)
    if bias is not None:
        out = add(out, as_tensor(bias).reshape(1, cout, 1, 1))
    return out


def batch_norm(
    x,
    gamma,
    beta,
    axis: int = 1,
    eps: float = 1e-5,
    training: bool = True,
    running_mean: Optional[np.ndarray] = None,
    running_var: Optional[np.ndarray] = None,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Normalize each slice along ``axis`` with statistics over every other axis.

    Training mode uses the biased batch variance and, if running buffers are
    given, updates them in place (running variance stored unbiased).  Eval
    mode normalizes with the running buffers.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps < 0:
        raise ConfigError(f"batch_norm eps must be non-negative, got {eps}")
    axis = axis % x.ndim
    features = x.shape[axis]
    if gamma.shape != (features,) or beta.shape != (features,):
        raise ConfigError(
            f"batch_norm affine params {gamma.shape}/{beta.shape} do not match "
            f"{features} features on axis {axis} of {x.shape}"
        )
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
    bshape = [1] * x.ndim
    bshape[axis] = features
    bshape = tuple(bshape)
    count = x.size // features

    if training:
        mu = x.data.mean(axis=reduce_axes, keepdims=True)
        centered = x.data - mu
        var = (centered * centered).mean(axis=reduce_axes, keepdims=True)
        if running_mean is not None:
            unbiased = var * (count / (count - 1)) if count > 1 else var
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.reshape(-1)
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased.reshape(-1)
    else:
        if running_mean is None or running_var is None:
            raise ConfigError("batch_norm eval mode needs running statistics")
        mu = running_mean.reshape(bshape)
        centered = x.data - mu
        var = running_var.reshape(bshape)
    denom = var + eps
    if (denom <= 0).any():
        bad = np.argwhere(denom.reshape(-1) <= 0)[0]
        raise DomainError("batch_norm", (int(bad[0]),), 0.0)
    inv_std = 1.0 / np.sqrt(denom)
    xhat = centered * inv_std
    g_ = gamma.data.reshape(bshape)
    out = g_ * xhat + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=reduce_axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=reduce_axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * g_
            if training:
                gx = (inv_std / count) * (
                    count * dxhat
                    - dxhat.sum(axis=reduce_axes, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=reduce_axes, keepdims=True)
                )
            else:
                gx = dxhat * inv_std
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), "batch_norm", backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), "softmax", backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), "log_softmax", backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise DimensionError(
                f"concat shapes disagree off axis {axis}: "
                + ", ".join(str(t.shape) for t in tensors)
            )
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(sizes))
        )

    return make_result(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", backward
    )


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % (tensors[0].ndim + 1)
    expanded = [t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def embedding_lookup(weight, ids) -> Tensor:
    """Rows of ``weight`` selected by integer ``ids`` (any shape); grads accumulate per row."""
    weight = as_tensor(weight)
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError(f"embedding ids must be integers, got {ids.dtype}")
    vocab = weight.shape[0]
    bad = (ids < 0) | (ids >= vocab)
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise IndexError(f"token id {int(ids[pos])} at {pos} outside vocabulary of {vocab}")

    def backward(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return make_result(weight.data[ids], (weight,), "embedding", backward)


def gather_last(x, index) -> Tensor:
    """``x[..., index[...]]``: picks one entry along the last axis per leading position."""
    x = as_tensor(x)
    index = np.asarray(index)
    if index.shape != x.shape[:-1]:
        raise DimensionError(f"gather index shape {index.shape} vs tensor {x.shape}")
    idx = index[..., None]
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        return (full,)

    return make_result(np.take_along_axis(x.data, idx, axis=-1)[..., 0], (x,), "gather", backward)


def dropout(x, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep.astype(x.data.dtype))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (variance + eps).sqrt() * gamma + beta


def cross_entropy(logits, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` over unmasked positions."""
    logp = log_softmax(logits, axis=-1)
    picked = gather_last(logp, targets)
    if mask is None:
        return -picked.mean()
    mask = np.asarray(mask, dtype=picked.data.dtype)
    total = mask.sum()
    if total == 0:
        raise DomainError("cross_entropy", (), 0.0)
    return -(picked * Tensor(mask)).sum() / float(total)
