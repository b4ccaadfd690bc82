"""Differentiable array operations.

Every op computes its result with numpy and, when a tape is active and any
input requires gradients, records a closure that accumulates ``d loss / d
input`` for each differentiable input. Closures run in reverse execution
order, so an output's gradient is complete before its producer's closure
fires.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, active_tape


def _result(data, inputs, make_backward):
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    tape = active_tape()
    if requires and tape is not None:
        tape.record(make_backward(out))
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g, b.data.shape))

        return run

    return _result(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def neg(a: Tensor) -> Tensor:
    def backward(out):
        def run():
            if out.grad is not None and a.requires_grad:
                a.accumulate_grad(-out.grad)

        return run

    return _result(-a.data, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

        return run

    return _result(data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)

    def backward(out):
        def run():
            if out.grad is not None and a.requires_grad:
                a.accumulate_grad(out.grad * c)

        return run

    return _result(a.data * c, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports equal batch dims or a 2-D right operand."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dims")
    if b.data.ndim != 2 and a.data.shape[:-2] != b.data.shape[:-2]:
        raise ValueError(f"batch dims differ: {a.data.shape} vs {b.data.shape}")
    data = a.data @ b.data

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(g @ np.swapaxes(b.data, -1, -2))
            if b.requires_grad:
                if b.data.ndim == 2:
                    ga = a.data.reshape(-1, a.data.shape[-1])
                    gg = g.reshape(-1, g.shape[-1])
                    b.accumulate_grad(ga.T @ gg)
                else:
                    b.accumulate_grad(np.swapaxes(a.data, -1, -2) @ g)

        return run

    return _result(data, (a, b), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ weight + bias over the last axis."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.data.shape

    def backward(out):
        def run():
            if out.grad is not None and a.requires_grad:
                a.accumulate_grad(out.grad.reshape(old))

        return run

    return _result(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(out):
        def run():
            if out.grad is not None and a.requires_grad:
                a.accumulate_grad(out.grad.transpose(inverse))

        return run

    return _result(a.data.transpose(axes), (a,), backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if start < 0 or start + length > a.data.shape[axis]:
        raise ValueError(
            f"narrow [{start}:{start + length}) out of range for axis {axis} "
            f"of shape {a.data.shape}"
        )
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(out):
        def run():
            if out.grad is not None and a.requires_grad:
                g = np.zeros_like(a.data)
                g[index] = out.grad
                a.accumulate_grad(g)

        return run

    return _result(a.data[index], (a,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    t.accumulate_grad(piece)

        return run

    return _result(data, tuple(tensors), backward)


def stack_windows(seq: Tensor, n: int, length: int) -> Tensor:
    """Overlapping unit-stride windows along axis 1: [B,S,d] -> [n,B,length,d]."""
    s = seq.data.shape[1]
    if n < 1 or length < 1 or (n - 1) + length > s:
        raise ValueError(f"cannot take {n} windows of {length} from sequence length {s}")
    data = np.stack([seq.data[:, w : w + length] for w in range(n)], axis=0)

    def backward(out):
        def run():
            g = out.grad
            if g is None or not seq.requires_grad:
                return
            acc = np.zeros_like(seq.data)
            for w in range(n):
                acc[:, w : w + length] += g[w]
            seq.accumulate_grad(acc)

        return run

    return _result(data, (seq,), backward)


# ---------------------------------------------------------------------------
# reductions


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.data.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(out):
        def run():
            g = out.grad
            if g is None or not a.requires_grad:
                return
            if not keepdims:
                g = np.expand_dims(g, axes)
            a.accumulate_grad(np.broadcast_to(g, a.data.shape))

        return run

    return _result(data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.data.ndim)
    count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return scale(tsum(a, axis=axes, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# activations and normalization


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    alpha = a.data.dtype.type(alpha)
    positive = a.data > 0
    data = np.where(positive, a.data, alpha * np.expm1(a.data))

    def backward(out):
        def run():
            if out.grad is not None and a.requires_grad:
                a.accumulate_grad(out.grad * np.where(positive, 1.0, data + alpha))

        return run

    return _result(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(out):
        def run():
            if out.grad is not None and a.requires_grad:
                a.accumulate_grad(out.grad / a.data)

        return run

    return _result(np.log(a.data), (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(out):
        def run():
            g = out.grad
            if g is None or not a.requires_grad:
                return
            dot = (g * data).sum(axis=axis, keepdims=True)
            a.accumulate_grad(data * (g - dot))

        return run

    return _result(data, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then apply the affine pair."""
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = (x.data - mean) * ivar
    data = gamma.data * xhat + beta.data
    d = x.data.shape[-1]

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if gamma.requires_grad:
                gamma.accumulate_grad(_unbroadcast(g * xhat, gamma.data.shape))
            if beta.requires_grad:
                beta.accumulate_grad(_unbroadcast(g, beta.data.shape))
            if x.requires_grad:
                gx = g * gamma.data
                term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(
                    axis=-1, keepdims=True
                )
                x.accumulate_grad(term * ivar)

        return run

    return _result(data, (x, gamma, beta), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    training: bool,
    update_stats: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-3,
) -> Tensor:
    """Normalize per channel (axis 1) over all remaining axes.

    Train mode uses batch statistics and, when ``update_stats``, folds them
    into the running buffers; eval mode normalizes with the running buffers
    only. Variance is the biased estimator in both paths.
    """
    if x.data.ndim < 2:
        raise ValueError("batch_norm input must have a channel axis")
    axes = (0,) + tuple(range(2, x.data.ndim))
    count = int(np.prod([x.data.shape[ax] for ax in axes]))
    if training and count == 0:
        raise ValueError("batch_norm cannot use batch statistics on an empty batch")
    shape = [1] * x.data.ndim
    shape[1] = x.data.shape[1]

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update_stats:
            running_mean += momentum * (mean.astype(running_mean.dtype) - running_mean)
            running_var += momentum * (var.astype(running_var.dtype) - running_var)
    else:
        mean = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    ivar = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = (x.data - mean.reshape(shape)) * ivar.reshape(shape)
    data = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat).sum(axis=axes))
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=axes))
            if x.requires_grad:
                gxhat = g * gamma.data.reshape(shape)
                iv = ivar.reshape(shape)
                if training:
                    sum_gxhat = gxhat.sum(axis=axes, keepdims=True)
                    sum_gxhat_xhat = (gxhat * xhat).sum(axis=axes, keepdims=True)
                    gx = iv / count * (count * gxhat - sum_gxhat - xhat * sum_gxhat_xhat)
                else:
                    gx = gxhat * iv
                x.accumulate_grad(gx)

        return run

    return _result(data, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# dropout and pooling


def dropout(x: Tensor, rate: float, rng, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    if not training or rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    mask = keep / x.data.dtype.type(1.0 - rate)

    def backward(out):
        def run():
            if out.grad is not None and x.requires_grad:
                x.accumulate_grad(out.grad * mask)

        return run

    return _result(x.data * mask, (x,), backward)


def avg_pool_last(x: Tensor, pool: int) -> Tensor:
    """Non-overlapping mean pooling over the last axis; trailing remainder dropped."""
    if pool < 1:
        raise ValueError("pool length must be >= 1")
    w = x.data.shape[-1]
    wp = w // pool
    if wp == 0:
        raise ValueError(f"pool {pool} longer than axis {w}")
    head = x.data[..., : wp * pool]
    data = head.reshape(x.data.shape[:-1] + (wp, pool)).mean(axis=-1)

    def backward(out):
        def run():
            g = out.grad
            if g is None or not x.requires_grad:
                return
            gx = np.zeros_like(x.data)
            spread = np.repeat(g / pool, pool, axis=-1)
            gx[..., : wp * pool] = spread
            x.accumulate_grad(gx)

        return run

    return _result(data, (x,), backward)


# ---------------------------------------------------------------------------
# convolutions


def _pad_lr(k: int, padding: str):
    if padding == "valid":
        return 0, 0
    if padding == "same":
        # even kernels take the extra sample on the left
        return k // 2, (k - 1) // 2
    raise ValueError(f"unknown padding {padding!r}")


def _corr2d(xp: np.ndarray, w: np.ndarray, groups: int) -> np.ndarray:
    """Grouped cross-correlation of a padded input with kernel [O, Cin/g, kh, kw]."""
    kh, kw = w.shape[2], w.shape[3]
    view = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    if groups == 1:
        return np.einsum("bchwij,ocij->bohw", view, w, optimize=True)
    cg = xp.shape[1] // groups
    og = w.shape[0] // groups
    parts = [
        np.einsum(
            "bchwij,ocij->bohw",
            view[:, g * cg : (g + 1) * cg],
            w[g * og : (g + 1) * og],
            optimize=True,
        )
        for g in range(groups)
    ]
    return np.concatenate(parts, axis=1)


def _corr2d_wgrad(xp: np.ndarray, gy: np.ndarray, kh: int, kw: int, groups: int) -> np.ndarray:
    view = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    if groups == 1:
        return np.einsum("bchwij,bohw->ocij", view, gy, optimize=True)
    cg = xp.shape[1] // groups
    og = gy.shape[1] // groups
    parts = [
        np.einsum(
            "bchwij,bohw->ocij",
            view[:, g * cg : (g + 1) * cg],
            gy[:, g * og : (g + 1) * og],
            optimize=True,
        )
        for g in range(groups)
    ]
    return np.concatenate(parts, axis=0)


def _corr2d_xgrad(gy: np.ndarray, w: np.ndarray, pads, x_shape, groups: int) -> np.ndarray:
    kh, kw = w.shape[2], w.shape[3]
    top, left = pads
    gyp = np.pad(gy, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    wf = w[:, :, ::-1, ::-1]
    if groups == 1:
        gxp = _corr2d(gyp, np.ascontiguousarray(wf.transpose(1, 0, 2, 3)), 1)
    else:
        cg = x_shape[1] // groups
        og = w.shape[0] // groups
        parts = [
            _corr2d(
                gyp[:, g * og : (g + 1) * og],
                np.ascontiguousarray(wf[g * og : (g + 1) * og].transpose(1, 0, 2, 3)),
                1,
            )
            for g in range(groups)
        ]
        gxp = np.concatenate(parts, axis=1)
    return gxp[:, :, top : top + x_shape[2], left : left + x_shape[3]]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    padding: str = "valid",
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D cross-correlation, stride 1.

    ``x`` is [B, Cin, H, W]; ``weight`` is [Cout, Cin/groups, kh, kw]. With
    ``same`` padding the spatial size is preserved.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects 4-D input and kernel")
    b_, cin, h, w_ = x.data.shape
    cout, cpg, kh, kw = weight.data.shape
    if cin % groups or cout % groups:
        raise ValueError(f"channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cpg != cin // groups:
        raise ValueError(f"kernel expects {cpg} channels/group, input has {cin // groups}")
    pt, pb = _pad_lr(kh, padding)
    pl, pr = _pad_lr(kw, padding)
    if h + pt + pb < kh or w_ + pl + pr < kw:
        raise ValueError(f"kernel ({kh}, {kw}) does not fit input ({h}, {w_}) with {padding} padding")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    data = _corr2d(xp, weight.data, groups)
    if bias is not None:
        data = data + bias.data.reshape(1, -1, 1, 1)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
            if weight.requires_grad:
                weight.accumulate_grad(_corr2d_wgrad(xp, g, kh, kw, groups))
            if x.requires_grad:
                x.accumulate_grad(_corr2d_xgrad(g, weight.data, (pt, pl), x.data.shape, groups))

        return run

    return _result(data, inputs, backward)


def causal_conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    dilation: int = 1,
) -> Tensor:
    """Length-preserving causal 1-D convolution.

    ``x`` is [B, Cin, S]; ``weight`` is [Cout, Cin, K]. The input is padded
    on the left by ``(K - 1) * dilation`` so output position ``s`` sees only
    positions ``<= s``.
    """
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ValueError("causal_conv1d expects 3-D input and kernel")
    if weight.data.shape[1] != x.data.shape[1]:
        raise ValueError(
            f"kernel expects {weight.data.shape[1]} channels, input has {x.data.shape[1]}"
        )
    k = weight.data.shape[2]
    span = (k - 1) * dilation + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (span - 1, 0)))
    view = sliding_window_view(xp, span, axis=2)[..., ::dilation]
    data = np.einsum("bcsk,ock->bos", view, weight.data, optimize=True)
    if bias is not None:
        data = data + bias.data.reshape(1, -1, 1)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(g.sum(axis=(0, 2)))
            if weight.requires_grad:
                weight.accumulate_grad(np.einsum("bcsk,bos->ock", view, g, optimize=True))
            if x.requires_grad:
                gp = np.pad(g, ((0, 0), (0, 0), (0, span - 1)))
                gview = sliding_window_view(gp, span, axis=2)[..., ::dilation]
                wf = weight.data[:, :, ::-1]
                x.accumulate_grad(np.einsum("bosk,ock->bcs", gview, wf, optimize=True))

        return run

    return _result(data, inputs, backward)


# ---------------------------------------------------------------------------
# loss


def cross_entropy(pred: Tensor, labels, from_logits: bool = True) -> Tensor:
    """Mean negative log-likelihood over the batch.

    ``pred`` is [B, K] logits (stabilized by log-sum-exp) or probabilities;
    ``labels`` is an integer array in [0, K).
    """
    labels = np.asarray(labels)
    if pred.data.ndim != 2:
        raise ValueError("cross_entropy expects [batch, classes]")
    batch, k = pred.data.shape
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    rows = np.arange(batch)

    if from_logits:
        m = pred.data.max(axis=1, keepdims=True)
        e = np.exp(pred.data - m)
        z = e.sum(axis=1, keepdims=True)
        probs = e / z
        losses = (m.squeeze(1) + np.log(z.squeeze(1))) - pred.data[rows, labels]

        def backward(out):
            def run():
                if out.grad is None or not pred.requires_grad:
                    return
                g = probs.copy()
                g[rows, labels] -= 1.0
                pred.accumulate_grad(g * (out.grad / batch))

            return run

    else:
        clipped = np.maximum(pred.data, pred.data.dtype.type(1e-12))
        losses = -np.log(clipped[rows, labels])

        def backward(out):
            def run():
                if out.grad is None or not pred.requires_grad:
                    return
                g = np.zeros_like(pred.data)
                g[rows, labels] = -1.0 / clipped[rows, labels]
                pred.accumulate_grad(g * (out.grad / batch))

            return run

    return _result(losses.mean(dtype=pred.data.dtype), (pred,), backward)
