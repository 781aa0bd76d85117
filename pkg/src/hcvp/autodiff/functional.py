"""Fused neural-net primitives on top of the tensor graph.

Each function here is a single graph node with a hand-derived backward
rule; the numerically delicate ones (softmax family) subtract the
running maximum before exponentiating.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _accumulate, _node, _normalize_axes

_GELU_BETA = 1.702  # sigmoid-form GELU coefficient


def gelu(a: Tensor) -> Tensor:
    """GELU in its sigmoid approximation, ``x * sigmoid(1.702 x)``."""
    sig = a.data * (-_GELU_BETA)
    np.exp(sig, out=sig)
    sig += 1.0
    np.reciprocal(sig, out=sig)  # sigmoid(beta * x)
    data = a.data * sig

    def backward(g):
        # d/dx = sig + beta * x * sig * (1 - sig), assembled in place
        local = 1.0 - sig
        local *= sig
        local *= a.data
        local *= _GELU_BETA
        local += sig
        local *= g
        _accumulate(a, local)

    return _node(data, (a,), backward)


def _softmax_data(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    (axis,) = _normalize_axes(axis, a.ndim)
    if a.shape[axis] == 0:
        raise ShapeError(f"softmax over zero-length axis {axis} of {a.shape}")
    data = _softmax_data(a.data, axis)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - dot))

    return _node(data, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    (axis,) = _normalize_axes(axis, a.ndim)
    if a.shape[axis] == 0:
        raise ShapeError(f"log_softmax over zero-length axis {axis} of {a.shape}")
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    soft = np.exp(data)

    def backward(g):
        _accumulate(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _node(data, (a,), backward)


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    (axis,) = _normalize_axes(axis, a.ndim)
    if a.shape[axis] == 0:
        raise ShapeError(f"logsumexp over zero-length axis {axis} of {a.shape}")
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    total = e.sum(axis=axis, keepdims=True)
    data = np.log(total) + m
    soft = e / total
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def backward(g):
        grad = g if keepdims else np.expand_dims(g, axis)
        _accumulate(a, soft * grad)

    return _node(data, (a,), backward)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learned scale and shift."""
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm params must have shape ({d},), got {gamma.shape}/{beta.shape}")
    mean = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(a.ndim - 1))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=lead))
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=lead))
        if a.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            gx -= m1
            gx -= xhat * m2
            gx *= inv_std
            _accumulate(a, gx)

    return _node(data, (a, gamma, beta), backward)


def global_avg_pool(a: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes of a (b, c, h, w) tensor."""
    if a.ndim != 4:
        raise ShapeError(f"global_avg_pool expects a 4-d tensor, got {a.shape}")
    return a.mean(axis=(2, 3))


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Dot product along the last axis (one value per leading index)."""
    if a.shape != b.shape:
        raise ShapeError(f"row_dot needs equal shapes, got {a.shape} vs {b.shape}")
    from .tensor import mul, tensor_sum

    return tensor_sum(mul(a, b), axis=-1)


def multi_head_attention(
    x: Tensor, wqkv: Tensor, bqkv: Tensor, wo: Tensor, bo: Tensor, heads: int
) -> Tensor:
    """One fused self-attention sublayer (projections, scaled softmax
    scores, value mixing, output projection), with a hand-written backward.

    Fusing keeps the (b, heads, t, t) score buffers in place instead of
    spreading them over a dozen graph nodes; the projections run as single
    GEMMs over the flattened (b*t, d) view.
    """
    b, t, d = x.shape
    if d % heads:
        raise ShapeError(f"width {d} not divisible by {heads} heads")
    hd = d // heads
    scale = 1.0 / float(np.sqrt(hd))
    x2 = x.data.reshape(b * t, d)
    qkv = x2 @ wqkv.data + bqkv.data
    qkv = np.ascontiguousarray(qkv.reshape(b, t, 3, heads, hd).transpose(2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]  # each (b, heads, t, hd)
    attn = q @ k.swapaxes(-1, -2)
    attn *= scale
    attn -= attn.max(axis=-1, keepdims=True)
    np.exp(attn, out=attn)
    attn /= attn.sum(axis=-1, keepdims=True)
    merged = np.ascontiguousarray((attn @ v).transpose(0, 2, 1, 3)).reshape(b * t, d)
    out = (merged @ wo.data + bo.data).reshape(b, t, d)

    def backward(g):
        g2 = g.reshape(b * t, d)
        if wo.requires_grad:
            _accumulate(wo, merged.T @ g2)
        if bo.requires_grad:
            _accumulate(bo, g2.sum(axis=0))
        dctx = (g2 @ wo.data.T).reshape(b, t, heads, hd).transpose(0, 2, 1, 3)
        dattn = dctx @ v.swapaxes(-1, -2)
        dv = attn.swapaxes(-1, -2) @ dctx
        dattn -= (dattn * attn).sum(axis=-1, keepdims=True)
        dattn *= attn
        dattn *= scale
        dqkv = np.empty_like(qkv)
        np.matmul(dattn, k, out=dqkv[0])
        np.matmul(dattn.swapaxes(-1, -2), q, out=dqkv[1])
        dqkv[2] = dv
        dqkv2 = np.ascontiguousarray(dqkv.transpose(1, 3, 0, 2, 4)).reshape(b * t, 3 * d)
        if wqkv.requires_grad:
            _accumulate(wqkv, x2.T @ dqkv2)
        if bqkv.requires_grad:
            _accumulate(bqkv, dqkv2.sum(axis=0))
        if x.requires_grad:
            _accumulate(x, (dqkv2 @ wqkv.data.T).reshape(b, t, d))

    return _node(out, (x, wqkv, bqkv, wo, bo), backward)


def _ln_stats(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=-1, keepdims=True)
    xhat = x - mu
    var = (xhat * xhat).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat *= inv_std
    return xhat, inv_std


def _ln_backward(gh: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray, gamma: np.ndarray):
    """Input gradient of a layer norm given the gradient at its output."""
    gx = gh * gamma
    m1 = gx.mean(axis=-1, keepdims=True)
    m2 = (gx * xhat).mean(axis=-1, keepdims=True)
    gx -= m1
    gx -= xhat * m2
    gx *= inv_std
    return gx


def transformer_block(
    x: Tensor,
    ln1_gamma: Tensor,
    ln1_beta: Tensor,
    wqkv: Tensor,
    bqkv: Tensor,
    wo: Tensor,
    bo: Tensor,
    ln2_gamma: Tensor,
    ln2_beta: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    heads: int,
    eps: float = 1e-5,
) -> Tensor:
    """One fused pre-norm transformer block:

        y   = x + Attention(LN1(x))
        out = y + W2 gelu(W1 LN2(y) + b1) + b2

    Semantically identical to composing the individual primitives; fused so
    a training step touches each activation buffer once instead of
    scattering it over a dozen graph nodes.
    """
    b, t, d = x.shape
    hd = d // heads
    scale = 1.0 / float(np.sqrt(hd))

    xhat1, istd1 = _ln_stats(x.data, eps)
    h1 = xhat1 * ln1_gamma.data + ln1_beta.data
    qkv = h1.reshape(b * t, d) @ wqkv.data + bqkv.data
    qkv = np.ascontiguousarray(qkv.reshape(b, t, 3, heads, hd).transpose(2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    attn = q @ k.swapaxes(-1, -2)
    attn *= scale
    attn -= attn.max(axis=-1, keepdims=True)
    np.exp(attn, out=attn)
    attn /= attn.sum(axis=-1, keepdims=True)
    merged = np.ascontiguousarray((attn @ v).transpose(0, 2, 1, 3)).reshape(b * t, d)
    y = x.data + (merged @ wo.data + bo.data).reshape(b, t, d)

    xhat2, istd2 = _ln_stats(y, eps)
    h2 = (xhat2 * ln2_gamma.data + ln2_beta.data).reshape(b * t, d)
    a1 = h2 @ w1.data + b1.data
    sig = a1 * (-_GELU_BETA)
    np.exp(sig, out=sig)
    sig += 1.0
    np.reciprocal(sig, out=sig)
    act = a1 * sig
    out = y + (act @ w2.data + b2.data).reshape(b, t, d)

    def backward(g):
        g2 = g.reshape(b * t, d)
        # MLP sublayer
        if w2.requires_grad:
            _accumulate(w2, act.T @ g2)
        if b2.requires_grad:
            _accumulate(b2, g2.sum(axis=0))
        da = g2 @ w2.data.T
        local = 1.0 - sig
        local *= sig
        local *= a1
        local *= _GELU_BETA
        local += sig
        da *= local
        if w1.requires_grad:
            _accumulate(w1, h2.T @ da)
        if b1.requires_grad:
            _accumulate(b1, da.sum(axis=0))
        gh2 = (da @ w1.data.T).reshape(b, t, d)
        if ln2_gamma.requires_grad:
            _accumulate(ln2_gamma, (gh2 * xhat2).sum(axis=(0, 1)))
        if ln2_beta.requires_grad:
            _accumulate(ln2_beta, gh2.sum(axis=(0, 1)))
        dy = g + _ln_backward(gh2, xhat2, istd2, ln2_gamma.data)

        # attention sublayer
        dy2 = dy.reshape(b * t, d)
        if wo.requires_grad:
            _accumulate(wo, merged.T @ dy2)
        if bo.requires_grad:
            _accumulate(bo, dy2.sum(axis=0))
        dctx = (dy2 @ wo.data.T).reshape(b, t, heads, hd).transpose(0, 2, 1, 3)
        dattn = dctx @ v.swapaxes(-1, -2)
        dv = attn.swapaxes(-1, -2) @ dctx
        dattn -= (dattn * attn).sum(axis=-1, keepdims=True)
        dattn *= attn
        dattn *= scale
        dqkv = np.empty_like(qkv)
        np.matmul(dattn, k, out=dqkv[0])
        np.matmul(dattn.swapaxes(-1, -2), q, out=dqkv[1])
        dqkv[2] = dv
        dqkv2 = np.ascontiguousarray(dqkv.transpose(1, 3, 0, 2, 4)).reshape(b * t, 3 * d)
        if wqkv.requires_grad:
            _accumulate(wqkv, h1.reshape(b * t, d).T @ dqkv2)
        if bqkv.requires_grad:
            _accumulate(bqkv, dqkv2.sum(axis=0))
        gh1 = (dqkv2 @ wqkv.data.T).reshape(b, t, d)
        if ln1_gamma.requires_grad:
            _accumulate(ln1_gamma, (gh1 * xhat1).sum(axis=(0, 1)))
        if ln1_beta.requires_grad:
            _accumulate(ln1_beta, gh1.sum(axis=(0, 1)))
        if x.requires_grad:
            dy += _ln_backward(gh1, xhat1, istd1, ln1_gamma.data)
            _accumulate(x, dy)

    parents = (x, ln1_gamma, ln1_beta, wqkv, bqkv, wo, bo, ln2_gamma, ln2_beta, w1, b1, w2, b2)
    return _node(out, parents, backward)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 2-d cross-correlation, differentiable in input and kernel.

    The loop nest runs over kernel offsets only; per offset the
    multiply-accumulate is vectorized over batch, channels and output
    positions, so no im2col buffer is materialized.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    b, c, h, w = x.shape
    out_ch, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(
            f"conv2d kernel {kernel.shape} larger than padded input ({b},{c},{hp},{wp})"
        )
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    # channels-last accumulators keep the per-offset contraction a plain
    # GEMM; a single transpose at the end restores (b, c, h, w)
    acc = np.zeros((b, oh, ow, out_ch), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
            acc += np.tensordot(patch, kernel.data[:, :, i, j], axes=([1], [1]))
    out = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))

    def backward(g):
        if kernel.requires_grad:
            dk = np.empty_like(kernel.data)
            for i in range(kh):
                for j in range(kw):
                    patch = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
                    dk[:, :, i, j] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
            _accumulate(kernel, dk)
        if x.requires_grad:
            dacc = np.zeros((b, hp, wp, c), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dacc[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += (
                        np.tensordot(g, kernel.data[:, :, i, j], axes=([1], [0]))
                    )
            dxp = dacc.transpose(0, 3, 1, 2)
            if padding:
                dxp = dxp[:, :, padding : padding + h, padding : padding + w]
            _accumulate(x, np.ascontiguousarray(dxp))

    return _node(out, (x, kernel), backward)
