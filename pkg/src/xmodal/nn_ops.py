"""Network-level differentiable operations: convolutions, pooling, heads.

Convolution is cross-correlation (the usual deep-learning convention).
2D inputs may be [C,H,W] or [B,C,H,W]; 3D inputs [G,D,H,W] or
[B,G,D,H,W]. Kernels must have odd spatial extents.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _from_op


def _out_extent(n: int, k: int, pad: int, stride: int) -> int:
    out = (n + 2 * pad - k) // stride + 1
    if out < 1:
        raise ShapeError(f"kernel {k} with padding {pad} does not fit extent {n}")
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate [B,C,H,W] (or [C,H,W]) input with [Co,Ci,kh,kw] kernels."""
    unbatched = x.data.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d: input must be rank 3 or 4, got shape {x.shape}")
    if w.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be rank 4, got shape {w.shape}")
    B, C, H, W = xd.shape
    Co, Ci, kh, kw = w.shape
    if Ci != C:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {Ci}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if b.shape != (Co,):
        raise ShapeError(f"conv2d: bias shape {b.shape}, expected ({Co},)")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride {stride} or padding {padding}")

    Ho = _out_extent(H, kh, padding, stride)
    Wo = _out_extent(W, kw, padding, stride)
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))

    # im2col: one BLAS matmul instead of kh*kw small contractions
    cols = np.empty((C, kh, kw, B, Ho, Wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride]
            cols[:, i, j] = xs.transpose(1, 0, 2, 3)
    w2 = w.data.reshape(Co, C * kh * kw)
    out = (w2 @ cols.reshape(C * kh * kw, -1)).reshape(Co, B, Ho, Wo)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    out += b.data[None, :, None, None]

    def vjp(g):
        if unbatched:
            g = g[None]
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(Co, -1)
        flat = cols.reshape(C * kh * kw, -1)
        gw = (g2 @ flat.T).reshape(w.shape)
        gcols = (w2.T @ g2).reshape(C, kh, kw, B, Ho, Wo)
        gx = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += (
                    gcols[:, i, j].transpose(1, 0, 2, 3)
                )
        if padding:
            gx = gx[:, :, padding:-padding, padding:-padding]
        gb = g.sum(axis=(0, 2, 3))
        return (gx[0] if unbatched else gx), gw, gb

    result = out[0] if unbatched else out
    return _from_op(result, (x, w, b), vjp)


def conv3d(x: Tensor, w: Tensor, b: Tensor, stride=(1, 1, 1), padding=(0, 0, 0)) -> Tensor:
    """Cross-correlate [B,G,D,H,W] (or [G,D,H,W]) input with [Go,G,kd,kh,kw] kernels."""
    unbatched = x.data.ndim == 4
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 5:
        raise ShapeError(f"conv3d: input must be rank 4 or 5, got shape {x.shape}")
    if w.data.ndim != 5:
        raise ShapeError(f"conv3d: weight must be rank 5, got shape {w.shape}")
    B, G, D, H, W = xd.shape
    Go, Gi, kd, kh, kw = w.shape
    if Gi != G:
        raise ShapeError(f"conv3d: input has {G} groups, weight expects {Gi}")
    if kd % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv3d: kernel extents must be odd, got {kd}x{kh}x{kw}")
    if b.shape != (Go,):
        raise ShapeError(f"conv3d: bias shape {b.shape}, expected ({Go},)")
    sd, sh, sw = stride
    pd, ph, pw = padding
    if min(sd, sh, sw) < 1 or min(pd, ph, pw) < 0:
        raise ShapeError(f"conv3d: invalid stride {stride} or padding {padding}")

    Do = _out_extent(D, kd, pd, sd)
    Ho = _out_extent(H, kh, ph, sh)
    Wo = _out_extent(W, kw, pw, sw)
    xp = np.pad(xd, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))

    def window(i, j, k):
        return (
            slice(None),
            slice(None),
            slice(i, i + sd * Do, sd),
            slice(j, j + sh * Ho, sh),
            slice(k, k + sw * Wo, sw),
        )

    cols = np.empty((G, kd, kh, kw, B, Do, Ho, Wo), dtype=xd.dtype)
    for i in range(kd):
        for j in range(kh):
            for k in range(kw):
                cols[:, i, j, k] = xp[window(i, j, k)].transpose(1, 0, 2, 3, 4)
    w2 = w.data.reshape(Go, G * kd * kh * kw)
    out = (w2 @ cols.reshape(G * kd * kh * kw, -1)).reshape(Go, B, Do, Ho, Wo)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3, 4))
    out += b.data[None, :, None, None, None]

    def vjp(g):
        if unbatched:
            g = g[None]
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3, 4)).reshape(Go, -1)
        flat = cols.reshape(G * kd * kh * kw, -1)
        gw = (g2 @ flat.T).reshape(w.shape)
        gcols = (w2.T @ g2).reshape(G, kd, kh, kw, B, Do, Ho, Wo)
        gx = np.zeros_like(xp)
        for i in range(kd):
            for j in range(kh):
                for k in range(kw):
                    gx[window(i, j, k)] += gcols[:, i, j, k].transpose(1, 0, 2, 3, 4)
        gx = gx[:, :, pd : gx.shape[2] - pd, ph : gx.shape[3] - ph, pw : gx.shape[4] - pw]
        gb = g.sum(axis=(0, 2, 3, 4))
        return (gx[0] if unbatched else gx), gw, gb

    result = out[0] if unbatched else out
    return _from_op(result, (x, w, b), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """Average over all trailing spatial axes, keeping the leading (batch and
    channel) axes. [B,C,...spatial] -> [B,C] and [C,...spatial] -> [C]."""
    if x.data.ndim < 3:
        raise ShapeError(f"global_avg_pool: need spatial axes, got shape {x.shape}")
    lead = 2 if x.data.ndim >= 4 else 1
    axes = tuple(range(lead, x.data.ndim))
    n = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axes)

    def vjp(g):
        gg = g.reshape(g.shape + (1,) * len(axes))
        return (np.broadcast_to(gg, x.shape) / n,)

    return _from_op(out, (x,), vjp)


def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: [B,in] @ [in,out] + [out] (also accepts a single [in] row)."""
    unbatched = x.data.ndim == 1
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 2 or w.data.ndim != 2 or xd.shape[1] != w.shape[0]:
        raise ShapeError(f"fully_connected: {x.shape} @ {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"fully_connected: bias shape {b.shape}, expected ({w.shape[1]},)")
    out = xd @ w.data + b.data

    def vjp(g):
        if unbatched:
            g = g[None]
        gx = g @ w.data.T
        return (gx[0] if unbatched else gx), xd.T @ g, g.sum(axis=0)

    return _from_op(out[0] if unbatched else out, (x, w, b), vjp)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row (last axis) to unit Euclidean norm; eps keeps the
    all-zero row finite."""
    if eps <= 0:
        raise ValueError(f"l2_normalize: eps must be positive, got {eps}")
    norm = np.sqrt((x.data**2).sum(axis=-1, keepdims=True) + eps * eps)
    out = x.data / norm

    def vjp(g):
        dot = (g * x.data).sum(axis=-1, keepdims=True)
        return (g / norm - x.data * (dot / norm**3),)

    return _from_op(out, (x,), vjp)


def softmax_cross_entropy(logits: Tensor, target_index) -> Tensor:
    """Mean negative log softmax probability of the target classes.

    ``logits`` is [B,N] (or a single [N] row); ``target_index`` holds the
    class index of each row.
    """
    unbatched = logits.data.ndim == 1
    ld = logits.data[None] if unbatched else logits.data
    if ld.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits rank must be 1 or 2, got {logits.shape}")
    targets = np.atleast_1d(np.asarray(target_index, dtype=np.intp))
    B, N = ld.shape
    if targets.shape != (B,):
        raise ShapeError(f"softmax_cross_entropy: {B} rows but {targets.shape} targets")
    if targets.min() < 0 or targets.max() >= N:
        raise IndexError(f"target index out of range [0, {N})")

    shifted = ld - ld.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(B), targets].mean()

    def vjp(g):
        grad = np.exp(logp)
        grad[np.arange(B), targets] -= 1.0
        grad *= float(g.reshape(())) / B
        return (grad[0] if unbatched else grad,)

    return _from_op(np.asarray(loss, dtype=ld.dtype), (logits,), vjp)
