"""Dense NCHW kernels and their vector-Jacobian products.

Every forward kernel is a pure function of its arguments. The ``*_backward``
functions take the upstream gradient plus whatever the forward needed and
return gradients for the differentiable inputs. Only the kernels reachable
from the partial convolution, Fast-block, EMA and Dysample blocks have a
backward; the rest of the graph is forward-only.

Convolution is direct: one BLAS contraction per kernel tap, accumulated in
tap order, so results are deterministic run to run.
"""
from __future__ import annotations

import functools

import numpy as np

from .errors import ArgumentError, DomainError, NumericalError, ShapeError
from .tensor import as_nchw

# Checked only when a kernel output is non-finite, so the happy path costs
# one isfinite() over the output.
CHECK_FINITE = __debug__


def _finite_guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        out = fn(*args, **kwargs)
        if CHECK_FINITE and isinstance(out, np.ndarray) and not np.isfinite(out).all():
            arrays = [a for a in (*args, *kwargs.values()) if isinstance(a, np.ndarray)]
            if all(np.isfinite(a).all() for a in arrays):
                raise NumericalError(f"{fn.__name__} produced non-finite values from finite inputs")
        return out
    return wrapper


def conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _conv_geometry(x, weight, stride, padding, groups):
    as_nchw(x)
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be (co, ci/groups, k, k), got {weight.shape}")
    if stride < 1 or padding < 0 or groups < 1:
        raise ArgumentError(f"invalid conv2d stride={stride} padding={padding} groups={groups}")
    n, c, h, w = x.shape
    co, cig, kh, kw = weight.shape
    if c % groups or co % groups or cig * groups != c:
        raise ShapeError(
            f"conv2d input {x.shape} incompatible with weight {weight.shape} (groups={groups})")
    ho, wo = conv_out_size(h, kh, stride, padding), conv_out_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d kernel {kh}x{kw} does not fit padded input {x.shape}")
    return n, c, h, w, co, cig, kh, kw, ho, wo


def _tap(xp, i, j, stride, ho, wo):
    return xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


@_finite_guard
def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """2-d cross-correlation with zero padding.

    ``weight`` is ``(co, ci // groups, k, k)``; output is
    ``(n, co, floor((h + 2p - k) / s) + 1, floor((w + 2p - k) / s) + 1)``.
    """
    n, c, h, w, co, cig, kh, kw, ho, wo = _conv_geometry(x, weight, stride, padding, groups)
    xp = _pad(x, padding)
    out = np.zeros((n, co, ho, wo), dtype=np.result_type(x, weight))
    cog = co // groups
    for g in range(groups):
        xs = xp[:, g * cig:(g + 1) * cig]
        ws = weight[g * cog:(g + 1) * cog]
        acc = out[:, g * cog:(g + 1) * cog]
        for i in range(kh):
            for j in range(kw):
                # (cog, cig) . (n, cig, ho, wo) -> (cog, n, ho, wo)
                acc += np.tensordot(ws[:, :, i, j], _tap(xs, i, j, stride, ho, wo),
                                    axes=([1], [1])).transpose(1, 0, 2, 3)
    if bias is not None:
        if bias.shape != (co,):
            raise ShapeError(f"conv2d bias must be ({co},), got {bias.shape}")
        out += bias.reshape(1, co, 1, 1)
    return out


def conv2d_backward(dy, x, weight, stride=1, padding=0, groups=1):
    """Returns ``(dx, dweight, dbias)``; ``dbias`` is the channel sum of ``dy``."""
    n, c, h, w, co, cig, kh, kw, ho, wo = _conv_geometry(x, weight, stride, padding, groups)
    xp = _pad(x, padding)
    dxp = np.zeros_like(xp, dtype=np.result_type(dy, x))
    dw = np.zeros(weight.shape, dtype=np.result_type(dy, weight))
    cog = co // groups
    for g in range(groups):
        xs = xp[:, g * cig:(g + 1) * cig]
        dxs = dxp[:, g * cig:(g + 1) * cig]
        ws = weight[g * cog:(g + 1) * cog]
        dyg = dy[:, g * cog:(g + 1) * cog]
        for i in range(kh):
            for j in range(kw):
                dw[g * cog:(g + 1) * cog, :, i, j] = np.tensordot(
                    dyg, _tap(xs, i, j, stride, ho, wo), axes=([0, 2, 3], [0, 2, 3]))
                _tap(dxs, i, j, stride, ho, wo)[...] += np.tensordot(
                    ws[:, :, i, j], dyg, axes=([0], [1])).transpose(1, 0, 2, 3)
    dx = dxp[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(dx), dw, dy.sum(axis=(0, 2, 3))


@_finite_guard
def batchnorm_infer(x, gamma, beta, mean, var, eps=1e-3):
    """Inference batch norm: ``gamma * (x - mean) / sqrt(var + eps) + beta`` per channel."""
    as_nchw(x)
    c = x.shape[1]
    for name, v in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if np.shape(v) != (c,):
            raise ShapeError(f"batchnorm {name} must have shape ({c},), got {np.shape(v)}")
    denom = np.asarray(var) + eps
    if np.any(denom <= 0):
        raise DomainError("batchnorm requires var + eps > 0")
    scale = (gamma / np.sqrt(denom)).astype(x.dtype, copy=False)
    shift = (beta - mean * gamma / np.sqrt(denom)).astype(x.dtype, copy=False)
    return x * scale.reshape(1, c, 1, 1) + shift.reshape(1, c, 1, 1)


def batchnorm_infer_backward(dy, x, gamma, mean, var, eps=1e-3):
    """Returns ``(dx, dgamma, dbeta)``; running statistics are constants."""
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
    dx = dy * (gamma * inv).reshape(1, -1, 1, 1)
    return dx, (dy * xhat).sum(axis=(0, 2, 3)), dy.sum(axis=(0, 2, 3))


@_finite_guard
def sigmoid(x):
    # Sign-split form: exp() only ever sees non-positive arguments.
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def sigmoid_backward(dy, y):
    """Gradient given the forward *output* ``y``."""
    return dy * y * (1.0 - y)


@_finite_guard
def silu(x):
    return x * sigmoid(x)


def silu_backward(dy, x):
    s = sigmoid(x)
    return dy * (s + x * s * (1.0 - s))


def _broadcast_ok(a, b):
    if a.shape == b.shape:
        return True
    if a.ndim == b.ndim == 4 and a.shape[:2] == b.shape[:2]:
        return a.shape[2:] == (1, 1) or b.shape[2:] == (1, 1)
    return False


def add(x, y):
    if not _broadcast_ok(x, y):
        raise ShapeError(f"add: incompatible shapes {x.shape} and {y.shape}")
    return x + y


def mul(x, y):
    if not _broadcast_ok(x, y):
        raise ShapeError(f"mul: incompatible shapes {x.shape} and {y.shape}")
    return x * y


@_finite_guard
def softmax(x, axis=1):
    x = np.asarray(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax_backward(dy, y, axis=1):
    """Gradient given the forward *output* ``y``."""
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def max_pool(x, k, stride=1, padding=0):
    as_nchw(x)
    if k <= 0 or stride <= 0:
        raise ArgumentError(f"max_pool needs k > 0 and stride > 0, got k={k} stride={stride}")
    if padding < 0 or 2 * padding > k:
        raise ArgumentError(f"max_pool padding {padding} invalid for kernel {k}")
    n, c, h, w = x.shape
    ho, wo = conv_out_size(h, k, stride, padding), conv_out_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"max_pool kernel {k} does not fit padded input {x.shape}")
    xp = x
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=-np.inf)
    out = np.full((n, c, ho, wo), -np.inf, dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            np.maximum(out, _tap(xp, i, j, stride, ho, wo), out=out)
    return out


def global_avg_pool(x):
    return as_nchw(x).mean(axis=(2, 3), keepdims=True)


def avg_pool_w(x):
    """Mean over the width axis: ``(n, c, h, w) -> (n, c, h, 1)``."""
    return as_nchw(x).mean(axis=3, keepdims=True)


def avg_pool_h(x):
    """Mean over the height axis: ``(n, c, h, w) -> (n, c, 1, w)``."""
    return as_nchw(x).mean(axis=2, keepdims=True)


def avg_pool_backward(dy, in_shape, axes):
    """Spread ``dy`` uniformly back over the averaged ``axes``."""
    count = int(np.prod([in_shape[a] for a in axes]))
    return np.broadcast_to(dy / count, in_shape).copy()


def concat(xs, axis=1):
    xs = list(xs)
    if not xs:
        raise ShapeError("concat needs at least one tensor")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(a != b for d, (a, b) in enumerate(zip(x.shape, ref))
                                     if d != axis % len(ref)):
            raise ShapeError(f"concat along axis {axis}: shape {x.shape} does not match {ref}")
    return np.concatenate(xs, axis=axis)


def split(x, sizes, axis=1):
    sizes = list(sizes)
    if any(s < 0 for s in sizes) or sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not sum to axis extent {x.shape[axis]}")
    return np.split(x, np.cumsum(sizes)[:-1], axis=axis)


def upsample_nearest(x, scale):
    as_nchw(x)
    if scale < 1:
        raise ArgumentError(f"upsample scale must be >= 1, got {scale}")
    return x.repeat(scale, axis=2).repeat(scale, axis=3)


def pixel_shuffle(x, scale):
    """``(n, c*s*s, h, w) -> (n, c, h*s, w*s)``; channel ``c*s*s + i*s + j`` lands at ``(h*s+i, w*s+j)``."""
    n, cs, h, w = x.shape
    c = cs // (scale * scale)
    if c * scale * scale != cs:
        raise ShapeError(f"pixel_shuffle: {cs} channels not divisible by {scale}^2")
    return x.reshape(n, c, scale, scale, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(
        n, c, h * scale, w * scale)


def pixel_unshuffle(x, scale):
    n, c, hs, ws = x.shape
    h, w = hs // scale, ws // scale
    return x.reshape(n, c, h, scale, w, scale).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, c * scale * scale, h, w)


@_finite_guard
def matmul_batched(a, b):
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"matmul_batched: cannot multiply {a.shape} by {b.shape}")
    return np.matmul(a, b)


def matmul_batched_backward(dy, a, b):
    return np.matmul(dy, b.transpose(0, 2, 1)), np.matmul(a.transpose(0, 2, 1), dy)


@_finite_guard
def group_norm(x, num_groups, gamma, beta, eps=1e-5):
    y, _ = group_norm_with_stats(x, num_groups, gamma, beta, eps)
    return y


def group_norm_with_stats(x, num_groups, gamma, beta, eps=1e-5):
    n, c, h, w = as_nchw(x).shape
    if c % num_groups:
        raise ArgumentError(f"group_norm: {c} channels not divisible by {num_groups} groups")
    xg = x.reshape(n, num_groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(xg.var(axis=2, keepdims=True) + eps)
    xhat = ((xg - mu) * inv).reshape(n, c, h, w)
    y = xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)
    return y, (xhat, inv)


def group_norm_backward(dy, stats, num_groups, gamma):
    """Returns ``(dx, dgamma, dbeta)`` from the ``(xhat, inv_std)`` stats of the forward."""
    xhat, inv = stats
    n, c, h, w = xhat.shape
    dxhat = (dy * gamma.reshape(1, c, 1, 1)).reshape(n, num_groups, -1)
    xh = xhat.reshape(n, num_groups, -1)
    dx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True)
                - xh * (dxhat * xh).mean(axis=2, keepdims=True))
    return dx.reshape(n, c, h, w), (dy * xhat).sum(axis=(0, 2, 3)), dy.sum(axis=(0, 2, 3))


def upsample_grid(n, h, w, scale, dtype=np.float32):
    """Canonical sampling grid of a ``scale``-times resize, normalized, align_corners=False.

    Output pixel ``(oy, ox)`` samples source position ``((ox + 0.5) / scale, (oy + 0.5) / scale)``
    in pixel-edge coordinates. Shape ``(n, h*scale, w*scale, 2)``, last axis ``(x, y)``.
    """
    xs = 2.0 * (np.arange(w * scale) + 0.5) / (w * scale) - 1.0
    ys = 2.0 * (np.arange(h * scale) + 0.5) / (h * scale) - 1.0
    gx, gy = np.meshgrid(xs, ys)
    grid = np.stack([gx, gy], axis=-1).astype(dtype)
    return np.broadcast_to(grid, (n, *grid.shape)).copy()


def _unnormalize(coord, size):
    # align_corners=False: -1 and +1 are the outer edges of the border pixels.
    pix = ((coord + 1.0) * size - 1.0) / 2.0
    inside = (pix > 0) & (pix < size - 1)
    return np.clip(pix, 0, size - 1), inside


def _corners(x, grid):
    n, c, h, w = x.shape
    ix, in_x = _unnormalize(grid[..., 0], w)
    iy, in_y = _unnormalize(grid[..., 1], h)
    x0 = np.floor(ix).astype(np.intp)
    y0 = np.floor(iy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx1 = (ix - x0).astype(x.dtype, copy=False)
    wy1 = (iy - y0).astype(x.dtype, copy=False)
    base = (np.arange(n) * h * w).reshape(n, 1, 1)
    idx = [base + yy * w + xx for yy, xx in ((y0, x0), (y0, x1), (y1, x0), (y1, x1))]
    return idx, wx1, wy1, in_x, in_y


@_finite_guard
def grid_sample_bilinear(x, grid):
    """Bilinear sampling with border clamping (align_corners=False).

    ``x`` is ``(n, c, h, w)``, ``grid`` is ``(n, ho, wo, 2)`` with normalized
    ``(x, y)`` coordinates; returns ``(n, c, ho, wo)``.
    """
    as_nchw(x)
    if grid.ndim != 4 or grid.shape[-1] != 2 or grid.shape[0] != x.shape[0]:
        raise ShapeError(f"grid {grid.shape} incompatible with input {x.shape}")
    n, c = x.shape[:2]
    flat = x.transpose(0, 2, 3, 1).reshape(-1, c)
    (i00, i01, i10, i11), wx1, wy1, _, _ = _corners(x, grid)
    wx1, wy1 = wx1[..., None], wy1[..., None]
    wx0, wy0 = 1 - wx1, 1 - wy1
    out = (flat[i00] * (wy0 * wx0) + flat[i01] * (wy0 * wx1)
           + flat[i10] * (wy1 * wx0) + flat[i11] * (wy1 * wx1))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def grid_sample_bilinear_backward(dy, x, grid):
    """Returns ``(dx, dgrid)``. Clamped coordinates receive zero gradient."""
    n, c, h, w = x.shape
    flat = x.transpose(0, 2, 3, 1).reshape(-1, c)
    (i00, i01, i10, i11), wx1, wy1, in_x, in_y = _corners(x, grid)
    g = dy.transpose(0, 2, 3, 1)  # (n, ho, wo, c)
    wx1e, wy1e = wx1[..., None], wy1[..., None]
    wx0e, wy0e = 1 - wx1e, 1 - wy1e

    dflat = np.zeros_like(flat, dtype=np.result_type(dy, x))
    for idx, wgt in ((i00, wy0e * wx0e), (i01, wy0e * wx1e), (i10, wy1e * wx0e), (i11, wy1e * wx1e)):
        np.add.at(dflat, idx.ravel(), (g * wgt).reshape(-1, c))
    dx = dflat.reshape(n, h, w, c).transpose(0, 3, 1, 2)

    v00, v01, v10, v11 = flat[i00], flat[i01], flat[i10], flat[i11]
    dix = (g * (wy0e * (v01 - v00) + wy1e * (v11 - v10))).sum(axis=-1)
    diy = (g * (wx0e * (v10 - v00) + wx1e * (v11 - v01))).sum(axis=-1)
    dgrid = np.stack([dix * (w / 2.0) * in_x, diy * (h / 2.0) * in_y], axis=-1)
    return np.ascontiguousarray(dx), dgrid.astype(grid.dtype, copy=False)
