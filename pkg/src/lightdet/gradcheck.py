"""Central-difference verification of the analytic backward passes.

The scalar probe is ``L = sum(weights * op(inputs))`` with a fixed random
``weights`` tensor; every input scalar is perturbed by ``+-h`` and the
numeric slope compared to the analytic one with the symmetric relative
error ``|a - n| / (|a| + |n| + 1e-12)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .blocks import EMA, Conv2d, ConvBNSiLU, Dysample, FastBlock, PConv, init_params
from .errors import ArgumentError, GradCheckError

MAX_SCALARS = 1000
TOLERANCE = 1e-5


@dataclass(frozen=True)
class GradCheckReport:
    op_name: str
    max_rel_error: float
    max_abs_error: float
    points_checked: int
    seed: int = 0

    @property
    def passed(self):
        return bool(self.max_rel_error <= TOLERANCE)


def gradcheck(op_forward, op_backward, inputs, seed=0, h=1e-5, op_name="op"):
    """Compare ``op_backward`` against central differences of ``op_forward``.

    ``op_forward(*inputs)`` returns one array; ``op_backward(dout, *inputs)``
    returns one gradient per input, in order. Inputs must be float64 and
    total at most 1,000 scalars.
    """
    inputs = [np.array(a, dtype=np.float64, copy=True) for a in _require_f64(inputs, op_name)]
    total = sum(a.size for a in inputs)
    if total > MAX_SCALARS:
        raise ArgumentError(f"{op_name}: {total} input scalars exceeds the {MAX_SCALARS} limit")
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal(np.shape(op_forward(*inputs)))
    analytic = op_backward(weights, *inputs)
    if len(analytic) != len(inputs):
        raise GradCheckError(f"{op_name}: backward returned {len(analytic)} gradients for {len(inputs)} inputs")

    max_rel = max_abs = 0.0
    for arr, grad in zip(inputs, analytic):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != arr.shape:
            raise GradCheckError(f"{op_name}: gradient shape {grad.shape} != input shape {arr.shape}")
        if not np.isfinite(grad).all():
            raise GradCheckError(f"{op_name}: non-finite analytic gradient")
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            x_up = flat[i]
            up = op_forward(*inputs)
            flat[i] = orig - h
            x_down = flat[i]
            down = op_forward(*inputs)
            flat[i] = orig
            # Difference before reducing: outputs the perturbation leaves
            # untouched cancel exactly instead of adding summation roundoff.
            # Divide by the step actually representable, not the nominal 2h.
            numeric = float(np.sum(weights * (up - down))) / float(x_up - x_down)
            a = gflat[i]
            err = abs(a - numeric)
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, err / (abs(a) + abs(numeric) + 1e-12))
    return GradCheckReport(op_name, float(max_rel), float(max_abs), total, seed)


def _require_f64(inputs, op_name):
    inputs = list(inputs)
    for a in inputs:
        if np.asarray(a).dtype != np.float64:
            raise ArgumentError(f"{op_name}: gradcheck requires float64 inputs, got {np.asarray(a).dtype}")
    return inputs


def block_case(block, x, rng):
    """Adapt a block with ``forward_with_cache``/``backward`` to the gradcheck protocol.

    The input tensor and every learnable array are checked; running
    statistics stay fixed.
    """
    params = init_params(block, rng, np.float64, scale=0.5)
    # Off-identity normalization so the affine parameters matter.
    for name in params:
        if name.endswith(("bn.weight", "gn.weight")):
            params[name] = rng.uniform(0.5, 1.5, params[name].shape)
        elif name.endswith(("bn.bias", "gn.bias")):
            params[name] = rng.uniform(-0.5, 0.5, params[name].shape)
        elif name.endswith("running_var"):
            params[name] = rng.uniform(0.5, 2.0, params[name].shape)
        elif name.endswith("running_mean"):
            params[name] = rng.uniform(-0.5, 0.5, params[name].shape)
    names = list(block.param_shapes())
    buffers = {k: v for k, v in params.items() if k not in names}

    def bind(values):
        return dict(buffers, **dict(zip(names, values)))

    def forward(x, *values):
        return block.forward_with_cache(bind(values), x)[0]

    def backward(dy, x, *values):
        p = bind(values)
        _, cache = block.forward_with_cache(p, x)
        dx, grads = block.backward(p, cache, dy)
        return [dx, *(grads[n] for n in names)]

    return forward, backward, [x, *(params[n] for n in names)]


class _Stateless:
    """Wrap a block whose ``backward`` takes the raw input instead of a cache."""

    def __init__(self, block):
        self.block = block

    def param_shapes(self):
        return self.block.param_shapes()

    def buffer_shapes(self):
        return self.block.buffer_shapes()

    def forward_with_cache(self, params, x):
        return self.block.forward(params, x), x

    def backward(self, params, x, dy):
        return self.block.backward(params, x, dy)


def _case_conv2d(rng):
    x = rng.standard_normal((1, 4, 5, 5))
    w = rng.standard_normal((6, 2, 3, 3))
    b = rng.standard_normal(6)
    fwd = lambda x, w, b: K.conv2d(x, w, b, stride=2, padding=1, groups=2)  # noqa: E731
    bwd = lambda dy, x, w, b: K.conv2d_backward(dy, x, w, stride=2, padding=1, groups=2)  # noqa: E731
    return fwd, bwd, [x, w, b]


def _case_softmax(rng):
    x = rng.standard_normal((1, 5, 3, 3))
    return (lambda x: K.softmax(x, axis=1),
            lambda dy, x: [K.softmax_backward(dy, K.softmax(x, axis=1), axis=1)], [x])


def _case_sigmoid(rng):
    x = rng.standard_normal((1, 3, 4, 4)) * 4
    return K.sigmoid, lambda dy, x: [K.sigmoid_backward(dy, K.sigmoid(x))], [x]


def _case_silu(rng):
    x = rng.standard_normal((1, 3, 4, 4)) * 4
    return K.silu, lambda dy, x: [K.silu_backward(dy, x)], [x]


def _case_grid_sample(rng):
    x = rng.standard_normal((1, 3, 4, 5))
    # Stay inside the clamp window; the kink at the border is not differentiable.
    grid = rng.uniform(-0.7, 0.7, size=(1, 3, 4, 2))
    return (K.grid_sample_bilinear,
            lambda dy, x, g: K.grid_sample_bilinear_backward(dy, x, g), [x, grid])


def _case_matmul(rng):
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 5))
    return K.matmul_batched, lambda dy, a, b: K.matmul_batched_backward(dy, a, b), [a, b]


def _case_group_norm(rng):
    x = rng.standard_normal((1, 4, 3, 3))
    gamma, beta = rng.uniform(0.5, 1.5, 4), rng.standard_normal(4)

    def bwd(dy, x, gamma, beta):
        _, stats = K.group_norm_with_stats(x, 2, gamma, beta)
        return K.group_norm_backward(dy, stats, 2, gamma)

    return lambda x, g, b: K.group_norm(x, 2, g, b), bwd, [x, gamma, beta]


def _case_conv_bn_silu(rng):
    return block_case(ConvBNSiLU(3, 4, 3), rng.standard_normal((1, 3, 5, 5)), rng)


def _case_pconv(rng):
    return block_case(_Stateless(PConv(8, 2)), rng.standard_normal((1, 8, 6, 6)), rng)


def _case_fast_block(rng):
    return block_case(FastBlock(8, mlp_ratio=2), rng.standard_normal((1, 8, 5, 5)), rng)


def _case_dysample(rng):
    return block_case(Dysample(8, scale=2, groups=4), rng.standard_normal((1, 8, 6, 6)), rng)


def _case_ema(rng):
    return block_case(EMA(8, groups=4), rng.standard_normal((1, 8, 6, 6)), rng)


def _case_conv2d_block(rng):
    return block_case(_Stateless(Conv2d(3, 4, 3, bias=True)), rng.standard_normal((1, 3, 4, 4)), rng)


CASES = {
    "conv2d": _case_conv2d,
    "conv2d_block": _case_conv2d_block,
    "softmax": _case_softmax,
    "sigmoid": _case_sigmoid,
    "silu": _case_silu,
    "grid_sample": _case_grid_sample,
    "matmul": _case_matmul,
    "group_norm": _case_group_norm,
    "conv_bn_silu": _case_conv_bn_silu,
    "pconv": _case_pconv,
    "fast_block": _case_fast_block,
    "dysample": _case_dysample,
    "ema": _case_ema,
}

DEFAULT_SEEDS = (0, 1, 2)


def check_op(name, seed=0):
    """Run the registered case ``name`` at ``seed``."""
    if name not in CASES:
        raise ArgumentError(f"unknown op {name!r}; choose from {', '.join(CASES)}")
    rng = np.random.default_rng(seed)
    fwd, bwd, inputs = CASES[name](rng)
    return gradcheck(fwd, bwd, inputs, seed=seed, op_name=name)


def run_suite(ops=None, seeds=DEFAULT_SEEDS):
    ops = list(CASES) if ops is None else list(ops)
    return [check_op(op, seed) for op in ops for seed in seeds]
