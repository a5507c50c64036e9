import numpy as np
import pytest

from lightdet import gradcheck as G
from lightdet import kernels as K
from lightdet.blocks import Conv2d, init_params
from lightdet.errors import ArgumentError, GradCheckError


@pytest.mark.parametrize("op", list(G.CASES))
@pytest.mark.parametrize("seed", G.DEFAULT_SEEDS)
def test_registered_backward_passes(op, seed):
    report = G.check_op(op, seed)
    assert report.points_checked >= 1 and report.max_rel_error >= 0
    assert report.max_rel_error <= 1e-5, report


def _linear_case(seed):
    rng = np.random.default_rng(seed)
    conv = Conv2d(2, 2, 1, bias=True)
    params = init_params(conv, rng, np.float64, scale=1.0)
    x = rng.standard_normal((1, 2, 3, 3))

    def fwd(x, w, b):
        return conv.forward({"weight": w, "bias": b}, x)

    def bwd(dy, x, w, b):
        dx, g = conv.backward({"weight": w, "bias": b}, x, dy)
        return dx, g["weight"], g["bias"]

    return G.gradcheck(fwd, bwd, [x, params["weight"], params["bias"]], seed=seed)


@pytest.mark.parametrize("seed", G.DEFAULT_SEEDS)
def test_linear_map_is_exact_to_roundoff(seed):
    assert _linear_case(seed).max_rel_error <= 1e-9


def test_linear_map_absolute_error_is_roundoff_everywhere():
    # The relative error degenerates on near-zero gradient components; the
    # absolute error is the seed-independent statement.
    assert max(_linear_case(s).max_abs_error for s in range(50)) <= 1e-10


def test_sigmoid_derivative_at_zero():
    x = np.zeros((1, 1, 1, 1))
    analytic = K.sigmoid_backward(np.ones_like(x), K.sigmoid(x))
    assert analytic[0, 0, 0, 0] == 0.25
    h = 1e-5
    numeric = (K.sigmoid(x + h) - K.sigmoid(x - h)) / (2 * h)
    assert abs(numeric[0, 0, 0, 0] - 0.25) <= 1e-8
    assert G.gradcheck(K.sigmoid, lambda dy, x: [K.sigmoid_backward(dy, K.sigmoid(x))], [x]).passed


def test_ema_on_1x8x4x4_groups_4():
    from lightdet.blocks import EMA
    rng = np.random.default_rng(5)
    fwd, bwd, inputs = G.block_case(EMA(8, groups=4), rng.standard_normal((1, 8, 4, 4)), rng)
    assert G.gradcheck(fwd, bwd, inputs, op_name="ema").max_rel_error <= 1e-5


def test_detects_a_wrong_backward():
    report = G.gradcheck(K.sigmoid, lambda dy, x: [dy * 0.3], [np.linspace(-2, 2, 8).reshape(1, 2, 2, 2)])
    assert not report.passed


def test_rejects_float32_inputs():
    with pytest.raises(ArgumentError, match="float64"):
        G.gradcheck(K.sigmoid, lambda dy, x: [dy], [np.zeros((1, 1, 2, 2), np.float32)])


def test_rejects_more_than_1000_scalars():
    with pytest.raises(ArgumentError, match="1000"):
        G.gradcheck(K.sigmoid, lambda dy, x: [dy], [np.zeros((1, 1, 40, 26))])


def test_non_finite_analytic_gradient_names_the_op():
    with pytest.raises(GradCheckError, match="myop"):
        G.gradcheck(K.sigmoid, lambda dy, x: [dy * np.inf], [np.zeros((1, 1, 2, 2))], op_name="myop")


def test_unknown_op():
    with pytest.raises(ArgumentError):
        G.check_op("nope")


def test_report_fields_are_plain_python_types():
    report = G.check_op("sigmoid", 0)
    assert type(report.max_rel_error) is float and type(report.max_abs_error) is float
    assert type(report.passed) is bool
