import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lightdet import kernels as K
from lightdet.errors import ArgumentError, DomainError, NumericalError, ShapeError
from oracles import bilinear_resize, conv2d_loops, matmul_loops

RNG = np.random.default_rng(1234)


# conv2d

def test_conv_all_ones_sum():
    out = K.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 9.0


def test_conv_1x1_is_per_pixel_matmul():
    x = RNG.standard_normal((1, 2, 4, 4))
    w = np.array([[1, 0], [0, 1], [1, 1], [2, -1]], dtype=float).reshape(4, 2, 1, 1)
    out = K.conv2d(x, w)
    assert out.shape == (1, 4, 4, 4)
    np.testing.assert_allclose(out[0].reshape(4, -1), w[:, :, 0, 0] @ x[0].reshape(2, -1), atol=1e-12)


@pytest.mark.parametrize("stride, padding, groups, k",
                         [(2, 1, 1, 3), (1, 0, 1, 3), (1, 2, 1, 5), (2, 1, 3, 3), (1, 0, 1, 1)])
def test_conv_matches_nested_loops(stride, padding, groups, k):
    x = RNG.standard_normal((2, 3, 5, 5))
    w = RNG.standard_normal((6, 3 // groups, k, k))
    b = RNG.standard_normal(6)
    out = K.conv2d(x, w, b, stride, padding, groups)
    np.testing.assert_allclose(out, conv2d_loops(x, w, b, stride, padding, groups), rtol=1e-12, atol=1e-12)


def test_conv_spec_geometry():
    out = K.conv2d(RNG.standard_normal((1, 3, 5, 5)), RNG.standard_normal((4, 3, 3, 3)), stride=2, padding=1)
    assert out.shape == (1, 4, 3, 3)


def test_conv_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 3, 4, 4\).*\(2, 2, 3, 3\)"):
        K.conv2d(np.zeros((1, 3, 4, 4)), np.zeros((2, 2, 3, 3)))


@settings(max_examples=25, deadline=None)
@given(c=st.integers(1, 6), h=st.integers(1, 6), w=st.integers(1, 6),
       dtype=st.sampled_from([np.float32, np.float64]), seed=st.integers(0, 2**32 - 1))
def test_identity_1x1_conv_is_exact_identity(c, h, w, dtype, seed):
    x = np.random.default_rng(seed).standard_normal((2, c, h, w)).astype(dtype)
    eye = np.eye(c, dtype=dtype).reshape(c, c, 1, 1)
    assert np.array_equal(K.conv2d(x, eye), x)


# batch norm

def test_batchnorm_identity_and_affine():
    x = RNG.standard_normal((1, 2, 3, 3))
    one, zero = np.ones(2), np.zeros(2)
    assert np.array_equal(K.batchnorm_infer(x, one, zero, zero, one, eps=0.0), x)
    y = K.batchnorm_infer(np.full((1, 1, 1, 1), 3.0), np.array([2.0]), np.array([1.0]),
                          np.zeros(1), np.ones(1), eps=0.0)
    assert y[0, 0, 0, 0] == 7.0


def test_batchnorm_matches_scalar_formula():
    x = RNG.standard_normal((2, 3, 2, 2)).astype(np.float32)
    g, b, m = RNG.standard_normal(3), RNG.standard_normal(3), RNG.standard_normal(3)
    v = RNG.uniform(0.1, 2.0, 3)
    y = K.batchnorm_infer(x, g, b, m, v, 1e-3)
    for idx in np.ndindex(x.shape):
        c = idx[1]
        ref = g[c] * (float(x[idx]) - m[c]) / np.sqrt(v[c] + 1e-3) + b[c]
        assert abs(y[idx] - ref) <= 1e-5 * max(1.0, abs(ref))


def test_batchnorm_domain_error():
    with pytest.raises(DomainError):
        K.batchnorm_infer(np.zeros((1, 1, 1, 1)), np.ones(1), np.zeros(1), np.zeros(1), np.array([-1.0]), 1e-3)


# elementwise

def test_sigmoid_silu_fixed_points():
    assert K.sigmoid(np.array(0.0)) == 0.5
    assert K.silu(np.array(0.0)) == 0.0


def test_sigmoid_is_bounded_and_monotone_on_a_ladder():
    # float64: in float32 sigmoid(20) rounds to exactly 1.0.
    ladder = np.linspace(-20, 20, 4001)
    s = K.sigmoid(ladder)
    assert np.all((s > 0) & (s < 1))
    assert np.all(np.diff(s) > 0)


def test_sigmoid_extremes_do_not_overflow():
    with np.errstate(over="raise"):
        s = K.sigmoid(np.array([-1000.0, 1000.0], dtype=np.float32))
    assert np.all(np.isfinite(s))


def test_silu_definition():
    x = RNG.standard_normal(50)
    np.testing.assert_allclose(K.silu(x), x / (1 + np.exp(-x)), rtol=1e-12)


def test_add_mul_broadcast_rules():
    x = RNG.standard_normal((1, 3, 2, 2))
    c = RNG.standard_normal((1, 3, 1, 1))
    np.testing.assert_array_equal(K.add(x, c), x + c)
    np.testing.assert_array_equal(K.mul(c, x), x * c)
    with pytest.raises(ShapeError):
        K.add(x, np.zeros((1, 2, 1, 1)))
    with pytest.raises(ShapeError):
        K.mul(x, np.zeros((1, 3, 2, 1)))


# softmax

def test_softmax_uniform_and_saturated():
    np.testing.assert_array_equal(K.softmax(np.zeros(4), axis=0), np.full(4, 0.25))
    one_hot = K.softmax(np.array([30.0, 0, 0, 0]), axis=0)
    assert abs(one_hot[0] - 1.0) <= 1e-9


def test_softmax_matches_formula():
    x = RNG.standard_normal((3, 7))
    ref = np.exp(x) / np.exp(x).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(K.softmax(x, axis=1), ref, atol=1e-6)


def test_softmax_bad_axis():
    with pytest.raises(ShapeError):
        K.softmax(np.zeros((2, 2)), axis=2)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=4, max_side=5),
                  elements=st.floats(-1e3, 1e3)), st.integers(0, 3))
def test_softmax_sums_to_one(x, axis):
    axis = axis % x.ndim
    s = K.softmax(x, axis=axis)
    np.testing.assert_allclose(s.sum(axis=axis), 1.0, atol=1e-6)


# pooling

def test_pools_of_constant():
    x = np.full((1, 2, 4, 6), 3.0)
    for y in (K.max_pool(x, 3, 1, 1), K.global_avg_pool(x), K.avg_pool_w(x), K.avg_pool_h(x)):
        assert np.all(y == 3.0)
    assert K.global_avg_pool(x).shape == (1, 2, 1, 1)
    assert K.avg_pool_w(x).shape == (1, 2, 4, 1)
    assert K.avg_pool_h(x).shape == (1, 2, 1, 6)


def test_sppf_pool_keeps_shape():
    assert K.max_pool(RNG.standard_normal((1, 1, 8, 8)), 5, 1, 2).shape == (1, 1, 8, 8)


def test_avg_pool_w_row_means():
    x = np.array([[1, 2, 3], [4, 5, 6]], dtype=float).reshape(1, 1, 2, 3)
    np.testing.assert_array_equal(K.avg_pool_w(x).ravel(), [2.0, 5.0])


def test_max_pool_matches_window_max():
    x = RNG.standard_normal((1, 2, 6, 6))
    y = K.max_pool(x, 3, 2, 1)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    for c, i, j in np.ndindex(2, 3, 3):
        assert y[0, c, i, j] == xp[0, c, 2 * i:2 * i + 3, 2 * j:2 * j + 3].max()


@pytest.mark.parametrize("k", [0, -1])
def test_max_pool_rejects_bad_kernel(k):
    with pytest.raises(ArgumentError):
        K.max_pool(np.zeros((1, 1, 4, 4)), k)


# concat / split

def test_concat_split_shapes():
    a, b = np.zeros((1, 2, 2, 2)), np.ones((1, 2, 2, 2))
    assert K.concat([a, b]).shape == (1, 4, 2, 2)
    parts = K.split(np.zeros((1, 4, 2, 2)), [1, 3])
    assert [p.shape for p in parts] == [(1, 1, 2, 2), (1, 3, 2, 2)]
    with pytest.raises(ShapeError):
        K.concat([a, np.zeros((1, 2, 3, 2))])
    with pytest.raises(ShapeError):
        K.split(a, [1, 2])


@settings(max_examples=30, deadline=None)
@given(sizes=st.lists(st.integers(1, 4), min_size=1, max_size=4), axis=st.integers(1, 3),
       seed=st.integers(0, 2**32 - 1))
def test_split_concat_round_trip(sizes, axis, seed):
    rng = np.random.default_rng(seed)
    xs = []
    for s in sizes:
        shape = [1, 2, 3, 2]
        shape[axis] = s
        xs.append(rng.standard_normal(shape).astype(np.float32))
    back = K.split(K.concat(xs, axis=axis), sizes, axis=axis)
    assert all(np.array_equal(a, b) and a.tobytes() == b.tobytes() for a, b in zip(xs, back))


# upsampling

def test_upsample_nearest_replicates():
    x = np.array([[1, 2], [3, 4]], dtype=float).reshape(1, 1, 2, 2)
    expected = [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
    np.testing.assert_array_equal(K.upsample_nearest(x, 2)[0, 0], expected)
    np.testing.assert_array_equal(K.upsample_nearest(x, 1), x)


def test_upsample_nearest_blocks_are_constant():
    x = RNG.standard_normal((1, 3, 4, 5))
    y = K.upsample_nearest(x, 3)
    assert y.shape == (1, 3, 12, 15)
    for i, j in np.ndindex(4, 5):
        block = y[:, :, 3 * i:3 * i + 3, 3 * j:3 * j + 3]
        assert np.all(block == x[:, :, i:i + 1, j:j + 1])


def test_pixel_shuffle_round_trip():
    x = RNG.standard_normal((2, 8, 3, 4))
    assert np.array_equal(K.pixel_unshuffle(K.pixel_shuffle(x, 2), 2), x)


# grid sampling

def identity_grid(n, h, w):
    return K.upsample_grid(n, h, w, 1, np.float64)


def test_grid_sample_identity_grid():
    x = RNG.standard_normal((2, 3, 5, 7)).astype(np.float32)
    y = K.grid_sample_bilinear(x, identity_grid(2, 5, 7).astype(np.float32))
    np.testing.assert_allclose(y, x, atol=1e-6)


def test_grid_sample_midpoint_average():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    assert K.grid_sample_bilinear(x, np.zeros((1, 1, 1, 2)))[0, 0, 0, 0] == 2.5


@pytest.mark.parametrize("scale", [2, 3])
def test_grid_sample_on_resize_grid_equals_bilinear_resize(scale):
    x = RNG.standard_normal((2, 3, 4, 5)).astype(np.float32)
    y = K.grid_sample_bilinear(x, K.upsample_grid(2, 4, 5, scale))
    np.testing.assert_allclose(y, bilinear_resize(x.astype(np.float64), scale), atol=1e-6)


def test_grid_sample_clamps_far_coordinates():
    x = RNG.standard_normal((1, 2, 3, 3))
    grid = np.array([[[[-50.0, -50.0], [50.0, 50.0]]]])
    y = K.grid_sample_bilinear(x, grid)
    np.testing.assert_allclose(y[0, :, 0, 0], x[0, :, 0, 0])
    np.testing.assert_allclose(y[0, :, 0, 1], x[0, :, 2, 2])


def test_grid_sample_batch_mismatch():
    with pytest.raises(ShapeError):
        K.grid_sample_bilinear(np.zeros((2, 1, 3, 3)), np.zeros((1, 2, 2, 2)))


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 6), w=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_identity_grid_reproduces_input_f32(h, w, seed):
    x = np.random.default_rng(seed).standard_normal((1, 2, h, w)).astype(np.float32)
    y = K.grid_sample_bilinear(x, identity_grid(1, h, w).astype(np.float32))
    np.testing.assert_allclose(y, x, atol=1e-6)


# matmul

def test_matmul_identity_and_scalar():
    a = RNG.standard_normal((2, 3, 3))
    eye = np.broadcast_to(np.eye(3), (2, 3, 3))
    np.testing.assert_array_equal(K.matmul_batched(eye, a), a)
    assert K.matmul_batched(np.full((1, 1, 1), 3.0), np.full((1, 1, 1), 4.0))[0, 0, 0] == 12.0


def test_matmul_matches_loops():
    a, b = RNG.standard_normal((2, 3, 4)), RNG.standard_normal((2, 4, 2))
    np.testing.assert_allclose(K.matmul_batched(a, b), matmul_loops(a, b), rtol=1e-12)


def test_matmul_dim_mismatch():
    with pytest.raises(ShapeError):
        K.matmul_batched(np.zeros((1, 2, 3)), np.zeros((1, 2, 3)))


# group norm

def test_group_norm_statistics():
    x = RNG.standard_normal((2, 6, 3, 3)) * 4 + 2
    y = K.group_norm(x, 3, np.ones(6), np.zeros(6))
    g = y.reshape(2, 3, -1)
    np.testing.assert_allclose(g.mean(axis=2), 0, atol=1e-12)
    np.testing.assert_allclose(g.var(axis=2), 1, atol=1e-4)


# cross-cutting

def test_kernels_are_deterministic():
    x = RNG.standard_normal((1, 4, 6, 6)).astype(np.float32)
    w = RNG.standard_normal((4, 4, 3, 3)).astype(np.float32)
    grid = RNG.uniform(-1.2, 1.2, (1, 5, 5, 2)).astype(np.float32)
    for fn in (lambda: K.conv2d(x, w, None, 1, 1), lambda: K.softmax(x), lambda: K.grid_sample_bilinear(x, grid),
               lambda: K.max_pool(x, 5, 1, 2), lambda: K.silu(x)):
        assert fn().tobytes() == fn().tobytes()


def test_finite_guard_reports_nan_from_finite_inputs():
    @K._finite_guard
    def broken(x):
        return x * np.nan

    with pytest.raises(NumericalError, match="broken"):
        broken(np.ones(3))
    # Non-finite inputs propagate silently: the guard only blames the kernel.
    assert np.isnan(broken(np.array([np.inf]))).all()
