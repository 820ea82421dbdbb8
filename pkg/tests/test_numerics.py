import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from gazeil.errors import DimensionError
from gazeil.numerics import (
    DropoutMode,
    Graph,
    OptimizerState,
    Tensor,
    affine_forward,
    backward,
    conv2d_forward,
    finite_diff_check,
    flatten,
    optimizer_step,
    relu,
    spatial_modulated_dropout,
    uniform_dropout,
)
from gazeil.numerics import kernels
from gazeil.numerics import ops as nops

TRAIN, TEST = DropoutMode.TRAIN, DropoutMode.TEST


def naive_conv(x, k, b, stride):
    """Direct triple loop, independent of the im2col path."""
    c_out, c_in, kh, kw = k.shape
    _, h, w = x.shape
    oh, ow = (h - kh) // stride + 1, (w - kw) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for o in range(c_out):
        for y in range(oh):
            for z in range(ow):
                acc = b[o]
                for c in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            acc += x[c, y * stride + i, z * stride + j] * k[o, c, i, j]
                out[o, y, z] = acc
    return out


# conv2d_forward

def test_conv_all_ones():
    out = conv2d_forward(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 2, 2))), Tensor(np.zeros(1)), 1)
    assert out.shape == (1, 2, 2)
    np.testing.assert_array_equal(out.data, 4.0)


def test_conv_identity_kernel():
    x = np.random.default_rng(1).normal(size=(1, 5, 7))
    out = conv2d_forward(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)), 1)
    np.testing.assert_array_equal(out.data, x)


def test_conv_matches_naive_stride2():
    rng = np.random.default_rng(2)
    x, k, b = rng.normal(size=(1, 6, 6)), rng.normal(size=(2, 1, 3, 3)), rng.normal(size=2)
    out = conv2d_forward(Tensor(x), Tensor(k), Tensor(b), 2).data
    assert np.max(np.abs(out - naive_conv(x, k, b, 2))) < 1e-12


def test_conv_matches_naive_100_configs():
    rng = np.random.default_rng(3)
    for _ in range(100):
        c_in, c_out = rng.integers(1, 4), rng.integers(1, 4)
        kh, kw = rng.integers(1, 5), rng.integers(1, 5)
        h, w = rng.integers(kh, kh + 8), rng.integers(kw, kw + 8)
        stride = int(rng.integers(1, 4))
        x, k, b = rng.normal(size=(c_in, h, w)), rng.normal(size=(c_out, c_in, kh, kw)), rng.normal(size=c_out)
        out = conv2d_forward(Tensor(x), Tensor(k), Tensor(b), stride).data
        assert np.max(np.abs(out - naive_conv(x, k, b, stride))) < 1e-12


def test_conv_batch_equals_per_sample():
    rng = np.random.default_rng(4)
    x, k, b = rng.normal(size=(3, 2, 9, 11)), rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4)
    batch = conv2d_forward(Tensor(x), Tensor(k), Tensor(b), 2).data
    for n in range(3):
        np.testing.assert_allclose(batch[n], conv2d_forward(Tensor(x[n]), Tensor(k), Tensor(b), 2).data,
                                   atol=1e-12)


@pytest.mark.parametrize("x_shape,k_shape,axis", [
    ((2, 5, 5), (1, 3, 2, 2), "channel"),
    ((1, 2, 5), (1, 1, 3, 3), "height"),
    ((1, 5, 2), (1, 1, 3, 3), "width"),
])
def test_conv_shape_errors_name_axis(x_shape, k_shape, axis):
    with pytest.raises(DimensionError, match=axis):
        conv2d_forward(Tensor(np.zeros(x_shape)), Tensor(np.zeros(k_shape)), Tensor(np.zeros(k_shape[0])))


def test_im2col_col2im_paths_agree():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 11, 13))
    a = kernels.im2col_numba(x, 3, 5, 2)
    b = kernels.im2col_numpy(x, 3, 5, 2)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(kernels.col2im_numba(a, 2, 3, 11, 13, 3, 5, 2),
                               kernels.col2im_numpy(a, 2, 3, 11, 13, 3, 5, 2), atol=1e-12)


# affine / relu

def test_affine_identity_and_bias():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(affine_forward(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x)
    b = np.array([0.5, 0.25])
    np.testing.assert_array_equal(affine_forward(Tensor(x), Tensor(np.zeros((2, 3))), Tensor(b)).data, b)


def test_affine_matches_double_loop():
    rng = np.random.default_rng(6)
    x, w, b = rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3)
    expect = np.array([b[i] + sum(w[i, j] * x[j] for j in range(4)) for i in range(3)])
    assert np.max(np.abs(affine_forward(Tensor(x), Tensor(w), Tensor(b)).data - expect)) < 1e-12


def test_affine_dimension_error():
    with pytest.raises(DimensionError):
        affine_forward(Tensor(np.zeros(3)), Tensor(np.zeros((2, 4))), Tensor(np.zeros(2)))


def test_relu_values_and_gradient():
    np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    x = np.array([0.0, 1.5, 3.0])
    np.testing.assert_array_equal(relu(Tensor(x)).data, x)
    t = Tensor([-1.0, 2.0], requires_grad=True)
    backward(relu(t).sum())
    np.testing.assert_array_equal(t.grad, [0.0, 1.0])


def test_relu_gradient_zero_at_kink():
    t = Tensor([0.0], requires_grad=True)
    backward(relu(t).sum())
    assert t.grad[0] == 0.0


# dropout

@pytest.mark.parametrize("mode", [TRAIN, TEST])
def test_dropout_keep_one_is_identity(mode):
    x = np.random.default_rng(7).normal(size=(2, 3, 4))
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(uniform_dropout(Tensor(x), 1.0, mode, rng).data, x)
    np.testing.assert_array_equal(spatial_modulated_dropout(Tensor(x), np.ones((3, 4)), mode, rng).data, x)


def test_uniform_dropout_test_scaling():
    out = uniform_dropout(Tensor([2.0, 4.0]), 0.5, TEST, np.random.default_rng(0))
    np.testing.assert_array_equal(out.data, [1.0, 2.0])


def test_spatial_dropout_test_multiplies_mask():
    out = spatial_modulated_dropout(Tensor([[[2.0, 4.0]]]), np.array([[0.5, 1.0]]), TEST, np.random.default_rng(0))
    np.testing.assert_array_equal(out.data, [[[1.0, 4.0]]])


@pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
def test_uniform_dropout_rejects_keep_prob(p):
    with pytest.raises(ValueError):
        uniform_dropout(Tensor([1.0]), p, TRAIN, np.random.default_rng(0))


def test_spatial_dropout_argument_errors():
    x = Tensor(np.ones((2, 3, 4)))
    with pytest.raises(ValueError):
        spatial_modulated_dropout(x, np.ones((4, 3)), TEST, np.random.default_rng(0))
    with pytest.raises(ValueError):
        spatial_modulated_dropout(x, np.zeros((3, 4)), TEST, np.random.default_rng(0))
    with pytest.raises(ValueError):
        spatial_modulated_dropout(x, np.full((3, 4), 1.2), TEST, np.random.default_rng(0))


def test_spatial_dropout_mask_shared_across_channels():
    x = Tensor(np.ones((5, 6, 7)))
    out = spatial_modulated_dropout(x, np.full((6, 7), 0.5), TRAIN, np.random.default_rng(3)).data
    for c in range(1, 5):
        np.testing.assert_array_equal(out[c], out[0])


def test_spatial_dropout_train_gradient_only_through_kept():
    x = Tensor(np.ones((2, 3, 3)), requires_grad=True)
    out = spatial_modulated_dropout(x, np.full((3, 3), 0.5), TRAIN, np.random.default_rng(11))
    backward(out.sum())
    np.testing.assert_array_equal(x.grad, out.data)


def test_dropout_determinism_same_seed():
    x = np.random.default_rng(8).normal(size=(3, 5, 5))
    a = spatial_modulated_dropout(Tensor(x), np.full((5, 5), 0.3), TRAIN, np.random.default_rng(42)).data
    b = spatial_modulated_dropout(Tensor(x), np.full((5, 5), 0.3), TRAIN, np.random.default_rng(42)).data
    assert a.tobytes() == b.tobytes()
    a = uniform_dropout(Tensor(x), 0.3, TRAIN, np.random.default_rng(42)).data
    b = uniform_dropout(Tensor(x), 0.3, TRAIN, np.random.default_rng(42)).data
    assert a.tobytes() == b.tobytes()


def test_uniform_dropout_monte_carlo_mean():
    x = np.array([1.0, -2.0, 3.0, 0.5])
    rng = np.random.default_rng(9)
    samples = np.stack([uniform_dropout(Tensor(x), 0.5, TRAIN, rng).data for _ in range(10_000)])
    expect = uniform_dropout(Tensor(x), 0.5, TEST, rng).data
    assert np.all(np.abs(samples.mean(axis=0) - expect) <= 0.02 * np.abs(expect))


def test_spatial_dropout_monte_carlo_mean():
    x = np.array([[[1.0, 2.0], [3.0, -1.0]]])
    mask = np.array([[0.25, 0.5], [0.8, 1.0]])
    rng = np.random.default_rng(10)
    samples = np.stack([spatial_modulated_dropout(Tensor(x), mask, TRAIN, rng).data for _ in range(10_000)])
    expect = x * mask
    assert np.all(np.abs(samples.mean(axis=0) - expect) <= 0.02 * np.abs(expect))


def test_constant_mask_matches_uniform_keep_frequency():
    p, n = 0.4, 10_000
    x = Tensor(np.ones((1, 1, 1)))
    rng_a, rng_b = np.random.default_rng(12), np.random.default_rng(13)
    kept_spatial = sum(spatial_modulated_dropout(x, np.full((1, 1), p), TRAIN, rng_a).data[0, 0, 0] > 0
                       for _ in range(n))
    kept_uniform = sum(uniform_dropout(x, p, TRAIN, rng_b).data[0, 0, 0] > 0 for _ in range(n))
    assert stats.binomtest(int(kept_spatial), n, p).pvalue > 0.01
    assert stats.binomtest(int(kept_uniform), n, p).pvalue > 0.01


# backward / graph

def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    backward(x ** 2)
    assert x.grad == pytest.approx(6.0)


def test_backward_relu_dead():
    x = Tensor([-5.0], requires_grad=True)
    backward(relu(x).sum())
    assert x.grad[0] == 0.0


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        backward(Tensor([1.0, 2.0], requires_grad=True) * 2.0)


def test_backward_unreachable_param_gets_zero():
    a, b = Tensor([1.0], requires_grad=True), Tensor([2.0, 3.0], requires_grad=True)
    backward((a * 2.0).sum(), params=[a, b])
    np.testing.assert_array_equal(b.grad, [0.0, 0.0])


def test_graph_topological_order():
    x = Tensor(np.ones(3), requires_grad=True)
    y = relu(x * 2.0)
    loss = (y + y).sum()
    g = Graph.trace(loss)
    seen = set()
    for out, node in g.entries:
        for inp in node.inputs:
            if inp.node is not None:
                assert id(inp) in seen
        seen.add(id(out))
    assert g.ops()[-1] == "sum"
    assert g.leaves() == [x]


def _small_net(params, x):
    k1, b1, k2, b2, w1, c1, w2, c2 = params
    h = relu(conv2d_forward(x, k1, b1, 2))
    h = relu(conv2d_forward(h, k2, b2, 1))
    h = relu(affine_forward(flatten(h), w1, c1))
    return affine_forward(h, w2, c2).sum()


@pytest.mark.parametrize("seed", range(5))
def test_network_gradients_vs_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 9, 9)))
    shapes = [(3, 2, 3, 3), (3,), (4, 3, 2, 2), (4,), (5, 4 * 3 * 3), (5,), (2, 5), (2,)]
    arrays = [rng.normal(scale=0.5, size=s) for s in shapes]
    report = finite_diff_check(lambda *ps: _small_net(ps, x), arrays, tolerance=1e-4)
    assert report.passed, report.errors


# finite_diff_check

def test_gradcheck_affine_is_exact():
    rng = np.random.default_rng(14)
    report = finite_diff_check(affine_forward, [rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3)],
                               tolerance=1e-10)
    assert report.passed and report.max_rel_error < 1e-10


def test_gradcheck_detects_corrupted_conv_backward():
    def bad_conv(x, k, b):
        out = conv2d_forward(x, k, b, 1)
        inner = out.node.backward_fn

        def corrupted(g):
            gx, gk, gb = inner(g)
            gk = gk.copy()
            gk.reshape(-1)[0] *= 2.0
            return gx, gk, gb

        out.node.backward_fn = corrupted
        return out

    rng = np.random.default_rng(15)
    report = finite_diff_check(bad_conv, [rng.normal(size=(1, 5, 5)), rng.normal(size=(2, 1, 3, 3)),
                                          rng.normal(size=2)], tolerance=1e-4)
    assert not report.passed


def test_gradcheck_spatial_dropout_test_mode():
    mask = np.random.default_rng(16).uniform(0.25, 1.0, size=(4, 5))
    report = finite_diff_check(lambda x: spatial_modulated_dropout(x, mask, TEST, np.random.default_rng(0)),
                               [np.random.default_rng(17).normal(size=(3, 4, 5))], tolerance=1e-6)
    assert report.passed


# optimizers

def test_sgd_step():
    p = Tensor([1.0])
    optimizer_step([p], OptimizerState("sgd", 0.1), grads=[np.array([0.5])])
    assert p.data[0] == pytest.approx(0.95)


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_leaves_params(kind):
    p = Tensor([1.0, -2.0])
    before = p.data.copy()
    state = OptimizerState(kind, 0.1)
    for _ in range(3):
        optimizer_step([p], state, grads=[np.zeros(2)])
    np.testing.assert_array_equal(p.data, before)
    assert state.step_count == 3


@pytest.mark.parametrize("g", [10.0, 0.001])
def test_adam_first_step_magnitude(g):
    p = Tensor([0.0])
    optimizer_step([p], OptimizerState("adam", 0.01), grads=[np.array([g])])
    # bias-corrected first step is lr * g / (|g| + eps): ~lr for any gradient scale
    assert p.data[0] == pytest.approx(-0.01 * g / (g + 1e-8), rel=1e-12)
    assert abs(abs(p.data[0]) - 0.01) / 0.01 <= 1e-8 / g + 1e-12


def test_optimizer_shape_mismatch():
    with pytest.raises(DimensionError):
        optimizer_step([Tensor([1.0])], OptimizerState("sgd", 0.1), grads=[np.zeros(2)])


# properties

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_primitive_gradients_property(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 6, 7))
    x[np.abs(x) < 1e-3] = 0.1
    assert finite_diff_check(lambda t: relu(t), [x]).passed
    assert finite_diff_check(lambda a, k, b: conv2d_forward(a, k, b, 2),
                             [x, rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)]).passed
    mask = rng.uniform(0.1, 1.0, size=(6, 7))
    assert finite_diff_check(lambda t: spatial_modulated_dropout(t, mask, TRAIN, np.random.default_rng(seed)),
                             [x]).passed
    assert finite_diff_check(lambda t: uniform_dropout(t, 0.5, TRAIN, np.random.default_rng(seed)), [x]).passed


def test_upsample_and_softmax_gradients():
    rng = np.random.default_rng(18)
    assert finite_diff_check(lambda t: nops.upsample_bilinear(t, 7, 9), [rng.normal(size=(1, 3, 4))]).passed
    assert finite_diff_check(nops.spatial_softmax, [rng.normal(size=(2, 1, 3, 4))]).passed
    assert finite_diff_check(lambda t: nops.bce_with_logits(t, 1.0), [rng.normal(size=5)]).passed
    assert finite_diff_check(lambda a, b: nops.concat_channels([a, b]),
                             [rng.normal(size=(1, 3, 3)), rng.normal(size=(2, 3, 3))]).passed
