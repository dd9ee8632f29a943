import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqrisk import tensor as tn
from seqrisk.tensor import Tensor, ShapeError, conv3d, grad_check, matmul, reduce, softmax


def rand(seed, *shape, lo=-2.0, hi=2.0):
    return np.random.default_rng(seed).uniform(lo, hi, size=shape)


# -- elementwise ---------------------------------------------------------------------
def test_trivial_values():
    assert tn.sigmoid(Tensor(0.0)).item() == 0.5
    assert tn.tanh(Tensor(0.0)).item() == 0.0
    assert np.array_equal(tn.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4.0, 6.0])


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
        tn.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_elementwise_dispatch():
    a, b = Tensor([1.0, -2.0]), Tensor([3.0, 4.0])
    assert np.array_equal(tn.elementwise("mul", a, b).data, [3.0, -8.0])
    assert np.array_equal(tn.elementwise("abs", a).data, [1.0, 2.0])
    with pytest.raises(ValueError):
        tn.elementwise("mul", a)


def test_abs_gradient_zero_at_kink():
    x = Tensor([0.0, -1.0, 2.0], requires_grad=True)
    tn.absolute(x).sum().backward()
    assert x.grad.tolist() == [0.0, -1.0, 1.0]


UNARY = ["sigmoid", "tanh", "exp", "abs"]


@pytest.mark.parametrize("op", UNARY)
@pytest.mark.parametrize("seed", range(3))
def test_unary_grad_check(op, seed):
    x = rand(seed, 3, 4)
    x[np.abs(x) < 1e-3] = 0.5  # keep |x| off the kink for abs
    err = grad_check(lambda t: (tn.elementwise(op, t) * Tensor(rand(seed + 9, 3, 4))).sum(), x)
    assert err < 1e-6


def test_log_grad_check():
    x = rand(1, 5, lo=0.2, hi=2.0)
    assert grad_check(lambda t: tn.log(t).sum(), x) < 1e-6


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_binary_grad_check_with_broadcast(op):
    b = rand(3, 1, 4) + 3.0  # keep division well conditioned
    a = rand(4, 3, 4)
    w = Tensor(rand(5, 3, 4))
    assert grad_check(lambda t: (tn.elementwise(op, t, Tensor(b)) * w).sum(), a) < 1e-6
    assert grad_check(lambda t: (tn.elementwise(op, Tensor(a), t) * w).sum(), b) < 1e-6


def test_broadcast_matches_explicit_tiling():
    a = Tensor(rand(0, 3, 4))
    b = rand(1, 1, 4)
    tiled = Tensor(np.tile(b, (3, 1)))
    assert np.array_equal((a + Tensor(b)).data, (a + tiled).data)
    assert np.array_equal((a * Tensor(b)).data, (a * tiled).data)


# -- matmul ------------------------------------------------------------------------
def test_matmul_identity_and_dot():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(Tensor(np.eye(2)), m).data, m.data)
    assert matmul(Tensor(np.ones((1, 2))), Tensor(np.ones((2, 1)))).data.tolist() == [[2.0]]


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradients():
    A, B = rand(0, 3, 4), rand(1, 4, 2)
    assert grad_check(lambda t: matmul(t, Tensor(B)).sum(), A) < 1e-6
    assert grad_check(lambda t: matmul(Tensor(A), t).sum(), B) < 1e-6
    a = Tensor(A, requires_grad=True)
    matmul(a, Tensor(B)).sum().backward()
    np.testing.assert_allclose(a.grad, np.tile(B.sum(axis=1), (3, 1)))


def test_batched_matmul_gradient():
    X, W = rand(2, 2, 3, 4), rand(3, 4, 2)
    assert grad_check(lambda t: (matmul(Tensor(X), t) ** 2).sum(), W) < 1e-6
    assert grad_check(lambda t: (matmul(t, Tensor(W)) ** 2).sum(), X) < 1e-6


# -- softmax & reductions ------------------------------------------------------------
def test_softmax_values():
    np.testing.assert_array_equal(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    s = softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(s)) and s[0] == pytest.approx(1.0) and s[1] < 1e-300
    r = softmax(Tensor(rand(0, 4, 5)), axis=0).data
    assert np.max(np.abs(r.sum(axis=0) - 1)) < 1e-12


def test_softmax_shift_invariance():
    x = rand(0, 3, 6)
    a = softmax(Tensor(x), axis=1).data
    b = softmax(Tensor(x + 17.25), axis=1).data
    assert np.max(np.abs(a - b)) < 1e-12


@pytest.mark.parametrize("axis", [0, 1, -1])
def test_softmax_grad(axis):
    w = Tensor(rand(8, 3, 5))
    assert grad_check(lambda t: (softmax(t, axis) * w).sum(), rand(7, 3, 5)) < 1e-6


def test_reduce_values():
    assert reduce("sum", Tensor([1.0, 2.0, 3.0])).item() == 6
    assert reduce("mean", Tensor(np.ones((2, 2))), 0).data.tolist() == [1.0, 1.0]


def test_max_gradient_one_hot_first_argmax():
    x = Tensor([1.0, 5.0, 5.0, 2.0], requires_grad=True)
    x.max().backward()
    assert x.grad.tolist() == [0.0, 1.0, 0.0, 0.0]
    y = Tensor([[3.0, 1.0], [3.0, 0.0]], requires_grad=True)
    y.min(axis=0).sum().backward()
    assert y.grad.tolist() == [[1.0, 0.0], [0.0, 1.0]]  # tie in column 0 goes to row 0
    z = Tensor([[1.0, 4.0], [4.0, 0.0]], requires_grad=True)
    z.max().backward()
    assert z.grad.tolist() == [[0.0, 1.0], [0.0, 0.0]]


@pytest.mark.parametrize("op", ["sum", "mean", "max", "min"])
@pytest.mark.parametrize("axis", [None, 0, (1, 2)])
def test_reduce_grad(op, axis):
    w = Tensor(rand(3, *np.asarray(rand(0, 2, 3, 4)).sum(axis=axis, keepdims=False).shape) if axis is not None else 1.0)
    assert grad_check(lambda t: (reduce(op, t, axis) * w).sum(), rand(2, 2, 3, 4)) < 1e-6


def test_invalid_axis():
    with pytest.raises(ValueError):
        reduce("sum", Tensor(np.ones(3)), 2)


# -- conv3d ------------------------------------------------------------------------
def test_conv_delta_kernel_is_identity():
    x = rand(0, 2, 3, 5, 5)
    w = np.zeros((2, 2, 1, 1, 1))
    w[0, 0] = w[1, 1] = 1.0
    np.testing.assert_array_equal(conv3d(Tensor(x), Tensor(w)).data, x)


def test_conv_box_sum():
    out = conv3d(Tensor(np.ones((1, 1, 6, 6))), Tensor(np.ones((1, 1, 1, 3, 3))), padding=1).data
    assert out[0, 0, 2, 3] == 9 and out[0, 0, 0, 0] == 4


def test_conv_replicate_on_static_video_is_constant_in_time():
    frame = rand(1, 1, 1, 6, 6)
    video = np.repeat(frame, 4, axis=1)
    w = rand(2, 3, 1, 3, 3, 3)
    out = conv3d(Tensor(video), Tensor(w), padding=1, temporal_padding=1, temporal_mode="replicate").data
    for t in range(1, 4):
        np.testing.assert_allclose(out[:, t], out[:, 0], atol=1e-12)
    zero = conv3d(Tensor(video), Tensor(w), padding=1, temporal_padding=1).data
    assert np.max(np.abs(zero[:, 0] - zero[:, 1])) > 1e-3


def test_conv_output_shape_and_stride():
    out = conv3d(Tensor(np.ones((2, 3, 2, 8, 8))), Tensor(np.ones((4, 3, 1, 3, 3))), stride=2, padding=1)
    assert out.shape == (2, 4, 2, 4, 4)


def test_conv_kernel_too_large():
    with pytest.raises(ShapeError):
        conv3d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 1, 3, 3))))


@pytest.mark.parametrize("mode", ["zero", "replicate"])
@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradients(mode, stride):
    x = rand(0, 2, 2, 3, 4, 4)
    w = rand(1, 3, 2, 3, 3, 3)
    b = rand(2, 3)
    R = None

    def f_x(t):
        nonlocal R
        y = conv3d(t, Tensor(w), Tensor(b), stride=stride, padding=1, temporal_padding=1, temporal_mode=mode)
        if R is None:
            R = Tensor(rand(3, *y.shape))
        return (y * R).sum()

    assert grad_check(f_x, x) < 1e-6
    assert grad_check(lambda t: (conv3d(Tensor(x), t, Tensor(b), stride=stride, padding=1, temporal_padding=1,
                                        temporal_mode=mode) * R).sum(), w) < 1e-6
    assert grad_check(lambda t: (conv3d(Tensor(x), Tensor(w), t, stride=stride, padding=1, temporal_padding=1,
                                        temporal_mode=mode) * R).sum(), b) < 1e-6


# -- grad_check harness & graph ------------------------------------------------------
def test_grad_check_examples():
    assert grad_check(lambda t: t.sum(), rand(0, 5)) < 1e-8
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).sum().backward()
    assert x.grad.tolist() == [2.0, 4.0]
    assert grad_check(lambda t: (t * t).sum(), np.array([1.0, 2.0])) < 1e-8
    assert grad_check(lambda t: tn.sigmoid(t).sum(), rand(3, 6)) < 1e-6


@pytest.mark.filterwarnings("ignore:invalid value")
def test_grad_check_rejects_non_finite():
    with pytest.raises(ValueError):
        grad_check(lambda t: tn.log(t).sum(), np.array([-1.0, 1.0]))


def test_backward_visits_shared_nodes_once():
    x = Tensor([3.0], requires_grad=True)
    y = x * x
    z = y + y  # y reused
    z.sum().backward()
    assert x.grad.tolist() == [12.0]


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with tn.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


def test_concat_stack_index_reshape_grads():
    a, b = rand(0, 2, 3), rand(1, 2, 2)
    w = Tensor(rand(2, 2, 5))
    assert grad_check(lambda t: (tn.concat([t, Tensor(b)], axis=1) * w).sum(), a) < 1e-6
    assert grad_check(lambda t: (tn.stack([t, t * 2.0]) ** 2).sum(), a) < 1e-6
    assert grad_check(lambda t: (t[:, 1] * Tensor([2.0, 3.0])).sum(), a) < 1e-6
    assert grad_check(lambda t: (t.reshape(3, 2).T * Tensor(rand(5, 2, 3))).sum(), a) < 1e-6


def test_forward_is_deterministic():
    x = rand(0, 1, 2, 6, 6)
    w = rand(1, 2, 1, 3, 3, 3)
    a = conv3d(Tensor(x), Tensor(w), padding=1, temporal_padding=1).data
    b = conv3d(Tensor(x.copy()), Tensor(w.copy()), padding=1, temporal_padding=1).data
    assert a.tobytes() == b.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2 ** 31))
def test_random_small_tensors_pass_grad_check(m, n, seed):
    x = rand(seed, m, n)
    w = Tensor(rand(seed + 1, m, n))
    f = lambda t: (tn.tanh(t) * w + tn.sigmoid(t * t)).sum()  # noqa: E731
    assert grad_check(f, x) < 1e-6


@pytest.mark.parametrize("op", ["sum", "mean", "max", "min"])
def test_reduce_keepdims(op):
    x = rand(4, 2, 3, 4)
    y = reduce(op, Tensor(x), (0, 2), keepdims=True)
    assert y.shape == (1, 3, 1)
    np.testing.assert_array_equal(y.data[0, :, 0], reduce(op, Tensor(x), (0, 2)).data)
    w = Tensor(rand(5, 1, 3, 1))
    assert grad_check(lambda t: (reduce(op, t, (0, 2), keepdims=True) * w).sum(), x) < 1e-6


# -- directional check --------------------------------------------------------------------
def _bad_square(a):
    # backward off by 1% on purpose
    return tn._make(a.data ** 2, (a,), lambda g: (g * 2.02 * a.data,), "bad_square")


def test_directional_check_passes_correct_gradient():
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert tn.directional_grad_check(lambda t: (t * t).sum(), x) < 1e-8


def test_directional_check_flags_wrong_gradient():
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert tn.directional_grad_check(lambda t: _bad_square(t).sum(), x) > 1e-3


def test_directional_check_rejects_nonfinite():
    with pytest.raises(ValueError):
        tn.directional_grad_check(lambda t: (t * np.inf).sum(), np.ones(2))
