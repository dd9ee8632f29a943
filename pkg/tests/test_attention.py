import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqrisk.attention import (
    AttentionState, ShiftConfig, count_macs, count_params, init_nonlocal, init_shift, mac_breakdown,
    nonlocal_forward, shift_forward, top_attention_points,
)
from seqrisk.tensor import ShapeError, Tensor, grad_check, numeric_grad

from oracles import nonlocal_oracle, shift_oracle

FLAGS = ("share_query_key", "share_alpha_beta", "query_value_addition", "global_key_from_p")


def random_params(cfg, seed, zero_output=False):
    return init_shift(cfg, np.random.default_rng(seed), zero_output=zero_output)


def randomize_biases(params, seed):
    rng = np.random.default_rng(seed)
    for k in params:
        if k.endswith("_b"):
            params[k] = Tensor(rng.normal(size=params[k].shape), requires_grad=True)
    return params


def data(p):
    return {k: v.data for k, v in p.items()}


# -- shift block -----------------------------------------------------------------------
def test_zero_scoring_layer_gives_uniform_alpha():
    cfg = ShiftConfig(4, 2)
    p = random_params(cfg, 0)
    p["fc_q_w"] = Tensor(np.zeros((2, 1)))
    p["fc_q_b"] = Tensor(np.zeros(1))
    _, state = shift_forward(np.random.default_rng(1).normal(size=(8, 4)), cfg, p)
    assert np.all(state.alpha == 1 / 8)


def test_zero_output_transform_is_identity():
    cfg = ShiftConfig(4, 2)
    X = np.random.default_rng(1).normal(size=(8, 4))
    Y, _ = shift_forward(X, cfg, random_params(cfg, 0, zero_output=True))
    assert np.array_equal(Y.data, X)


@pytest.mark.parametrize("flags", list(itertools.product([False, True], repeat=4)))
def test_shift_matches_equation_transcription(flags):
    kw = dict(zip(FLAGS, flags))
    cfg = ShiftConfig(4, 2, **kw)
    p = randomize_biases(random_params(cfg, 3), 4)
    X = np.random.default_rng(5).normal(size=(8, 4))
    Y, state = shift_forward(X, cfg, p)
    Yo, ao, bo = shift_oracle(X, data(p), key_from_p=kw.pop("global_key_from_p"), **kw)
    np.testing.assert_allclose(Y.data, Yo, atol=1e-12)
    np.testing.assert_allclose(state.alpha, ao, atol=1e-14)
    np.testing.assert_allclose(state.beta, bo, atol=1e-14)


def test_batched_forward_matches_per_item():
    cfg = ShiftConfig(6, 3)
    p = random_params(cfg, 1)
    X = np.random.default_rng(2).normal(size=(3, 10, 6))
    Yb, sb = shift_forward(X, cfg, p)
    for i in range(3):
        Yi, si = shift_forward(X[i], cfg, p)
        np.testing.assert_allclose(Yb.data[i], Yi.data, atol=1e-13)
        np.testing.assert_allclose(sb.alpha[i], si.alpha, atol=1e-15)


def test_attention_weights_are_distributions():
    cfg = ShiftConfig(8)
    X = np.random.default_rng(3).normal(size=(2, 200, 8)) * 3
    _, state = shift_forward(X, cfg, random_params(cfg, 2))
    state.check()
    assert state.n == 200 and np.all(state.alpha > 0) and np.all(state.beta > 0)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        shift_forward(np.ones((4, 3)), ShiftConfig(4), random_params(ShiftConfig(4), 0))


def test_config_validation():
    assert ShiftConfig(64).c_b == 32
    with pytest.raises(ValueError):
        ShiftConfig(4, 5)
    with pytest.raises(ValueError):
        ShiftConfig(4, 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_shift_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    cfg = ShiftConfig(4, 2)
    p = random_params(cfg, seed)
    X = rng.normal(size=(9, 4))
    perm = rng.permutation(9)
    Y, _ = shift_forward(X, cfg, p)
    Yp, _ = shift_forward(X[perm], cfg, p)
    assert np.max(np.abs(Yp.data - Y.data[perm])) < 1e-10


def _shift_loss(X, cfg, p, name=None):
    def f(t):
        q = dict(p)
        if name is None:
            return shift_forward(t, cfg, q)[0].sum()
        q[name] = t
        return shift_forward(X, cfg, q)[0].sum()
    return f


@pytest.mark.parametrize("flags", [(False,) * 4, (True, True, True, False), (False, False, False, True)])
def test_shift_gradients(flags):
    cfg = ShiftConfig(4, 2, **dict(zip(FLAGS, flags)))
    p = randomize_biases(random_params(cfg, 7), 8)
    X = np.random.default_rng(9).normal(size=(6, 4))
    assert grad_check(_shift_loss(X, cfg, p), X) < 1e-6
    for name in p:
        f = _shift_loss(X, cfg, p, name)
        if name.endswith("_b"):
            # softmax is shift invariant, so the scoring biases get an exactly zero gradient
            t = Tensor(p[name].data.copy(), requires_grad=True)
            f(t).backward()
            analytic = t.grad if t.grad is not None else np.zeros(1)
            assert np.max(np.abs(analytic)) < 1e-12
            assert np.max(np.abs(numeric_grad(f, p[name].data))) < 1e-8
        else:
            assert grad_check(f, p[name].data) < 1e-6, name


# -- non-local baseline --------------------------------------------------------------
def test_nonlocal_identity_with_zero_output():
    X = np.random.default_rng(0).normal(size=(5, 4))
    Y = nonlocal_forward(X, init_nonlocal(4, 2, np.random.default_rng(1)))
    assert np.array_equal(Y.data, X)


def test_nonlocal_two_position_hand_example():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    p = {"theta": Tensor(np.array([[1.0], [0.0]]) * 2), "phi": Tensor(np.array([[1.0], [0.0]])),
         "g": Tensor(np.array([[1.0], [2.0]])), "w_o": Tensor(np.array([[1.0, 1.0]]))}
    # theta = (2, 0), phi = (1, 0): row 0 scores (2, 0), row 1 scores (0, 0); g = (1, 2)
    s = 1 / (1 + math.exp(-2))
    row0 = s * 1 + (1 - s) * 2
    row1 = 0.5 * 1 + 0.5 * 2
    want = X + np.array([[row0, row0], [row1, row1]])
    np.testing.assert_allclose(nonlocal_forward(X, p).data, want, atol=1e-15)


def test_nonlocal_matches_oracle_and_is_equivariant():
    rng = np.random.default_rng(4)
    p = init_nonlocal(4, 2, rng, zero_output=False)
    X = rng.normal(size=(7, 4))
    Y = nonlocal_forward(X, p)
    np.testing.assert_allclose(Y.data, nonlocal_oracle(X, data(p)), atol=1e-12)
    perm = rng.permutation(7)
    assert np.max(np.abs(nonlocal_forward(X[perm], p).data - Y.data[perm])) < 1e-10


def test_nonlocal_gradients():
    rng = np.random.default_rng(5)
    p = init_nonlocal(4, 2, rng, zero_output=False)
    X = rng.normal(size=(6, 4))
    assert grad_check(lambda t: nonlocal_forward(t, p).sum(), X) < 1e-6
    for name in p:
        assert grad_check(lambda t: nonlocal_forward(X, {**p, name: t}).sum(), p[name].data) < 1e-6


def test_nonlocal_memory_guard():
    p = init_nonlocal(2, 1, np.random.default_rng(0))
    with pytest.raises(MemoryError):
        nonlocal_forward(np.zeros((9, 2)), p, max_positions=8)


# -- resource accounting -------------------------------------------------------------
def test_param_counts():
    assert count_params("nonlocal", 64, 32) == 8192
    assert count_params("shift", 64, 32) == 8258
    assert count_params("nonlocal", 2, 1) == 8


@pytest.mark.parametrize("flags", list(itertools.product([False, True], repeat=3)))
def test_param_count_matches_initialized_params(flags):
    cfg = ShiftConfig(6, 3, *flags)
    p = init_shift(cfg, np.random.default_rng(0))
    assert sum(v.size for v in p.values()) == count_params("shift", 6, 3, cfg)
    assert sum(v.size for v in init_nonlocal(6, 3, np.random.default_rng(0)).values()) == count_params("nonlocal", 6, 3)


def test_sharing_deltas():
    C, Cb = 64, 32
    base = count_params("shift", C, Cb, ShiftConfig(C, Cb))
    assert base - count_params("shift", C, Cb, ShiftConfig(C, Cb, share_query_key=True)) == C * Cb
    assert base - count_params("shift", C, Cb, ShiftConfig(C, Cb, share_alpha_beta=True)) == Cb + 1
    both = ShiftConfig(C, Cb, True, True, True)
    assert base - count_params("shift", C, Cb, both) == C * Cb + Cb + 1


def test_mac_counts():
    assert mac_breakdown("nonlocal", 64, 32, 2048)["attention"] == 268_435_456
    assert abs(268_435_456 - 268.427e6) / 268.427e6 < 1e-4
    assert count_macs("shift", 64, 32, 4096) == 2 * count_macs("shift", 64, 32, 2048)
    ratios = [count_macs("nonlocal", 64, 32, n) / count_macs("shift", 64, 32, n) for n in (2048, 4096, 8192)]
    assert ratios[0] < ratios[1] < ratios[2]


def test_mac_growth_orders():
    s = [count_macs("shift", 8, 4, n) for n in range(1, 6)]
    nl = [count_macs("nonlocal", 8, 4, n) for n in range(1, 6)]
    assert len(set(np.diff(s))) == 1 and s[0] == count_macs("shift", 8, 4, 1)
    assert len(set(np.diff(nl, 2))) == 1 and np.diff(nl, 2)[0] != 0


# -- top points ----------------------------------------------------------------------
def test_top_points_uniform_tie_break():
    assert top_attention_points(np.full(8, 1 / 8), 1, (2, 2, 2)) == [(0, 0, 0, 0.125)]


def test_top_points_index_arithmetic():
    alpha = np.zeros(8)
    alpha[5] = 1.0
    t, y, x, w = top_attention_points(AttentionState(alpha, alpha), 1, (1, 2, 4))[0]
    assert (t, y, x, w) == (0, 1, 1, 1.0)


def test_top_points_sorted_and_validated():
    alpha = np.random.default_rng(0).dirichlet(np.ones(64))
    pts = top_attention_points(alpha, 20, (2, 4, 8))
    w = [p[3] for p in pts]
    assert len(pts) == 20 and all(a >= b for a, b in zip(w, w[1:]))
    with pytest.raises(ValueError):
        top_attention_points(alpha, 65, (2, 4, 8))
