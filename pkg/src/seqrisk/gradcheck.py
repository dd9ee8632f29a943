"""Finite-difference check of every differentiable op, used by ``seqrisk grad-check``.

Each entry returns the max relative error between reverse-mode and central
difference gradients on small random inputs.  Backbone blocks use random
directional checks because ReLU kinks make per-coordinate differences noisy.
"""

from __future__ import annotations

import numpy as np

from . import heads
from . import tensor as tn
from .attention import ShiftConfig, init_nonlocal, init_shift, nonlocal_forward, shift_forward
from .backbone import BackboneConfig, build
from .tensor import Tensor, conv3d, directional_grad_check, grad_check, matmul, numeric_grad, reduce, softmax
from .training import bce


def _rand(seed, *shape, lo=-2.0, hi=2.0):
    return np.random.default_rng(seed).uniform(lo, hi, size=shape)


def _weighted(op, seed, shape):
    w = Tensor(_rand(seed + 100, *op(Tensor(_rand(seed, *shape))).shape))
    return lambda t: (op(t) * w).sum()


def _elementwise():
    out = {}
    for i, name in enumerate(("sigmoid", "tanh", "exp", "abs", "relu")):
        op = lambda t, name=name: tn.elementwise(name, t)  # noqa: E731
        out[name] = grad_check(_weighted(op, i, (3, 4)), _rand(i, 3, 4))
    out["log"] = grad_check(lambda t: tn.log(t).sum(), _rand(9, 3, 4, lo=0.2, hi=2.0))
    out["power"] = grad_check(lambda t: (t ** 3).sum(), _rand(10, 3, 4))
    out["clip"] = grad_check(_weighted(lambda t: tn.clip(t, -1.0, 1.0), 11, (3, 4)), _rand(11, 3, 4))
    b = Tensor(_rand(12, 1, 4))
    for name in ("add", "sub", "mul", "div"):
        rhs = Tensor(_rand(13, 1, 4, lo=0.5, hi=2.0)) if name == "div" else b
        op = lambda t, name=name, rhs=rhs: tn.elementwise(name, t, rhs)  # noqa: E731
        out[name] = grad_check(_weighted(op, 14, (3, 4)), _rand(14, 3, 4))
    return out


def _structural():
    a, B = _rand(20, 3, 4), _rand(21, 4, 2)
    out = {
        "matmul": max(grad_check(lambda t: (matmul(t, Tensor(B)) ** 2).sum(), a),
                      grad_check(lambda t: (matmul(Tensor(a), t) ** 2).sum(), B)),
        "softmax": grad_check(_weighted(lambda t: softmax(t, -1), 22, (3, 5)), _rand(22, 3, 5)),
        "reshape_transpose": grad_check(_weighted(lambda t: t.reshape(4, 3).T, 23, (3, 4)), a),
        "index": grad_check(_weighted(lambda t: t[:, 1:3], 24, (3, 4)), a),
        "concat_stack": grad_check(lambda t: (tn.stack([tn.concat([t, Tensor(a)], 1), tn.concat([t, t], 1)]) ** 2)
                                   .sum(), a),
    }
    for op in ("sum", "mean", "max"):
        out[f"reduce_{op}"] = grad_check(_weighted(lambda t, op=op: reduce(op, t, 1), 25, (3, 4)), _rand(25, 3, 4))
    return out


def _conv():
    x, w, b = _rand(30, 1, 2, 3, 5, 5), _rand(31, 3, 2, 3, 3, 3), _rand(32, 3)
    R = _rand(33, 1, 3, 3, 3, 3)
    errs = []
    for mode in ("zero", "replicate"):
        f = lambda x_, w_, b_: (conv3d(x_, w_, b_, stride=2, padding=1, temporal_padding=1,  # noqa: E731
                                       temporal_mode=mode) * Tensor(R)).sum()
        errs += [grad_check(lambda t: f(t, Tensor(w), Tensor(b)), x),
                 grad_check(lambda t: f(Tensor(x), t, Tensor(b)), w),
                 grad_check(lambda t: f(Tensor(x), Tensor(w), t), b)]
    return {"conv3d": max(errs)}


def _attention():
    rng = np.random.default_rng(40)
    X = rng.normal(size=(6, 4))
    shift, zero_bias = [], 0.0
    for flags in ((False,) * 4, (True,) * 4):
        cfg = ShiftConfig(4, 2, *flags)
        p = init_shift(cfg, rng, zero_output=False)
        p = {k: Tensor(rng.normal(size=v.shape), requires_grad=True) if k.endswith("_b") else v for k, v in p.items()}

        def loss(name):
            def f(t):
                return shift_forward(X, cfg, {**p, name: t})[0].sum() if name else shift_forward(t, cfg, p)[0].sum()
            return f
        shift.append(grad_check(loss(None), X))
        for name in p:
            if name.endswith("_b"):
                # scoring biases shift every softmax logit equally: the true gradient is exactly zero
                t = Tensor(p[name].data.copy(), requires_grad=True)
                loss(name)(t).backward()
                analytic = 0.0 if t.grad is None else float(np.max(np.abs(t.grad)))
                zero_bias = max(zero_bias, analytic, float(np.max(np.abs(numeric_grad(loss(name), p[name].data)))))
            else:
                shift.append(grad_check(loss(name), p[name].data))
    q = init_nonlocal(4, 2, rng, zero_output=False)
    nl = [grad_check(lambda t: nonlocal_forward(t, q).sum(), X)]
    nl += [grad_check(lambda t, n=n: nonlocal_forward(X, {**q, n: t}).sum(), q[n].data) for n in q]
    # zero_bias is an absolute gradient magnitude; below 1e-8 it counts as exact
    return {"shift": max(shift + [0.0 if zero_bias < 1e-8 else 1.0]), "nonlocal": max(nl)}


def _backbone():
    cfg = BackboneConfig(stem_channels=4, layer_channels=(4, 8), blocks_per_layer=2, embed_dim=6, temporal_kernel=3)
    net = build(cfg, 0)
    net.calibrate(np.random.default_rng(50).normal(size=(2, 3, 32, 32)))
    worst = 0.0
    blocks = [("layer1.0", 4, 1), ("layer1.1", 4, 1), ("layer2.0", 4, 2), ("layer2.1", 8, 1)]
    for i, (pre, c_in, stride) in enumerate(blocks):
        rng = np.random.default_rng(i)
        x = rng.normal(size=(2, c_in, 3, 8, 8))
        R = Tensor(rng.normal(size=net.block(Tensor(x), pre, stride).shape))
        worst = max(worst, directional_grad_check(lambda t: (net.block(t, pre, stride) * R).sum(), x))
        for name in [k for k in net.params if k.startswith(pre + ".")]:
            orig = net.params[name]

            def f(t, name=name):
                net.params[name] = t
                return (net.block(Tensor(x), pre, stride) * R).sum()
            try:
                worst = max(worst, directional_grad_check(f, orig.data))
            finally:
                net.params[name] = orig
    return {"backbone_blocks": worst}


def _heads():
    rng = np.random.default_rng(60)
    logits, target = rng.normal(size=(6, 4)), rng.uniform(size=6)
    g = heads.GateState.from_scales()
    errs = [grad_check(lambda t: heads.combine_gated(t, g).sum(), logits)]
    for attr in ("w_theta_T", "w_theta_S"):
        orig = getattr(g, attr)

        def f(t, attr=attr):
            setattr(g, attr, t)
            return heads.combine_gated(Tensor(logits), g).sum()
        try:
            errs.append(grad_check(f, np.array([0.3])))
        finally:
            setattr(g, attr, orig)
    W, b = rng.normal(size=(9, 1)), rng.normal(size=1)
    emb, rad = rng.normal(size=(5, 6)), rng.normal(size=(5, 2))
    fuse = max(grad_check(lambda t: (heads.fuse_view(emb, rad, np.ones(5), t, b) ** 2).sum(), W),
               grad_check(lambda t: (heads.fuse_view(t, rad, np.ones(5), W, b) ** 2).sum(), emb))
    chain = max(grad_check(lambda t: bce(heads.combine_gated(t, g), target), logits),
                grad_check(lambda t: bce(heads.combine_average(t), target), logits))
    return {"gate": max(errs), "fuse_view": fuse, "bce_chain": chain}


def run_all() -> dict[str, float]:
    """Op name to max relative gradient error."""
    out = {}
    for part in (_elementwise, _structural, _conv, _attention, _backbone, _heads):
        out.update(part())
    return out
