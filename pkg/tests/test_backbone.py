import numpy as np
import pytest

from seqrisk.backbone import BackboneConfig, build, inflate, inflate_backbone, static_equivalence_check
from seqrisk.model import ModelConfig, RiskModel
from seqrisk.tensor import ShapeError, Tensor, directional_grad_check

DESK = dict(stem_channels=4, layer_channels=(4, 8), blocks_per_layer=2, embed_dim=6)


def calibrated(cfg, seed=0, size=16, frames=2):
    net = build(cfg, seed)
    net.calibrate(np.random.default_rng(seed + 100).normal(size=(3, frames, size, size)))
    return net


# -- inflation -------------------------------------------------------------------------
def test_inflate_all_ones_gives_planes_of_one_third():
    w = inflate(np.ones((1, 1, 3, 3)), 3)
    assert w.shape == (1, 1, 3, 3, 3)
    assert np.all(w == 1 / 3)


def test_inflate_t1_is_identity():
    w = np.random.default_rng(0).normal(size=(2, 3, 3, 3))
    assert np.array_equal(inflate(w, 1)[:, :, 0], w)


def test_inflated_planes_sum_to_source():
    w = np.random.default_rng(1).normal(size=(2, 3, 3, 3))
    for t in (2, 3, 5):
        np.testing.assert_allclose(inflate(w, t).sum(axis=2), w, rtol=0, atol=1e-15)


def test_inflate_rejects_bad_extent():
    with pytest.raises(ValueError):
        inflate(np.ones((1, 1, 3, 3)), 0)


# -- static equivalence ------------------------------------------------------------------
@pytest.mark.parametrize("T", [2, 3, 4])
def test_static_equivalence_replicate_padding(T):
    net2d = calibrated(BackboneConfig(**DESK, temporal_kernel=1), frames=1)
    net3d = inflate_backbone(net2d, 3)
    frame = np.random.default_rng(T).normal(size=(16, 16))
    assert static_equivalence_check(net2d, net3d, frame, T) < 1e-9


def test_static_equivalence_t1_is_bitwise():
    net2d = calibrated(BackboneConfig(**DESK, temporal_kernel=1), frames=1)
    net1 = inflate_backbone(net2d, 1)
    frame = np.random.default_rng(0).normal(size=(16, 16))
    assert static_equivalence_check(net2d, net1, frame, 1) == 0.0


def test_zero_temporal_padding_breaks_equivalence():
    net2d = calibrated(BackboneConfig(**DESK, temporal_kernel=1), frames=1)
    net3d = inflate_backbone(net2d, 3, temporal_mode="zero")
    frame = np.random.default_rng(0).normal(size=(16, 16))
    assert static_equivalence_check(net2d, net3d, frame, 3) > 1e-3


def test_static_equivalence_rejects_mismatch():
    a = build(BackboneConfig(**DESK, temporal_kernel=1))
    b = build(BackboneConfig(**{**DESK, "embed_dim": 7}, temporal_kernel=3))
    with pytest.raises(ValueError):
        static_equivalence_check(a, b, np.zeros((16, 16)))


def test_inflate_backbone_requires_2d_source():
    with pytest.raises(ValueError):
        inflate_backbone(build(BackboneConfig(**DESK)), 3)


# -- forward contract --------------------------------------------------------------------
def test_zero_video_gives_zero_embedding():
    net = build(BackboneConfig(**DESK))
    emb = net(np.zeros((2, 16, 16)))
    assert emb.shape == (6,)
    assert np.all(emb.data == 0)


@pytest.mark.parametrize("size", [16, 32, 48])
def test_embedding_shape_for_any_valid_size(size):
    net = calibrated(BackboneConfig(**DESK))
    assert net(np.random.default_rng(0).normal(size=(2, size, size))).shape == (6,)
    assert net(np.random.default_rng(0).normal(size=(3, 2, size, 8))).shape == (3, 6)


def test_indivisible_size_is_rejected():
    net = build(BackboneConfig(**DESK))
    with pytest.raises(ShapeError):
        net(np.zeros((2, 18, 16)))


def test_identical_items_in_batch_give_identical_embeddings():
    net = calibrated(BackboneConfig(**DESK))
    v = np.random.default_rng(3).normal(size=(2, 16, 16))
    out = net(np.stack([v, v])).data
    assert np.array_equal(out[0], out[1])
    np.testing.assert_allclose(out[0], net(v).data, rtol=0, atol=1e-12)


def test_forward_is_batch_independent():
    net = calibrated(BackboneConfig(**DESK))
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(2, 2, 16, 16))
    np.testing.assert_allclose(net(np.stack([a, b])).data[0], net(a).data, rtol=0, atol=1e-12)


def test_build_is_deterministic():
    n1, n2 = build(BackboneConfig(**DESK), 5), build(BackboneConfig(**DESK), 5)
    assert all(np.array_equal(n1.params[k].data, n2.params[k].data) for k in n1.params)
    n3 = build(BackboneConfig(**DESK), 6)
    assert not np.array_equal(n1.params["stem.w"].data, n3.params["stem.w"].data)


def test_first_conv_of_each_layer_is_temporal():
    net = build(BackboneConfig(**DESK, temporal_kernel=3))
    assert net.temporal_convs == ["layer1.0.conv1.w", "layer2.0.conv1.w"]
    for k, v in net.params.items():
        if k.endswith(".w") and v.ndim == 5:
            assert v.shape[2] == (3 if k in net.temporal_convs else 1), k


@pytest.mark.parametrize("kw", [dict(shift_layer=1, nonlocal_layer=2), dict(shift_layer=3),
                                dict(temporal_kernel=2), dict(nonlocal_layer=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        BackboneConfig(**DESK, **kw)


@pytest.mark.parametrize("kind", ["shift_layer", "nonlocal_layer"])
@pytest.mark.parametrize("layer", [1, 2])
def test_attention_insertion(kind, layer):
    net = calibrated(BackboneConfig(**DESK, **{kind: layer}))
    prefix = "shift." if kind == "shift_layer" else "nonlocal."
    assert any(k.startswith(prefix) for k in net.params)
    out = net(np.random.default_rng(0).normal(size=(2, 2, 16, 16)))
    assert out.shape == (2, 6) and np.all(np.isfinite(out.data))
    if kind == "shift_layer":
        state, thw = net.last_attention
        assert thw == ((2, 4, 4) if layer == 1 else (2, 2, 2))
        state.check(1e-10)


def test_views_share_one_backbone():
    model = RiskModel(ModelConfig(backbone=BackboneConfig(**DESK), n_radiomics=3))
    bb = model.view_backbones
    assert len({id(b) for b in bb.values()}) == 1
    assert all(bb["LCC"].params[k] is bb[v].params[k] for v in bb for k in bb["LCC"].params)


# -- gradients ---------------------------------------------------------------------------
BLOCKS = [("layer1.0", 4, 1), ("layer1.1", 4, 1), ("layer2.0", 4, 2), ("layer2.1", 8, 1)]


@pytest.mark.parametrize("pre,c_in,stride", BLOCKS)
def test_residual_block_gradients(pre, c_in, stride):
    net = calibrated(BackboneConfig(**DESK, temporal_kernel=3), size=32, frames=3)
    rng = np.random.default_rng(BLOCKS.index((pre, c_in, stride)))
    x = rng.normal(size=(2, c_in, 3, 8, 8))
    R = rng.normal(size=net.block(Tensor(x), pre, stride).shape)
    assert directional_grad_check(lambda t: (net.block(t, pre, stride) * R).sum(), x) < 1e-6
    for name in [k for k in net.params if k.startswith(pre + ".")]:
        orig = net.params[name]

        def f(t, name=name):
            net.params[name] = t
            return (net.block(Tensor(x), pre, stride) * R).sum()
        try:
            assert directional_grad_check(f, orig.data) < 1e-6, name
        finally:
            net.params[name] = orig


@pytest.mark.parametrize("shift", [None, 1])
def test_whole_backbone_gradient_on_8x8(shift):
    cfg = BackboneConfig(stem_channels=3, layer_channels=(4, 6), blocks_per_layer=2, embed_dim=5, shift_layer=shift)
    net = build(cfg, 0)
    x = np.random.default_rng(0).normal(size=(2, 2, 8, 8))
    net.calibrate(x)
    R = np.random.default_rng(1).normal(size=(2, 5))
    assert directional_grad_check(lambda t: (net(t) * R).sum(), x) < 1e-5
    for name, orig in list(net.params.items()):
        def f(t, name=name):
            net.params[name] = t
            return (net(x) * R).sum()
        try:
            assert directional_grad_check(f, orig.data, n_directions=3) < 1e-5, name
        finally:
            net.params[name] = orig
