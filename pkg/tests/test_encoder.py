import numpy as np
import pytest
import torch

from timebalance.encoder import (
    EMBED_DIM, FEATURE_DIM, build_encoder, classify, encode_clip, logits, project, temporal_slices, weights_hash,
)
from timebalance.errors import ContractError
from timebalance import losses


def clip(seed=0, F=8, H=16, W=16, B=None):
    shape = (F, H, W, 3) if B is None else (B, F, H, W, 3)
    return torch.from_numpy(np.random.default_rng(seed).random(shape, dtype=np.float32))


@pytest.fixture
def model():
    return build_encoder(5, seed=0).eval()


def test_shapes_and_unpooled_length(model):
    for F in (4, 8, 16):
        feat = encode_clip(model, clip(F=F))
        assert feat.unpooled.shape == (F // 4, FEATURE_DIM)
        assert feat.pooled.shape == (FEATURE_DIM,)


def test_pooled_is_temporal_mean(model):
    feat = encode_clip(model, clip(1, F=16))
    u = feat.unpooled.detach().double().numpy()
    manual = sum(u[t] for t in range(u.shape[0])) / u.shape[0]
    np.testing.assert_allclose(feat.pooled.detach().double().numpy(), manual, rtol=1e-6, atol=1e-7)


def test_zero_backbone_gives_zero_features():
    m = build_encoder(3).eval()
    with torch.no_grad():
        for p in m.backbone.parameters():
            p.zero_()
    assert torch.count_nonzero(encode_clip(m, clip()).pooled) == 0


def test_batch_is_order_preserving(model):
    xs = clip(2, B=3)
    batch = encode_clip(model, xs).pooled
    for k in range(3):
        assert torch.allclose(batch[k], encode_clip(model, xs[k]).pooled, rtol=1e-5, atol=1e-6)
    flipped = encode_clip(model, xs.flip(0)).pooled
    assert torch.allclose(flipped, batch.flip(0), rtol=1e-5, atol=1e-6)


def test_eval_mode_bitwise_deterministic(model):
    x = clip(3, B=2)
    a, b = encode_clip(model, x), encode_clip(model, x)
    assert torch.equal(a.pooled, b.pooled)
    assert torch.equal(project(model, a.pooled), project(model, b.pooled))


@pytest.mark.parametrize("bad", [(8, 16, 16, 1), (6, 16, 16, 3), (8, 12, 16, 3), (16, 16, 3)])
def test_shape_contract(model, bad):
    with pytest.raises(ContractError):
        encode_clip(model, torch.zeros(bad))


def test_projection_unit_norm_and_scale_invariance(model):
    pooled = torch.randn(6, FEATURE_DIM)
    z = project(model, pooled)
    assert z.shape == (6, EMBED_DIM)
    assert torch.allclose(z.norm(dim=-1), torch.ones(6), atol=1e-5)
    # scaling the vector fed to the final normalization leaves z unchanged
    h = model.projector(pooled)
    assert torch.allclose(h / h.norm(dim=-1, keepdim=True), (3 * h) / (3 * h).norm(dim=-1, keepdim=True), atol=1e-7)


def test_projector_layout(model):
    lin1, bn1, _, lin2, bn2 = model.projector
    assert (lin1.in_features, lin1.out_features) == (FEATURE_DIM, FEATURE_DIM // 4)
    assert (lin2.in_features, lin2.out_features) == (FEATURE_DIM // 4, EMBED_DIM)
    assert isinstance(bn1, torch.nn.BatchNorm1d) and isinstance(bn2, torch.nn.BatchNorm1d)
    assert bn1.eps == 1e-5


def test_zero_input_projection_is_finite(model):
    z = project(model, torch.zeros(2, FEATURE_DIM))
    assert torch.all(torch.isfinite(z))


def test_classify_softmax_properties(model):
    with torch.no_grad():
        model.classifier.weight.zero_()
        model.classifier.bias.zero_()
    p = classify(model, torch.randn(FEATURE_DIM))
    assert torch.allclose(p, torch.full((5,), 0.2))
    m = build_encoder(5, seed=1).eval()
    pooled = torch.randn(4, FEATURE_DIM)
    lg = logits(m, pooled)
    p = classify(m, pooled)
    assert torch.allclose(p.sum(-1), torch.ones(4), atol=1e-6)
    assert torch.equal(p.argmax(-1), lg.argmax(-1))
    assert torch.allclose(torch.softmax(lg + 7.0, -1), p, atol=1e-7)


def test_temporal_slices(model):
    g = clip(4, F=32)  # T' = 8
    feat = encode_clip(model, g)
    s4 = temporal_slices(model, g, 4)
    assert s4.shape == (4, FEATURE_DIM)
    u = feat.unpooled
    for t in range(4):
        assert torch.allclose(s4[t], (u[2 * t] + u[2 * t + 1]) / 2, atol=1e-6)
    assert torch.allclose(s4.mean(0), feat.pooled, atol=1e-6)
    assert torch.allclose(temporal_slices(model, g, 1)[0], feat.pooled, atol=1e-6)
    with pytest.raises(ContractError):
        temporal_slices(model, g, 3)


def test_roles_and_seeding():
    with pytest.raises(ContractError):
        build_encoder(3, role="oracle")
    a, b = build_encoder(3, seed=5), build_encoder(3, seed=5)
    assert weights_hash(a) == weights_hash(b)
    assert weights_hash(a) != weights_hash(build_encoder(3, seed=6))


def test_end_to_end_gradient_float64():
    torch.manual_seed(0)
    m = build_encoder(4, seed=2).double().train()
    x = clip(5, F=8, B=3).double()
    y = torch.tensor([0, 1, 3])

    def loss_fn():
        feat = encode_clip(m, x)
        z = project(m, feat.pooled)
        return losses.loss_cross_entropy(logits(m, feat.pooled), y) + (z[0] @ z[1]) + classify(m, feat.pooled)[:, 2].sum()

    params = [m.backbone[0][0].weight, m.backbone[3][0].weight, m.projector[0].weight, m.classifier.weight]
    grads = torch.autograd.grad(loss_fn(), params)
    rng = np.random.default_rng(0)
    eps = 1e-6
    for p, g in zip(params, grads):
        flat = p.data.view(-1)
        idx = rng.choice(flat.numel(), size=min(20, flat.numel()), replace=False)
        num = []
        for k in idx:
            old = flat[k].item()
            flat[k] = old + eps
            up = loss_fn().item()
            flat[k] = old - eps
            dn = loss_fn().item()
            flat[k] = old
            num.append((up - dn) / (2 * eps))
        num = torch.tensor(num, dtype=torch.float64)
        ana = g.view(-1)[torch.from_numpy(idx)]
        err = (ana - num).norm() / max(ana.norm(), num.norm(), 1e-12)
        assert err < 1e-4, err
