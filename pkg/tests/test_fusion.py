import pytest
import torch
import torch.nn.functional as F
from torch import nn

from finefake.backbone import BackboneSpec, FeatureMapSet, build_reference_backbone, extract_features
from finefake.errors import ShapeError
from finefake.fusion import BottomUpFusion, FusionConfig, TopDownFusion


def pyramid(channels, sizes, batch=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    return FeatureMapSet(
        [torch.randn(batch, c, s, s, generator=g) for c, s in zip(channels, sizes)]
    )


def test_output_shapes_both_paths():
    cfg = FusionConfig(common_dim=64)
    feats = pyramid([16, 32, 64, 128], [32, 16, 8, 4])
    td = TopDownFusion([16, 32, 64, 128], cfg)(feats)
    assert td.channels == [64, 64, 64, 64]
    assert [m.shape[2:] for m in td] == [m.shape[2:] for m in feats]
    bu = BottomUpFusion([64] * 4, cfg)(td)
    assert bu.channels == [64, 64, 64, 64]
    assert [m.shape[2:] for m in bu] == [m.shape[2:] for m in feats]


def _make_identity(module):
    """Identity laterals/smoothing, zeroed cross-path convs."""
    with torch.no_grad():
        for conv in module.lateral:
            nn.init.dirac_(conv.weight)
            conv.bias.zero_()
        for conv in module.smooth:
            nn.init.dirac_(conv.weight)
            conv.bias.zero_()
        for conv in module.cross:
            conv.weight.zero_()
            conv.bias.zero_()


@pytest.mark.parametrize("path_cls", [TopDownFusion, BottomUpFusion])
def test_identity_configuration(path_cls):
    cfg = FusionConfig(common_dim=64)
    feats = pyramid([64, 64, 64], [16, 8, 4])
    module = path_cls([64, 64, 64], cfg)
    _make_identity(module)
    out = module(feats)
    for a, b in zip(out, feats):
        assert torch.allclose(a, b, atol=1e-6)


def test_top_down_matches_direct_composition():
    cfg = FusionConfig(common_dim=8)
    feats = pyramid([4, 6], [8, 4], batch=1, seed=3)
    module = TopDownFusion([4, 6], cfg, seed=5)
    out = module(feats)

    # hand-rolled: project -> upsample -> add -> conv, composed directly
    lat0, lat1 = module.lateral
    (cross0,) = module.cross
    sm0, sm1 = module.smooth
    top = F.conv2d(F.conv2d(feats[1], lat1.weight, lat1.bias), sm1.weight, sm1.bias, padding=1)
    up = F.interpolate(top, size=(8, 8), mode="nearest")
    low = F.conv2d(feats[0], lat0.weight, lat0.bias) + F.conv2d(up, cross0.weight, cross0.bias)
    low = F.conv2d(low, sm0.weight, sm0.bias, padding=1)
    assert torch.allclose(out[1], top, atol=1e-6)
    assert torch.allclose(out[0], low, atol=1e-6)


def test_bottom_up_matches_direct_composition():
    cfg = FusionConfig(common_dim=8)
    feats = pyramid([4, 6], [8, 4], batch=1, seed=4)
    module = BottomUpFusion([4, 6], cfg, seed=6)
    out = module(feats)

    lat0, lat1 = module.lateral
    (cross0,) = module.cross
    sm0, sm1 = module.smooth
    low = F.conv2d(F.conv2d(feats[0], lat0.weight, lat0.bias), sm0.weight, sm0.bias, padding=1)
    down = F.conv2d(low, cross0.weight, cross0.bias, stride=2, padding=1)
    high = F.conv2d(feats[1], lat1.weight, lat1.bias) + down
    high = F.conv2d(high, sm1.weight, sm1.bias, padding=1)
    assert torch.allclose(out[0], low, atol=1e-6)
    assert torch.allclose(out[1], high, atol=1e-6)


def test_block_count_mismatch_rejected():
    cfg = FusionConfig(common_dim=8)
    module = TopDownFusion([4, 6], cfg)
    with pytest.raises(ShapeError):
        module(pyramid([4, 6, 8], [16, 8, 4]))


def test_gradient_reachability_through_paths():
    """Finite-difference sensitivity: top-down map i responds to every
    backbone block at or above i; bottom-up maps (fed by the top-down
    pyramid) respond to every block."""
    torch.manual_seed(0)
    spec = BackboneSpec(n_blocks=3, channels=[4, 6, 8])
    backbone = build_reference_backbone(spec, seed=2, dtype=torch.float64)
    cfg = FusionConfig(common_dim=8)
    td_mod = TopDownFusion(spec.channels, cfg, seed=3).double()
    bu_mod = BottomUpFusion([8] * 3, cfg, down_ratios=[2, 2], seed=4).double()
    x = torch.randn(1, 3, 16, 16, dtype=torch.float64)

    @torch.no_grad()
    def outputs(images):
        feats = extract_features(backbone, images)
        td = td_mod(feats)
        bu = bu_mod(td)
        return td, bu

    td0, bu0 = outputs(x)
    base_td = [float(m.sum()) for m in td0]
    base_bu = [float(m.sum()) for m in bu0]

    # perturb one backbone input pixel and see which fused sums move
    for i in range(3):
        xp = x.clone()
        xp[0, 0, 0, 0] += 1e-4
        td1, bu1 = outputs(xp)
        moved_td = [abs(float(m.sum()) - b) > 1e-12 for m, b in zip(td1, base_td)]
        moved_bu = [abs(float(m.sum()) - b) > 1e-12 for m, b in zip(bu1, base_bu)]
        assert all(moved_td), moved_td
        assert all(moved_bu), moved_bu

    # sensitivity of fused maps to a single backbone *block*: zero out the
    # path from below by checking dependency structure via autograd instead
    feats = extract_features(backbone, x)
    leaves = [m.detach().requires_grad_(True) for m in feats]
    td = td_mod(FeatureMapSet(leaves))
    for i in range(3):
        grads = torch.autograd.grad(td[i].sum(), leaves, allow_unused=True, retain_graph=True)
        for j, g in enumerate(grads):
            if j >= i:
                assert g is not None and g.abs().sum() > 0, (i, j)
            else:
                assert g is None or g.abs().sum() == 0, (i, j)
