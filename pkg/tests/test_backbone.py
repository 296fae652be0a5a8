import pydantic
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from finefake.backbone import (
    BackboneSpec,
    build_reference_backbone,
    extract_features,
    parameter_checksum,
)
from finefake.errors import ShapeError


def test_seeded_determinism_checksum():
    spec = BackboneSpec(n_blocks=4, channels=[16, 32, 64, 128], strides=[2, 2, 2, 2])
    a = build_reference_backbone(spec, seed=7)
    b = build_reference_backbone(spec, seed=7)
    assert parameter_checksum(a) == parameter_checksum(b)
    c = build_reference_backbone(spec, seed=8)
    assert parameter_checksum(a) != parameter_checksum(c)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_blocks=1, channels=[16]),
        dict(n_blocks=2, channels=[16, 0]),
        dict(n_blocks=2, channels=[16, 32], strides=[2, 0]),
        dict(n_blocks=3, channels=[16, 32]),
        dict(n_blocks=2, channels=[16, 32], strides=[2]),
    ],
)
def test_invalid_specs_rejected(kwargs):
    with pytest.raises(pydantic.ValidationError):
        BackboneSpec(**kwargs)


def test_forced_stage_spatials():
    spec = BackboneSpec()
    model = build_reference_backbone(spec, seed=0)
    feats = extract_features(model, torch.randn(2, 3, 64, 64))
    assert feats.shapes() == [(2, 16, 32, 32), (2, 32, 16, 16), (2, 64, 8, 8), (2, 128, 4, 4)]


def test_empty_batch_and_indivisible_size():
    model = build_reference_backbone(BackboneSpec(), seed=0)
    with pytest.raises(ShapeError, match="empty batch"):
        extract_features(model, torch.randn(0, 3, 64, 64))
    with pytest.raises(ShapeError, match="not divisible"):
        extract_features(model, torch.randn(1, 3, 60, 60))
    with pytest.raises(ShapeError, match="expected"):
        extract_features(model, torch.randn(1, 1, 64, 64))


def test_zero_input_propagates_to_zero_maps():
    model = build_reference_backbone(BackboneSpec(), seed=3)
    feats = extract_features(model, torch.zeros(2, 3, 64, 64))
    assert torch.all(feats[-1] == 0)


def test_nonsquare_input_accepted_when_divisible():
    model = build_reference_backbone(BackboneSpec(), seed=0)
    feats = extract_features(model, torch.randn(1, 3, 32, 64))
    assert feats.shapes()[-1] == (1, 128, 2, 4)


@settings(max_examples=20, deadline=None)
@given(
    b=st.integers(1, 3),
    h_mult=st.integers(1, 4),
    w_mult=st.integers(1, 4),
)
def test_shape_contract_property(b, h_mult, w_mult):
    spec = BackboneSpec(n_blocks=3, channels=[4, 8, 16])
    model = build_reference_backbone(spec, seed=1)
    h, w = 8 * h_mult, 8 * w_mult
    feats = extract_features(model, torch.randn(b, 3, h, w))
    stride = 1
    for i, shape in enumerate(feats.shapes()):
        stride *= spec.strides[i]
        assert shape == (b, spec.channels[i], h // stride, w // stride)


def test_bitwise_determinism_double_precision():
    torch.set_num_threads(1)
    spec = BackboneSpec(n_blocks=2, channels=[4, 8])
    x = torch.randn(2, 3, 16, 16, dtype=torch.float64)
    outs = []
    for _ in range(2):
        model = build_reference_backbone(spec, seed=11, dtype=torch.float64)
        outs.append(extract_features(model, x.clone())[-1])
    assert torch.equal(outs[0], outs[1])


def test_gradients_flow_when_trainable():
    model = build_reference_backbone(BackboneSpec(n_blocks=2, channels=[4, 8]), seed=0)
    feats = extract_features(model, torch.randn(1, 3, 16, 16))
    feats[-1].sum().backward()
    grads = [p.grad for p in model.parameters() if p.grad is not None]
    assert grads and any(g.abs().sum() > 0 for g in grads)

    frozen = build_reference_backbone(
        BackboneSpec(n_blocks=2, channels=[4, 8], trainable=False), seed=0
    )
    assert all(not p.requires_grad for p in frozen.parameters())
