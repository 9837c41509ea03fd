import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ocgan.errors import ArchitectureError, ShapeError
from ocgan.model import (
    LatentShape,
    ModelConfig,
    build,
    classify,
    decode,
    discriminate_latent,
    discriminate_visual,
    encode,
    feature_sides,
    parameter_store,
    sample_uniform_latent,
)


@pytest.fixture(scope="module")
def small_model():
    model, _ = build(ModelConfig(ae_base_channels=8, classifier_base_channels=8, vis_disc_base_channels=4))
    return model.eval()


def test_default_latent_shape():
    assert feature_sides(28) == [28, 14, 7, 4]
    _, shape = build(ModelConfig(), networks=("encoder",))
    assert shape == LatentShape(256, 4)
    assert shape.flat_dim == 4096
    assert shape.flat_dim > 28 * 28


def test_reduced_base_latent_shape():
    _, shape = build(ModelConfig(ae_base_channels=8), networks=("encoder",))
    assert (shape.channels, shape.side, shape.flat_dim) == (32, 4, 512)


def test_too_small_input():
    with pytest.raises(ArchitectureError):
        build(ModelConfig(input_side=7))


@pytest.mark.parametrize("bad", [dict(ae_base_channels=0), dict(leaky_slope=1.0), dict(latent_disc_widths=())])
def test_config_validation(bad):
    with pytest.raises(ArchitectureError):
        ModelConfig(**bad)


def test_seeded_build_is_bitwise_identical():
    a, _ = build(ModelConfig.tiny(init_seed=4))
    b, _ = build(ModelConfig.tiny(init_seed=4))
    c, _ = build(ModelConfig.tiny(init_seed=5))
    sa, sb, sc = parameter_store(a), parameter_store(b), parameter_store(c)
    assert sa.keys() == sb.keys()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert not all(torch.equal(sa[k], sc[k]) for k in sa)


def test_subset_build_does_not_perturb_other_networks():
    full, _ = build(ModelConfig.tiny())
    part, _ = build(ModelConfig.tiny(), networks=("encoder", "decoder"))
    assert part.visual_disc is None and part.classifier is None
    sf, sp = parameter_store(full), parameter_store(part)
    assert all(torch.equal(sf[k], sp[k]) for k in sp)


def test_parameter_names_and_init_scale():
    model, _ = build(ModelConfig())
    store = parameter_store(model)
    assert "encoder/conv1/weight" in store
    assert "latent_disc/fcs/0/weight" in store
    assert all(k.count("/") >= 2 for k in store)
    std = store["classifier/conv2/weight"].std().item()
    assert abs(std - 0.02) < 0.002


def test_forward_shapes(small_model):
    x = torch.rand(8, 1, 28, 28)
    z = encode(small_model, x)
    assert tuple(z.shape) == (8, 32, 4, 4)
    assert tuple(decode(small_model, z).shape) == (8, 1, 28, 28)
    assert discriminate_latent(small_model, z).shape == (8,)
    assert discriminate_visual(small_model, x).shape == (8,)
    assert classify(small_model, x).shape == (8,)


def test_shape_errors(small_model):
    with pytest.raises(ShapeError):
        encode(small_model, torch.rand(2, 1, 27, 27))
    with pytest.raises(ShapeError):
        decode(small_model, torch.rand(2, 16, 4, 4))
    with pytest.raises(ShapeError):
        discriminate_latent(small_model, torch.rand(2, 512))
    with pytest.raises(ShapeError):
        classify(small_model, torch.rand(2, 28, 28))


def test_zero_inputs_are_finite(small_model):
    with torch.no_grad():
        z = encode(small_model, torch.zeros(2, 1, 28, 28))
        assert torch.isfinite(z).all()
        assert torch.isfinite(decode(small_model, torch.zeros(2, 32, 4, 4))).all()
        u = torch.as_tensor(sample_uniform_latent(small_model.latent, 4, 0))
        assert torch.isfinite(discriminate_latent(small_model, u)).all()
        assert torch.isfinite(discriminate_visual(small_model, torch.zeros(4, 1, 28, 28))).all()
        assert torch.isfinite(classify(small_model, torch.zeros(4, 1, 28, 28))).all()


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(1e-3, 1e8), seed=st.integers(0, 10_000))
def test_encoder_bound_and_decoder_range(small_model, scale, seed):
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(3, 1, 28, 28, generator=gen) * scale
    z_in = torch.randn(3, 32, 4, 4, generator=gen) * scale
    with torch.no_grad():
        z = encode(small_model, x)
        img = decode(small_model, z_in)
    assert z.abs().max().item() < 1.0
    assert img.min().item() >= 0.0 and img.max().item() <= 1.0


def test_encoder_bound_in_training_mode():
    model, _ = build(ModelConfig.tiny())
    model.train()
    with torch.no_grad():
        z = encode(model, torch.randn(4, 1, 8, 8) * 1e6)
    assert z.abs().max().item() < 1.0


def test_eval_mode_single_vs_batch(small_model):
    x = torch.rand(5, 1, 28, 28)
    with torch.no_grad():
        batch = encode(small_model, x)
        single = encode(small_model, x[2:3])
        repeated = encode(small_model, x[2:3].repeat(4, 1, 1, 1))
    torch.testing.assert_close(single[0], batch[2], rtol=0, atol=1e-6)
    for row in repeated:
        torch.testing.assert_close(row, single[0], rtol=0, atol=1e-6)


def test_eval_mode_permutation_equivariance(small_model):
    x = torch.rand(8, 1, 28, 28)
    z = torch.as_tensor(sample_uniform_latent(small_model.latent, 8, 1))
    perm = torch.randperm(8, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        for fn, inp in [(discriminate_latent, z), (discriminate_visual, x), (classify, x)]:
            torch.testing.assert_close(fn(small_model, inp)[perm], fn(small_model, inp[perm]), rtol=0, atol=1e-6)


def test_eval_mode_determinism(small_model):
    x = torch.rand(4, 1, 28, 28)
    with torch.no_grad():
        assert torch.equal(decode(small_model, encode(small_model, x)), decode(small_model, encode(small_model, x)))


def test_uniform_sampler():
    shape = LatentShape(25, 2)  # 100 entries per sample
    u = sample_uniform_latent(shape, 1000, 42)
    assert u.shape == (1000, 25, 2, 2)
    assert abs(u.mean()) < 0.01
    assert abs(u.var() - 1.0 / 3.0) < 0.01
    assert u.min() > -1.0 and u.max() < 1.0
    assert sample_uniform_latent(shape, 1000, 42).tobytes() == u.tobytes()
    with pytest.raises(ValueError):
        sample_uniform_latent(shape, 0, 0)
