import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from spgan_kit.networks import (
    BackboneSpec,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    PatchDiscriminator,
    ReidBackbone,
    SiaNet,
    SiaNetSpec,
    forward_backbone,
    forward_generator,
    forward_siamese,
    load_network,
    parameter_count,
    save_network,
)


def rand_img(h, w, n=1, seed=0):
    return torch.rand(n, 3, h, w, generator=torch.Generator().manual_seed(seed)) * 2 - 1


def test_generator_shape_range_determinism():
    torch.manual_seed(0)
    G = Generator(GeneratorSpec(height=32, width=16, base_filters=8))
    x = rand_img(32, 16)[0]
    y1, y2 = forward_generator(G, x), forward_generator(G, x)
    assert y1.shape == x.shape
    assert y1.max() <= 1 and y1.min() >= -1
    assert torch.equal(y1, y2)


def test_generator_shape_mismatch():
    G = Generator(GeneratorSpec(height=32, width=16, base_filters=8))
    with pytest.raises(ValueError, match="expected input"):
        G(rand_img(32, 32))


@settings(max_examples=8, deadline=None)
@given(st.integers(4, 12), st.integers(4, 8))
def test_generator_shape_preserving_for_multiples_of_four(h4, w4):
    G = Generator(GeneratorSpec(height=4 * h4, width=4 * w4, base_filters=4, n_res_blocks=1))
    x = rand_img(4 * h4, 4 * w4)
    y = G(x)
    assert y.shape == x.shape and torch.isfinite(y).all()


def test_generator_rejects_indivisible_resolution():
    with pytest.raises(ValueError, match="divisible by 4"):
        Generator(GeneratorSpec(height=30, width=16))


def test_discriminator_score_map():
    D = PatchDiscriminator(DiscriminatorSpec(height=64, width=32, base_filters=8))
    out = D(rand_img(64, 32, n=2))
    assert tuple(out.shape[2:]) == D.score_shape(64, 32) == (6, 2)
    assert torch.isfinite(out).all()
    D128 = PatchDiscriminator(DiscriminatorSpec(height=128, width=64, base_filters=8))
    assert tuple(D128(rand_img(128, 64)).shape[2:]) == (14, 6)


def test_discriminator_first_block_has_no_norm():
    D = PatchDiscriminator(DiscriminatorSpec(height=64, width=32))
    assert isinstance(D.model[0], torch.nn.Conv2d)
    assert isinstance(D.model[1], torch.nn.LeakyReLU)
    assert isinstance(D.model[3], torch.nn.InstanceNorm2d)


@pytest.mark.parametrize("hw", [(16, 16), (32, 16), (64, 32), (128, 64), (256, 128), (100, 36)])
def test_sianet_embedding_is_128(hw):
    torch.manual_seed(0)
    net = SiaNet(SiaNetSpec(height=hw[0], width=hw[1]))
    e = forward_siamese(net, rand_img(*hw)[0])
    assert e.shape == (128,)
    assert torch.isfinite(e).all()


def test_sianet_layer_list():
    net = SiaNet(SiaNetSpec(height=64, width=32))
    convs = [m for m in net.features if isinstance(m, torch.nn.Conv2d)]
    pools = [m for m in net.features if isinstance(m, torch.nn.MaxPool2d)]
    assert [c.out_channels for c in convs] == [64, 128, 256, 512]
    assert all(c.kernel_size == (4, 4) and c.stride == (2, 2) for c in convs)
    assert len(pools) == 4 and all(p.kernel_size == 2 and p.stride == 2 for p in pools)
    assert net.fc.in_features == 512 and net.fc.out_features == 128


def test_sianet_same_padding_halves_spatial_dims():
    net = SiaNet(SiaNetSpec(height=256, width=128))
    x = rand_img(256, 128)
    x = net.features[0](x)
    x = net.features[1](x)
    assert tuple(x.shape[2:]) == (128, 64)


def test_sianet_min_resolution_guard():
    with pytest.raises(ValueError, match="at least"):
        SiaNet(SiaNetSpec(height=8, width=8))


def test_sianet_non_collapse_and_determinism():
    torch.manual_seed(1)
    net = SiaNet(SiaNetSpec(height=32, width=16))
    a, b = rand_img(32, 16, seed=1)[0], rand_img(32, 16, seed=2)[0]
    ea, eb = forward_siamese(net, a), forward_siamese(net, b)
    assert not torch.allclose(ea, eb)
    assert torch.equal(ea, forward_siamese(net, a))


def test_backbone_modes():
    torch.manual_seed(0)
    net = ReidBackbone(BackboneSpec(num_classes=20, height=64, width=32))
    assert forward_backbone(net, rand_img(64, 32, n=2), "train").shape == (2, 20)
    with pytest.raises(RuntimeError, match="trained or loaded"):
        forward_backbone(net, rand_img(64, 32, n=2), "feature")
    net.initialized = True
    fmap, vec = forward_backbone(net, rand_img(64, 32, n=2), "feature")
    assert fmap.shape == (2, 128, 8, 4)
    assert vec.shape == (2, 128)


def test_full_scale_backbone_pool5_is_2048():
    torch.manual_seed(0)
    net = ReidBackbone(BackboneSpec(name="resnet50", num_classes=751, feature_channels=2048, height=128, width=64))
    net.initialized = True
    fmap, vec = forward_backbone(net, rand_img(128, 64), "feature")
    assert vec.shape == (1, 2048)
    assert fmap.shape[1] == 2048
    assert net.classifier.out_features == 751


def test_parameter_counts_regression():
    # full-size G/D match the published reference counts (11.378M, 2.765M)
    assert parameter_count(Generator(GeneratorSpec(base_filters=64, n_res_blocks=9))) == 11378179
    assert parameter_count(PatchDiscriminator(DiscriminatorSpec(base_filters=64))) == 2764737
    # SiaNet: sum of conv (4*4*c_in*c_out + c_out) terms plus the 512->128 FC
    assert parameter_count(SiaNet(SiaNetSpec())) == 2822208
    # desk-scale variants, frozen
    assert parameter_count(Generator(GeneratorSpec())) == 1374723
    assert parameter_count(PatchDiscriminator(DiscriminatorSpec())) == 694241
    assert parameter_count(ReidBackbone(BackboneSpec(num_classes=20))) == 309940


def test_gaussian_init():
    torch.manual_seed(0)
    G = Generator(GeneratorSpec(base_filters=32))
    w = G.model[1].weight.detach().numpy().ravel()
    assert abs(w.mean()) < 0.005 and abs(w.std() - 0.02) < 0.002


def test_checkpoint_roundtrip_and_hash_check(tmp_path):
    torch.manual_seed(0)
    G = Generator(GeneratorSpec(height=32, width=16, base_filters=8))
    save_network(G, tmp_path / "G", step=7, config={"a": 1})
    side = json.loads((tmp_path / "G.json").read_text())
    assert side["step"] == 7 and side["config"] == {"a": 1}
    G2 = Generator(GeneratorSpec(height=32, width=16, base_filters=8))
    load_network(G2, tmp_path / "G")
    for (k, a), (_, b) in zip(G.state_dict().items(), G2.state_dict().items()):
        assert torch.equal(a, b), k
    other = Generator(GeneratorSpec(height=32, width=16, base_filters=4))
    with pytest.raises(ValueError, match="spec"):
        load_network(other, tmp_path / "G")
    with np.load(tmp_path / "G.npz") as data:
        assert "model.1.weight" in data.files
