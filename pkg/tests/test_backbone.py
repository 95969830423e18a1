import pytest
import torch

from semcolor.backbone import ASPP, Backbone, GatedResidualBlock, layer_table, trunk_forward
from semcolor.config import ModelConfig


def randomize_(module, std=0.2, seed=0):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * std)
    return module


@pytest.fixture(scope="module")
def reference_table():
    return layer_table(ModelConfig.reference(num_classes=21))


def rows(table, branch):
    return [r for r in table if r["branch"] == branch]


def test_shared_trunk_rows(reference_table):
    trunk = rows(reference_table, "shared")
    got = [(r["module"], r["resolution"], r["channels"], r["dilation"]) for r in trunk]
    expected = (
        [("conv3x3/1", 128, 64, None)] + [("residual", 128, 64, 1)] * 2
        + [("conv3x3/2", 64, 128, None)] + [("residual", 64, 128, 1)] * 2
        + [("conv3x3/2", 32, 256, None)] + [("residual", 32, 256, 1)] * 2
        + [("conv3x3/1", 32, 512, None)] + [("residual", 32, 512, 2)] * 3
    )
    assert got == expected


def test_embedding_branch_rows(reference_table):
    got = [(r["module"], r["resolution"], r["channels"], r["dilation"]) for r in rows(reference_table, "embedding")]
    assert got == [("conv3x3/1", 32, 512, None)] + [("residual", 32, 512, 4)] * 3 + [("conv3x3/1", 32, 160, None)]


def test_segmentation_branch_rows(reference_table):
    seg = rows(reference_table, "segmentation")
    got = [(r["module"], r["resolution"], r["channels"], r["dilation"]) for r in seg]
    assert got[:4] == [("conv3x3/1", 32, 512, None)] + [("residual", 32, 512, 2)] * 3
    assert [r["dilation"] for r in seg[4:7]] == [6, 12, 18]
    assert all(r["channels"] == 21 and r["resolution"] == 32 for r in seg[4:])
    assert got[-1] == ("add", 32, 21, None)


def test_scaled_config_keeps_topology():
    small = layer_table(ModelConfig(input_size=32, base_channels=16))
    big = layer_table(ModelConfig.reference())
    assert [(r["branch"], r["module"], r["dilation"]) for r in small] == \
        [(r["branch"], r["module"], r["dilation"]) for r in big]
    assert [r["channels"] for r in rows(small, "shared")][-1] == 128
    assert rows(small, "embedding")[-1]["channels"] == 40


def test_forward_shapes():
    cfg = ModelConfig(input_size=32, base_channels=8, num_classes=5, mixture_components=3)
    emb, seg, aux = Backbone(cfg)(torch.zeros(2, 1, 32, 32))
    assert emb.shape == (2, cfg.emb_channels, 8, 8)
    assert seg.shape == (2, 5, 8, 8)
    assert aux.shape == (2, 18, 8, 8)


def test_trunk_rejects_wrong_input():
    net = Backbone(ModelConfig(input_size=32, base_channels=4))
    for bad in (torch.zeros(1, 1, 16, 16), torch.zeros(1, 3, 32, 32), torch.zeros(32, 32)):
        with pytest.raises(ValueError):
            net(bad)


def test_gated_block_is_identity_at_init():
    block = GatedResidualBlock(6, dilation=2)
    x = torch.randn(2, 6, 9, 9)
    assert torch.equal(block(x), x + 0.0 * x)


@pytest.mark.parametrize("dilation", [1, 2, 4])
def test_gated_block_footprint(dilation):
    # two stacked 3x3 convs at dilation d see a (4d+1) square
    block = randomize_(GatedResidualBlock(2, dilation)).double()
    x = torch.zeros(1, 2, 21, 21, dtype=torch.float64, requires_grad=True)
    block(x)[0, 0, 10, 10].backward()
    nz = x.grad[0].abs().sum(0).nonzero()
    span = (nz.max(0).values - nz.min(0).values + 1).tolist()
    assert span == [4 * dilation + 1] * 2


def test_aspp_is_additive():
    torch.manual_seed(0)
    aspp = ASPP(4, 3)
    x = torch.randn(1, 4, 40, 40)
    expected = sum(branch(x) for branch in aspp.branches)
    assert torch.allclose(aspp(x), expected, atol=1e-6)
    assert [b.dilation[0] for b in aspp.branches] == [6, 12, 18]


def test_branches_share_the_trunk():
    cfg = ModelConfig(input_size=32, base_channels=4)
    net = randomize_(Backbone(cfg), std=0.1)
    x = torch.randn(1, 1, 32, 32)
    shared = trunk_forward(x, net)
    emb, seg, _ = net(x)
    assert torch.equal(net.embed(shared), emb)
    assert torch.equal(net.segment(shared), seg)
    # both task gradients reach the same trunk tensors
    trunk_params = list(net.trunk.parameters())
    g_emb = torch.autograd.grad(emb.sum(), trunk_params, retain_graph=True)
    g_seg = torch.autograd.grad(net(x)[1].sum(), trunk_params)
    assert all(a.abs().sum() > 0 and b.abs().sum() > 0 for a, b in zip(g_emb, g_seg))


@pytest.mark.parametrize("branch", [0, 1])
def test_receptive_field_covers_full_input(branch):
    # branch 0 = embedding, 1 = segmentation logits
    cfg = ModelConfig.reference(num_classes=2, base_channels=1, embedding_channels=2)
    net = randomize_(Backbone(cfg), std=0.5).double()
    x = torch.zeros(1, 1, 128, 128, dtype=torch.float64, requires_grad=True)
    net(x)[branch][0, :, 16, 16].sum().backward()
    nz = x.grad[0, 0].abs().gt(0).nonzero()
    span = (nz.max(0).values - nz.min(0).values + 1).tolist()
    assert min(span) >= 128


def test_aux_head_width():
    cfg = ModelConfig(base_channels=4, mixture_components=7)
    assert Backbone(cfg).aux_head.out_channels == 42


def test_segmentation_head_never_touches_embedding():
    net = randomize_(Backbone(ModelConfig(base_channels=4)), std=0.1)
    x = torch.randn(1, 1, 32, 32)
    emb, seg, _ = net(x)
    with torch.no_grad():
        for p in net.segment.parameters():
            p.add_(1.0)
    emb2, seg2, _ = net(x)
    assert torch.equal(emb, emb2) and not torch.equal(seg, seg2)
    with torch.no_grad():
        net.trunk[0].weight.add_(0.5)
    emb3, seg3, _ = net(x)
    assert not torch.equal(emb3, emb2) and not torch.equal(seg3, seg2)


def test_forward_finite_for_random_inputs():
    torch.manual_seed(1)
    net = Backbone(ModelConfig(base_channels=4))
    outs = net(torch.rand(3, 1, 32, 32) * 2 - 1)
    assert all(torch.isfinite(o).all() for o in outs)
