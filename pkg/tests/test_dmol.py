import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import logistic

from semcolor.dmol import (
    dmol_channels,
    dmol_log_prob,
    dmol_mean,
    dmol_nll,
    dmol_sample,
    mixture_entropy,
)


def random_params(k, h=1, w=1, seed=0, spread=1.0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    logits = torch.randn(1, k, h, w, generator=g, dtype=dtype) * spread
    means = (torch.rand(1, 2 * k, h, w, generator=g, dtype=dtype) * 2 - 1) * 0.9
    log_scales = torch.rand(1, 2 * k, h, w, generator=g, dtype=dtype) * 3 - 4.5
    coeffs = torch.randn(1, k, h, w, generator=g, dtype=dtype)
    return torch.cat([logits, means, log_scales, coeffs], dim=1)


def pack(logits, mean_a, mean_b, ls_a, ls_b, coeff):
    cols = [torch.as_tensor(v, dtype=torch.float64).reshape(1, -1, 1, 1)
            for v in (logits, mean_a, mean_b, ls_a, ls_b, coeff)]
    return torch.cat(cols, dim=1)


def all_bin_pairs(params, bins):
    """Evaluate every (a, b) bin pair by tiling one pixel's params over a grid."""
    grid = params.expand(1, params.shape[1], bins, bins).contiguous()
    ia, ib = torch.meshgrid(torch.arange(bins), torch.arange(bins), indexing="ij")
    target = torch.stack([ia, ib])[None]
    return dmol_log_prob(grid, target, bins)[0]


def oracle_bin_probs(loc, scale, bins):
    """Per-bin probabilities via scipy's logistic CDF; edge bins take the tails."""
    centers = 2 * np.arange(bins) / (bins - 1) - 1
    upper = logistic.cdf(centers + 1 / (bins - 1), loc, scale)
    lower = logistic.cdf(centers - 1 / (bins - 1), loc, scale)
    upper[-1], lower[0] = 1.0, 0.0
    return upper - lower


def test_channel_count():
    assert dmol_channels(10) == 60


@pytest.mark.parametrize("seed", range(10))
def test_normalization_brute_force(seed):
    params = random_params(k=4, seed=seed, spread=2.0)
    total = all_bin_pairs(params, 32).exp().sum().item()
    assert total == pytest.approx(1.0, abs=1e-3)


def test_matches_scipy_oracle_single_component():
    bins = 256
    params = pack([0.0], [0.3], [-0.2], [-3.0], [-2.5], [0.0])
    centers = 2 * np.arange(bins) / (bins - 1) - 1
    pa = oracle_bin_probs(0.3, np.exp(-3.0), bins)
    pb = oracle_bin_probs(-0.2, np.exp(-2.5), bins)
    rng = np.random.default_rng(0)
    ia, ib = rng.integers(0, bins, 200), rng.integers(0, bins, 200)
    ia[:3], ib[:3] = [0, 255, 115], [255, 0, 102]
    target = torch.from_numpy(np.stack([ia, ib]))[None, :, None, :]
    got = dmol_log_prob(params.expand(1, 6, 1, 200), target, bins)[0, 0].numpy()
    expected = np.log(pa[ia] * pb[ib])
    ok = np.isfinite(expected)
    assert np.allclose(got[ok], expected[ok], atol=1e-6)
    assert centers[0] == -1.0


def test_coupled_channel_matches_oracle():
    bins = 64
    coeff_raw = 0.7
    params = pack([0.0], [0.1], [0.05], [-2.0], [-2.2], [coeff_raw])
    pa = oracle_bin_probs(0.1, np.exp(-2.0), bins)
    lp = all_bin_pairs(params, bins).numpy()
    centers = 2 * np.arange(bins) / (bins - 1) - 1
    for ia in (0, 10, 40, 63):
        pb = oracle_bin_probs(0.05 + np.tanh(coeff_raw) * centers[ia], np.exp(-2.2), bins)
        assert np.allclose(np.exp(lp[ia]), pa[ia] * pb, atol=1e-9)


def test_mixture_matches_weighted_oracle():
    bins = 32
    logits = np.array([0.2, -1.0, 0.5])
    ma, mb = np.array([-0.5, 0.1, 0.6]), np.array([0.3, -0.4, 0.0])
    sa, sb = np.array([-2.0, -2.5, -1.5]), np.array([-1.8, -2.2, -3.0])
    params = pack(logits, ma, mb, sa, sb, [0.0, 0.0, 0.0])
    w = np.exp(logits) / np.exp(logits).sum()
    expected = sum(w[k] * np.outer(oracle_bin_probs(ma[k], np.exp(sa[k]), bins),
                                   oracle_bin_probs(mb[k], np.exp(sb[k]), bins)) for k in range(3))
    got = all_bin_pairs(params, bins).exp().numpy()
    assert np.allclose(got, expected, atol=1e-10)


@pytest.mark.parametrize("bins, floor", [(128, -7.0), (256, -9.0)])
def test_collapsed_component_concentrates_on_its_bin(bins, floor):
    # at 256 bins the default floor (-7) leaves ~2.7% per channel outside the
    # bin, so that case needs the floor lowered
    center = 2 * 100 / (bins - 1) - 1
    params = pack([0.0], [center], [center], [floor], [floor], [0.0])
    grid = params.expand(1, 6, bins, bins).contiguous()
    ia, ib = torch.meshgrid(torch.arange(bins), torch.arange(bins), indexing="ij")
    probs = dmol_log_prob(grid, torch.stack([ia, ib])[None], bins, log_scale_min=floor)[0].exp()
    assert probs[100, 100].item() >= 0.999
    assert probs.sum().item() - probs[100, 100].item() <= 0.001


def test_log_scale_floor_applies():
    bins = 256
    center = 2 * 100 / (bins - 1) - 1
    floor = pack([0.0], [center], [center], [-7.0], [-7.0], [0.0])
    below = pack([0.0], [center], [center], [-30.0], [-30.0], [0.0])
    t = torch.tensor([[[[100]], [[100]]]])
    assert torch.equal(dmol_log_prob(floor, t, bins), dmol_log_prob(below, t, bins))


def test_identical_components_equal_single_component():
    single = pack([0.4], [0.2], [-0.1], [-2.0], [-3.0], [0.3])
    many = pack([0.0] * 5, [0.2] * 5, [-0.1] * 5, [-2.0] * 5, [-3.0] * 5, [0.3] * 5)
    target = torch.tensor([[[[10, 200]], [[128, 30]]]])
    a = dmol_log_prob(single.expand(1, 6, 1, 2), target)
    b = dmol_log_prob(many.expand(1, 30, 1, 2), target)
    assert torch.allclose(a, b, atol=1e-12, rtol=0)


def test_finite_for_extreme_inputs():
    params = random_params(k=3, h=4, w=4, seed=1) * 50
    target = torch.randint(0, 256, (1, 2, 4, 4), generator=torch.Generator().manual_seed(0))
    assert torch.isfinite(dmol_log_prob(params, target)).all()


def test_errors():
    params = random_params(k=2, h=2, w=2)
    with pytest.raises(ValueError):
        dmol_log_prob(params, torch.zeros(1, 2, 3, 3, dtype=torch.long))
    bad = params.clone()
    bad[0, 0, 0, 0] = float("nan")
    with pytest.raises(ValueError):
        dmol_log_prob(bad, torch.zeros(1, 2, 2, 2, dtype=torch.long))
    with pytest.raises(ValueError):
        dmol_log_prob(params[:, :5], torch.zeros(1, 2, 2, 2, dtype=torch.long))


def test_gradient_matches_finite_differences():
    params = random_params(k=3, h=3, w=3, seed=4).requires_grad_(True)
    target = torch.randint(0, 32, (1, 2, 3, 3), generator=torch.Generator().manual_seed(1))
    target[0, :, 0, 0] = torch.tensor([0, 31])
    loss = dmol_nll(params, target, bins=32)
    (grad,) = torch.autograd.grad(loss, params)
    h = 1e-4
    flat = params.detach().clone().view(-1)
    numeric = torch.empty_like(flat)
    for i in range(flat.numel()):
        plus, minus = flat.clone(), flat.clone()
        plus[i] += h
        minus[i] -= h
        numeric[i] = (dmol_nll(plus.view_as(params), target, 32) - dmol_nll(minus.view_as(params), target, 32)) / (2 * h)
    analytic = grad.view(-1)
    rel = (analytic - numeric).abs() / torch.clamp(torch.maximum(analytic.abs(), numeric.abs()), min=1e-6)
    assert rel.max().item() < 1e-4


def test_translation_equivariance_interior():
    bins = 256
    step = 2 / (bins - 1)
    params = random_params(k=3, h=1, w=1, seed=5)
    params[:, 3:9] = params[:, 3:9] * 0.3
    shifted = params.clone()
    shifted[:, 3:6] += step  # mean_a
    coeff = torch.tanh(params[:, 15:18])
    shifted[:, 6:9] += step * (1 - coeff)  # mean_b; keeps b's coupled location in step
    target = torch.tensor([[[[100]], [[120]]]])
    moved = target + 1
    a = dmol_log_prob(params, target, bins)
    b = dmol_log_prob(shifted, moved, bins)
    assert torch.allclose(a, b, atol=1e-9, rtol=0)


def test_sample_collapses_at_low_temperature():
    params = pack([0.0], [0.25], [-0.5], [-7.0], [-7.0], [0.0])
    out = dmol_sample(params, np.random.default_rng(0), temperature=1e-6)
    centers = 2 * np.arange(256) / 255 - 1
    for value, mean in zip(out[0, :, 0, 0].tolist(), (0.25, -0.5)):
        assert value == pytest.approx(centers[np.argmin(np.abs(centers - mean))])


def test_sample_clamps_to_unit_range():
    params = pack([0.0], [5.0], [-5.0], [-7.0], [-7.0], [0.0])
    out = dmol_sample(params, np.random.default_rng(0), temperature=1.0)
    assert out[0, :, 0, 0].tolist() == [1.0, -1.0]


def test_sample_histogram_matches_analytic_probabilities():
    bins = 32
    # scales small enough that multinomial noise alone gives TV ~ 0.012
    params = pack([0.3, -0.2], [-0.4, 0.5], [0.2, -0.3], [-3.5, -3.0], [-3.3, -2.8], [0.8, -0.5])
    exact = all_bin_pairs(params, bins).exp().numpy()
    n = 100_000
    draws = dmol_sample(params.expand(1, 12, 1, n), np.random.default_rng(3), 1.0, bins)[0, :, 0]
    idx = np.rint((draws.numpy() + 1) * (bins - 1) / 2).astype(int)
    hist = np.bincount(idx[0] * bins + idx[1], minlength=bins * bins).reshape(bins, bins) / n
    tv = 0.5 * np.abs(hist - exact).sum()
    assert tv < 0.02


def test_sample_is_deterministic_given_seed():
    params = random_params(k=4, h=5, w=5, seed=7)
    a = dmol_sample(params, np.random.default_rng(11))
    b = dmol_sample(params, np.random.default_rng(11))
    assert torch.equal(a, b)
    c = dmol_sample(params, np.random.default_rng(12))
    assert not torch.equal(a, c)


@pytest.mark.parametrize("temperature", [0.0, -1.0])
def test_sample_rejects_bad_temperature(temperature):
    with pytest.raises(ValueError):
        dmol_sample(random_params(k=1), np.random.default_rng(0), temperature)


def test_mean_single_component():
    params = pack([0.0], [0.3], [-0.1], [-6.0], [-6.0], [0.5])
    out = dmol_mean(params)[0, :, 0, 0]
    assert out[0].item() == pytest.approx(0.3, abs=1e-6)
    assert out[1].item() == pytest.approx(-0.1 + np.tanh(0.5) * 0.3, abs=1e-6)


def test_mean_symmetric_pair():
    params = pack([0.0, 0.0], [-0.5, 0.5], [-0.5, 0.5], [-3.0, -3.0], [-3.0, -3.0], [0.0, 0.0])
    assert torch.allclose(dmol_mean(params), torch.zeros(1, 2, 1, 1, dtype=torch.float64), atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
def test_mean_matches_monte_carlo(seed):
    params = random_params(k=3, seed=seed)
    n = 1_000_000
    draws = dmol_sample(params.expand(1, 18, 1000, 1000), np.random.default_rng(seed), 1.0, 256)
    mc = draws.mean(dim=(2, 3))[0]
    analytic = dmol_mean(params)[0, :, 0, 0]
    assert torch.allclose(mc, analytic, atol=0.01)
    assert draws.shape[-1] * draws.shape[-2] == n


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8),
       st.floats(0.05, 5.0), st.floats(0.05, 5.0))
def test_mixture_entropy_monotone_in_temperature(logits, t1, t2):
    k = len(logits)
    params = pack(logits, [0.0] * k, [0.0] * k, [-3.0] * k, [-3.0] * k, [0.0] * k)
    lo, hi = sorted((t1, t2))
    assert mixture_entropy(params, lo).item() <= mixture_entropy(params, hi).item() + 1e-9
