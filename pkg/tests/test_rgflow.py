import json
import math

import numpy as np
import pytest
from scipy import stats

from hrg.disorder import Cauchy, Gaussian, GridDensity, tabulated
from hrg.hierarchy import HoppingModel
from hrg.rgflow import (
    FlowState,
    QuadratureError,
    SingularInputError,
    assumption_verdict,
    cauchy_flow_exact,
    flow_step_grid,
    flow_step_mc,
    harmonic_step,
    histogram_sup,
    ks_grid_vs_model,
    pushforward_cdf,
    run_flow,
    write_flow_csv,
    write_flow_sidecar,
)

BINS = 1024


@pytest.fixture(scope="module")
def cauchy_grid():
    return GridDensity.discretize(Cauchy(0, 1), bins=2048, coverage=1e-7)


def test_harmonic_examples():
    assert harmonic_step(1, 1, 0) == 1.0
    assert harmonic_step(1, 3, 0) == 1.5
    assert harmonic_step(2, 2, 0.5) == 2.5
    with pytest.raises(SingularInputError):
        harmonic_step(1, -1, 0)


def test_mc_constant_fixed_point():
    out = flow_step_mc(np.full(100, 2.5), np.full(100, 2.5), 0.0)
    assert np.allclose(out, 2.5)


def test_mc_cauchy_invariant():
    rng = np.random.default_rng(0)
    v = Cauchy(0, 1).sample(rng, 10**5)
    w = Cauchy(0, 1).sample(rng, 10**5)
    out = flow_step_mc(v, w, 0.0, rng=rng)
    assert stats.kstest(out, Cauchy(0, 1).cdf).statistic <= 0.01
    shifted = flow_step_mc(v, w, 0.7, rng=rng)
    assert abs(np.median(shifted) - 0.7) <= 0.02


def test_mc_singular_pairs_resampled_or_abort():
    v = np.arange(1.0, 10001.0)
    w = v.copy()
    w[0] = -1.0
    out = flow_step_mc(v, w, 0.0, rng=np.random.default_rng(1))
    assert np.all(np.isfinite(out))
    w[:20] = -v[:20]
    with pytest.raises(SingularInputError):
        flow_step_mc(v, w, 0.0)
    with pytest.raises(ValueError):
        flow_step_mc(v, w[:-1], 0.0)


def test_pushforward_cdf_against_mc():
    g = GridDensity.discretize(Gaussian(0.5, 1), bins=BINS)
    rng = np.random.default_rng(2)
    x = Gaussian(0.5, 1).sample(rng, 10**6)
    y = Gaussian(0.5, 1).sample(rng, 10**6)
    u = np.sort(2 * x * y / (x + y))
    t = np.quantile(u, np.linspace(0.02, 0.98, 25))
    emp = np.searchsorted(u, t, side="right") / u.size
    assert np.max(np.abs(pushforward_cdf(g, g, t) - emp)) <= 3e-3


def test_grid_cauchy_fixed_point(cauchy_grid):
    out = flow_step_grid(cauchy_grid, cauchy_grid, 0.0, bins=2048)
    assert abs(out.sup_norm() - 1 / math.pi) <= 1e-3
    assert ks_grid_vs_model(out, Cauchy(0, 1)) <= 1e-3
    assert out.total_mass == pytest.approx(1.0, abs=1e-6)


def test_grid_subadditivity():
    # sharp bounded starts, including two different densities
    u = tabulated(np.ones(64), 0.5, 1.5)
    g = GridDensity.discretize(Gaussian(1.0, 0.2), bins=BINS)
    for a, b in [(u, u), (u, g), (g, g)]:
        out = flow_step_grid(a, b, 0.3, bins=BINS)
        assert out.sup_norm() <= a.sup_norm() + b.sup_norm() + 1e-3
        assert out.total_mass == pytest.approx(1.0, abs=1e-6)


def test_grid_symmetry_and_translation():
    a = GridDensity.discretize(Gaussian(0.3, 1.0), bins=512)
    b = GridDensity.discretize(Cauchy(-0.2, 0.5), bins=512)
    ab = flow_step_grid(a, b, 0.4, bins=512)
    ba = flow_step_grid(b, a, 0.4, bins=512)
    assert np.allclose(ab.edges, ba.edges, rtol=0, atol=1e-10)
    assert np.allclose(ab.values, ba.values, rtol=0, atol=1e-10)
    zero = flow_step_grid(a, b, 0.0, bins=512)
    assert np.array_equal(zero.values, ab.values)
    assert np.allclose(zero.edges + 0.4, ab.edges, rtol=0, atol=1e-13)
    assert zero.left_tail == ab.left_tail and zero.right_tail == ab.right_tail


def test_grid_rejects_unnormalized():
    bad = GridDensity(np.array([0.0, 1.0]), np.array([0.5]), 0.0, 0.0)
    with pytest.raises(ValueError):
        flow_step_grid(bad, bad, 0.0)


def test_grid_mass_defect_aborts():
    g = GridDensity.discretize(Gaussian(0, 1), bins=64)
    with pytest.raises(QuadratureError):
        flow_step_grid(g, g, 0.0, order=1, max_defect=-1.0)


def test_grid_vs_mc_ks():
    rho = Gaussian(0.5, 1.0)
    g = GridDensity.discretize(rho, bins=2048)
    out = flow_step_grid(g, g, 0.25, bins=2048)
    rng = np.random.default_rng(3)
    x = flow_step_mc(rho.sample(rng, 10**6), rho.sample(rng, 10**6), 0.25, rng=rng)
    assert stats.kstest(x, out.cdf).statistic <= 0.01


def test_cauchy_flow_exact():
    h = HoppingModel.explicit([0.5], 1)
    assert cauchy_flow_exact(1j, h, 1) == 0.5 + 1j
    g = HoppingModel.geometric(1, 1, 30)
    assert abs(cauchy_flow_exact(1j, g, 30) - (1j + g.lambda_inf())) <= 1e-8
    with pytest.raises(ValueError):
        cauchy_flow_exact(1.0 + 0j, h, 1)


def test_grid_flow_tracks_poisson_kernel():
    h = HoppingModel.geometric(1, 1, 6)
    state = run_flow(Cauchy(0, 1), h, r_max=6, bins=BINS)
    z = cauchy_flow_exact(1j, h, 6)
    assert ks_grid_vs_model(state.density, Cauchy(z.real, z.imag)) <= 2e-3
    assert all(abs(s * math.pi - 1) <= 0.02 for s in state.supnorm_series)


def test_grid_and_mc_supnorm_agree():
    h = HoppingModel.geometric(1, 1, 5)
    grid = run_flow(Gaussian(0, 1), h, energy=0.5, r_max=5, bins=BINS)
    mc = run_flow(Gaussian(0, 1), h, energy=0.5, r_max=5, method="mc", samples=10**6, seed=4,
                  hist_bins=64, hist_central=0.5)
    for a, b in zip(grid.supnorm_series, mc.supnorm_series):
        assert abs(b / a - 1) <= 0.10


def test_histogram_sup_uniform():
    x = np.random.default_rng(5).uniform(0, 2, 10**6)
    sup, width = histogram_sup(x, bins=32, central=0.9)
    assert abs(sup - 0.5) <= 0.02
    assert width == pytest.approx(1.8 / 32, rel=1e-2)


def _state(series):
    return FlowState(len(series) - 1, None, list(series), [0.0] * (len(series) - 1), 0.0)


def test_verdict_examples():
    flat = _state([1 / math.pi] * 11)
    v = assumption_verdict(flat, 0.5)
    assert v.rate_hat == pytest.approx(0.0, abs=1e-12)
    assert v.delta_hat == pytest.approx(0.5)
    assert v.holds
    growing = _state([2.0 ** r for r in range(11)])
    assert not assumption_verdict(growing, 0.75).holds
    assert assumption_verdict(growing, 1.2).holds
    with pytest.raises(ValueError):
        assumption_verdict(_state([1.0] * 4), 0.5)
    with pytest.raises(ValueError):
        assumption_verdict(_state([1.0, 1.0, math.inf, 1.0, 1.0, 1.0]), 0.5)


def test_flow_outputs(tmp_path):
    h = HoppingModel.geometric(1, 1, 6)
    state = run_flow(Cauchy(0, 1), h, r_max=6, method="mc", samples=10**4, seed=1, hist_bins=32)
    write_flow_csv(state, tmp_path / "flow.csv")
    lines = (tmp_path / "flow.csv").read_text().splitlines()
    assert lines[0] == "r,p_r,supnorm,mass_leak"
    assert len(lines) == 8
    verdict = assumption_verdict(state, 1.0)
    write_flow_sidecar(verdict, tmp_path / "verdict.json", {"c": 1.0})
    data = json.loads((tmp_path / "verdict.json").read_text())
    assert data["holds"] == verdict.holds and data["c"] == 1.0


def test_run_flow_mc_deterministic():
    h = HoppingModel.geometric(1, 1, 4)
    a = run_flow(Gaussian(0, 1), h, r_max=4, method="mc", samples=1000, seed=9)
    b = run_flow(Gaussian(0, 1), h, r_max=4, method="mc", samples=1000, seed=9)
    assert a.supnorm_series == b.supnorm_series
    with pytest.raises(ValueError):
        run_flow(Gaussian(0, 1), h, r_max=0)
    with pytest.raises(ValueError):
        run_flow(Gaussian(0, 1), h, r_max=2, method="exact")
