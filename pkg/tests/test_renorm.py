import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from hrg.disorder import Cauchy, Gaussian, SeedSchedule
from hrg.hamiltonian import assemble, green_column, phi_vector, quadratic_form_inverse, random_system
from hrg.hierarchy import TAIL_CORRECTED, HoppingModel, LevelError, hier_distance, truncated
from hrg.renorm import (
    SingularPairError,
    block_form,
    decoupling_ratio,
    default_gamma_grid,
    draw_potential,
    estimate_decoupling,
    fm_inequality_check,
    fractional_moment_scan,
    green_recursion,
    phi_statistic,
    phi_statistic_batch,
    renormalize,
    schur_complement,
    schur_recover,
)
from hrg.rgflow import harmonic_step

MODES = [TAIL_CORRECTED, truncated(5), truncated(3)]


def _sys(n=5, mode=TAIL_CORRECTED, seed=0, model=Gaussian(0, 1), energy=0.0, h=None):
    h = h or HoppingModel.geometric(1.0, 0.8, n)
    return random_system(model, h, mode, seed=seed, energy=energy)


# ---------------------------------------------------------------- single step

def test_two_site_child_value():
    sys = assemble(HoppingModel.geometric(1, 1, 1), truncated(0), [1.0, 2.0])
    step = renormalize(sys)
    assert step.child.n == 0
    assert step.child.potential[0] == pytest.approx(4 / 3, abs=1e-15)
    assert phi_statistic(sys) == pytest.approx(4 / 3, abs=1e-15)
    assert schur_recover(sys, phi_vector(1), phi_vector(1)) == pytest.approx(0.75, abs=1e-15)


@pytest.mark.parametrize("mode", MODES)
def test_child_potential_and_hopping(mode):
    sys = _sys(6, mode, seed=1)
    step = renormalize(sys)
    v = sys.potential
    p1 = sys.hopping.p(1) if mode.tail_corrected or mode.truncate >= 1 else 0.0
    for k in range(32):
        assert step.child.potential[k] == pytest.approx(harmonic_step(v[2 * k], v[2 * k + 1], p1), rel=1e-14)
    for r in range(1, 6):
        assert step.child.hopping.p(r) == pytest.approx(sys.hopping.p(r + 1), rel=1e-14)
        assert abs(step.child.hopping.p(r)) <= 2 ** -0.8 * 1.0 * 2 ** (-0.8 * r) * (1 + 1e-12)
    assert step.child.mode == mode.child()


def test_double_renormalization():
    h = HoppingModel.geometric(1.0, 1.0, 2)
    v = np.array([0.3, 1.1, -0.7, 2.0])
    twice = renormalize(renormalize(assemble(h, TAIL_CORRECTED, v)).child).child
    rv = [harmonic_step(v[0], v[1], h.p(1)), harmonic_step(v[2], v[3], h.p(1))]
    rrv = harmonic_step(rv[0], rv[1], h.p(2))
    direct = assemble(h.shifted().shifted(), TAIL_CORRECTED, [rrv])
    assert np.allclose(twice.dense(), direct.dense(), atol=1e-14)
    with pytest.raises(LevelError):
        renormalize(twice)


def test_singular_pair_raises_with_seed():
    sys = assemble(HoppingModel.geometric(1, 1, 1), TAIL_CORRECTED, [1.0, -1.0], seed=17)
    with pytest.raises(SingularPairError) as info:
        renormalize(sys)
    assert info.value.seed == 17


@pytest.mark.parametrize("mode", MODES)
def test_block_identity_and_schur(mode):
    for seed in range(5):
        step = renormalize(_sys(5, mode, seed=seed, energy=0.2))
        direct, built = block_form(step)
        assert np.max(np.abs(direct - built)) <= 1e-12
        assert np.max(np.abs(schur_complement(step) - step.child.dense())) <= 1e-10


# ---------------------------------------------------------------- Schur recovery

def test_schur_recover_random_realizations():
    rng = np.random.default_rng(5)
    for i in range(200):
        n = 1 + i % 6
        sys = _sys(n, TAIL_CORRECTED, seed=100 + i, energy=0.3, h=HoppingModel.geometric(1, 1, n))
        phi, psi = rng.normal(size=(2, 2**n))
        lhs = quadratic_form_inverse(sys, phi, psi)
        rhs = schur_recover(sys, phi, psi)
        assert abs(lhs - rhs) <= 1e-8 * (1 + abs(lhs))


def test_s_maps_phi_down():
    step = renormalize(_sys(5, seed=2))
    assert np.allclose(step.s_apply(phi_vector(5)), phi_vector(4), atol=1e-15)
    assert np.allclose(step.uf_apply(phi_vector(5)), 0.0, atol=1e-15)


# ---------------------------------------------------------------- Green recursion

@pytest.mark.parametrize("mode", [TAIL_CORRECTED, truncated(8), truncated(4)])
def test_green_recursion_vs_dense(mode):
    worst = 0.0
    for i in range(100):
        n = 1 + i % 8
        m = mode if mode.tail_corrected else truncated(min(mode.truncate, n))
        sys = _sys(n, m, seed=300 + i, model=Cauchy(0, 1), energy=0.1, h=HoppingModel.geometric(1, 1, n))
        col = green_column(sys, 0)
        for j in range(0, 2**n, max(1, 2**n // 16)):
            got = green_recursion(sys, j)
            ref = col[j]
            if ref == 0.0:
                # sites outside the origin's block in a truncated operator
                assert abs(got) <= 1e-12 * np.max(np.abs(col))
                continue
            worst = max(worst, abs(got - ref) / abs(ref))
    assert worst <= 1e-8


def test_green_recursion_depth():
    n = 7
    sys = _sys(n, seed=4, h=HoppingModel.geometric(1, 1, n))
    for j in (0, 1, 2, 5, 64, 127):
        _, depth = green_recursion(sys, j, return_depth=True)
        assert depth == max(hier_distance(0, j), 1)


def test_green_recursion_symmetric_pairs():
    # equal potentials in every level-1 pair: each step contributes (1/sqrt2)^2 = 1/2
    n = 4
    h = HoppingModel.geometric(1, 1, n)
    base = np.repeat(np.random.default_rng(6).normal(size=8), 2)
    sys = assemble(h, TAIL_CORRECTED, base)
    step = renormalize(sys)
    for k in range(1, 8):
        g = green_column(sys, 0)[2 * k]
        rg = green_column(step.child, 0)[k]
        assert g == pytest.approx(0.5 * rg, rel=1e-10)


def test_green_recursion_energy_shift():
    sys = _sys(4, seed=8, h=HoppingModel.geometric(1, 1, 4))
    assert green_recursion(sys, 9, energy=0.7) == pytest.approx(green_column(sys.at_energy(0.7), 0)[9], rel=1e-9)


# ---------------------------------------------------------------- Phi statistic

def test_phi_scalar_case():
    sys = assemble(HoppingModel.geometric(1, 1, 0), truncated(0), [0.8])
    assert phi_statistic(sys) == pytest.approx(0.8)
    assert phi_statistic(sys, energy=0.3) == pytest.approx(0.5)


@pytest.mark.parametrize("mode", [TAIL_CORRECTED, truncated(6), truncated(2), truncated(0)])
def test_phi_fast_matches_direct(mode):
    for seed in range(10):
        sys = _sys(6, mode, seed=seed, energy=0.25)
        fast = phi_statistic(sys)
        direct = phi_statistic(sys, method="direct")
        assert fast == pytest.approx(direct, rel=1e-9)


def test_phi_batch_matches_single():
    h = HoppingModel.geometric(1, 1, 5)
    rng = np.random.default_rng(9)
    pots = rng.normal(size=(20, 32))
    for mode in (TAIL_CORRECTED, truncated(5), truncated(1)):
        batch = phi_statistic_batch(pots, h, 0.4, mode)
        single = [phi_statistic(assemble(h, mode, v, energy=0.4)) for v in pots]
        assert np.allclose(batch, single, rtol=1e-12)


def test_phi_law_exchangeable_within_pairs():
    h = HoppingModel.geometric(1, 1, 4)
    pots = np.random.default_rng(10).normal(size=(5000, 16))
    swapped = pots.reshape(5000, 8, 2)[:, :, ::-1].reshape(5000, 16)
    a = phi_statistic_batch(pots, h, 0.5, truncated(4))
    b = phi_statistic_batch(swapped, h, 0.5, truncated(4))
    # the harmonic step is symmetric, so the swap is an exact identity per realization
    assert np.allclose(a, b, rtol=1e-13)
    assert stats.ks_2samp(a, b).statistic <= 1e-12


def test_draw_potential_redraws_singular():
    sched = SeedSchedule(3, 1)
    v, seed, redraws = draw_potential(Gaussian(0, 1), 4, sched, 0)
    assert redraws == 0 and seed == sched.derive(0)
    assert v.shape == (16,)


# ---------------------------------------------------------------- fractional moments

@pytest.fixture(scope="module")
def fm_tables():
    h = HoppingModel.geometric(1, 2, 6)
    return {sig: fractional_moment_scan(Gaussian(0, sig), h, 0.5, 0.5, realizations=200, seed=3)
            for sig in (4.0, 8.0)}


def test_fracmom_decay_strong_disorder(fm_tables):
    tab = fm_tables[4.0]
    assert tab.mu_hat - 1.96 * tab.slope_stderr > 0
    assert [r["distance"] for r in tab.rows] == list(range(7))
    assert all(r["count"] == 200 for r in tab.rows)


def test_fracmom_diagonal_a_priori_bound(fm_tables):
    s = 0.5
    for sig, tab in fm_tables.items():
        d0 = tab.rows[0]
        sup = 1 / (sig * math.sqrt(2 * math.pi))
        assert d0["mean"] - d0["stderr"] <= 4 * sup**s / (1 - s)


def test_fracmom_monotone_in_disorder(fm_tables):
    weak, strong = fm_tables[4.0], fm_tables[8.0]
    assert strong.mu_hat >= weak.mu_hat - 2 * math.hypot(weak.slope_stderr, strong.slope_stderr)


def test_fracmom_preconditions():
    h = HoppingModel.geometric(1, 2, 3)
    with pytest.raises(ValueError):
        fractional_moment_scan(Gaussian(0, 1), h, 0.0, 1.0)
    with pytest.raises(ValueError):
        fractional_moment_scan(Gaussian(0, 1), h, 0.0, 0.5, realizations=99)


def test_fracmom_heavy_tail_warning():
    h = HoppingModel.geometric(1, 2, 3)
    with pytest.warns(RuntimeWarning, match="heavy tail"):
        fractional_moment_scan(Cauchy(0, 0.01), h, 0.0, 0.99, realizations=100, seed=1)


# ---------------------------------------------------------------- decoupling

def test_decoupling_half_at_i():
    oracle = 2 * integrate.quad(lambda v: math.sqrt(v) / (math.pi * (1 + v * v)), 0, np.inf)[0]
    assert oracle == pytest.approx(math.sqrt(2), rel=1e-10)
    est = estimate_decoupling(0.5, 1j)
    assert est.D_hat >= oracle * (1 - 1e-8)
    assert np.isfinite(est.D_hat)
    assert est.skipped == 0
    assert decoupling_ratio(0.5, 1j, 1e4) == pytest.approx(oracle, rel=2e-2)


def test_decoupling_grid_covers_far_gamma():
    g = default_gamma_grid()
    assert g.size == 41 * 41 + 16
    assert np.max(np.abs(g)) == pytest.approx(1e4)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(-2, 2), st.floats(0.2, 3), st.floats(-30, 30), st.floats(-30, 30))
def test_decoupling_ratio_positive(s, mu, sigma, gr, gi):
    r = decoupling_ratio(s, complex(mu, sigma), complex(gr, gi))
    assert r > 0 and max(r, 1 / r) >= 1


def test_decoupling_small_grid_at_least_one():
    est = estimate_decoupling(0.3, 0.5 + 2j, gamma_grid=[0, 1 + 1j, 5.0])
    assert est.D_hat >= 1


def test_fm_inequality_check():
    dec = estimate_decoupling(0.5, 1j, gamma_grid=[0.0, 1e4])
    rep = fm_inequality_check(1j, 0.5, 4, 2, 2000, seed=2, decoupling=dec)
    assert rep.verdict
    assert rep.chain_ok
    small = fm_inequality_check(1j, 0.1, 4, 2, 2000, seed=2,
                                decoupling=estimate_decoupling(0.1, 1j, gamma_grid=[0.0, 1e4]))
    assert abs(small.ratio - 1) <= 0.1
    with pytest.raises(ValueError):
        fm_inequality_check(1j, 0.5, 4, 8, 100)
