import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hrg.disorder import Cauchy, Gaussian, SeedSchedule, sample_potential
from hrg.hamiltonian import HamiltonianSystem, assemble, diagonalize, random_system
from hrg.hierarchy import TAIL_CORRECTED, HoppingModel, shell_of, truncated
from hrg.observables import (
    Accumulator,
    EnsembleSummary,
    PointProcessSample,
    SpectralRecord,
    averaged_ipr,
    block_counts,
    block_process_sampler,
    correlator_row,
    counting_bounds_check,
    dos,
    ec_decay_fit,
    eigenfunction_correlator,
    eigenvalue_batch,
    ensemble_records,
    ipr,
    ipr_columns,
    ipr_event_probability,
    ipr_window,
    mean_ipr_in_window,
    nearest_neighbor_gaps,
    poisson_tests,
    rescaled_process,
    resonance_tail,
    spectral_record,
    weighted_sum_constant,
)


@pytest.fixture(scope="module")
def sd6():
    return diagonalize(random_system(Gaussian(0, 1), HoppingModel.geometric(1, 1, 6), seed=1))


# ---------------------------------------------------------------- correlators

def test_correlator_completeness_symmetry_empty(sd6):
    for j in (0, 5, 63):
        assert eigenfunction_correlator(sd6, j, j) == pytest.approx(1.0, abs=1e-10)
    assert eigenfunction_correlator(sd6, 3, 17, (-1, 1)) == eigenfunction_correlator(sd6, 17, 3, (-1, 1))
    assert eigenfunction_correlator(sd6, 3, 17, (50.0, 60.0)) == 0.0
    row = correlator_row(sd6, 4, (-1, 1))
    assert all(row[k] == pytest.approx(eigenfunction_correlator(sd6, 4, k, (-1, 1)), abs=1e-14) for k in range(64))


def test_double_stochasticity(sd6):
    sq = sd6.eigenvectors**2
    assert np.allclose(sq.sum(axis=0), 1.0, atol=1e-10)
    assert np.allclose(sq.sum(axis=1), 1.0, atol=1e-10)


def test_ec_fit_synthetic_decay():
    # per-site correlator exactly 2^{-(1+mu) d} with small multiplicative noise
    n, mu = 6, 0.7
    d = shell_of(n)
    rng = np.random.default_rng(0)
    rows = 2.0 ** (-(1 + mu) * d)[None, :] * rng.lognormal(0, 0.1, size=(200, 2**n))
    fit = ec_decay_fit(rows, n)
    assert abs(fit.mu_hat - mu) <= 3 * fit.stderr + 0.02
    assert fit.ci[0] < fit.mu_hat < fit.ci[1]
    assert [r["distance"] for r in fit.rows] == list(range(n + 1))
    c = fit.weighted_constant(mu / 2, 1.0)
    assert math.isfinite(c) and c > 0
    with pytest.raises(ValueError):
        ec_decay_fit(rows[:50], n)


def test_ec_fit_disjoint_interval_all_zero():
    h = HoppingModel.geometric(1, 1, 4)
    recs = ensemble_records(Gaussian(0, 1), h, (100.0, 101.0), 100, seed=1)
    rows = np.array([r.correlator_row(0) for r in recs])
    assert np.all(rows == 0)
    fit = ec_decay_fit(rows, 4)
    assert math.isnan(fit.mu_hat)
    assert fit.empty_shells == list(range(5))


def test_weighted_sum_constant_shell_sizes():
    rows = [{"distance": d, "mean": 1.0} for d in range(4)]
    # shell sizes 1, 1, 2, 4 with mu = 0 add up to 2^3 sites
    assert weighted_sum_constant(rows, 0.0, 2.0) == pytest.approx(4.0)


# ---------------------------------------------------------------- IPR

def test_ipr_examples():
    assert ipr(np.ones(16)) == pytest.approx(1 / 16)
    e = np.zeros(9)
    e[4] = -3.0
    for q in (0.5, 1, 2, 3.5):
        assert ipr(e, q) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ipr(np.zeros(4))
    with pytest.raises(ValueError):
        ipr(np.ones(4), q=0.4)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 64), st.floats(0.55, 4), st.integers(0, 2**31))
def test_ipr_duality_and_bounds(size, q, seed):
    psi = np.random.default_rng(seed).normal(size=size)
    if q >= 1:
        ipr(psi, q, check=True)
    dual = q / (2 * q - 1)
    assert ipr(psi, q) * ipr(psi, dual) ** (2 * q - 1) >= 1 - 1e-10
    assert ipr(psi, 2) >= 1 / size * (1 - 1e-12)


def test_ipr_columns_matches_scalar(sd6):
    got = ipr_columns(sd6.eigenvectors[:, :5], 2.0)
    assert np.allclose(got, [ipr(sd6.eigenvectors[:, i]) for i in range(5)], rtol=1e-12)


def _record(vectors, lam, n, interval=(-10.0, 10.0)):
    return SpectralRecord(n, None, np.asarray(lam, float), np.asarray(vectors, float), interval)


def test_averaged_ipr_trivial_ensembles():
    n = 3
    # zero hopping: eigenvectors are basis vectors
    h = HoppingModel.geometric(1, 1, n)
    recs = [spectral_record(assemble(h, truncated(0), sample_potential(Gaussian(0, 1), 8, s)), (-10, 10))
            for s in range(5)]
    assert averaged_ipr(recs).value == pytest.approx(1.0)
    flat = _record(np.full((8, 1), 8**-0.5), [0.0], n)
    assert averaged_ipr([flat, flat]).value == pytest.approx(1 / 8)
    with pytest.raises(ValueError):
        averaged_ipr([_record(np.zeros((8, 0)), [], n)])


def test_averaged_ipr_lower_bound_holds():
    h = HoppingModel.geometric(1, 1, 6)
    recs = ensemble_records(Gaussian(0, 1), h, (0.0, 1.0), 40, seed=2)
    res = averaged_ipr(recs)
    assert res.value >= 2.0**-6
    assert res.bound_holds
    assert res.value >= res.lower_bound


def test_ipr_event_probability_limits():
    h = HoppingModel.geometric(1, 1, 6)
    window = ipr_window(0.5, 6, 4.0)
    assert window == pytest.approx((0.5 - 2**-5, 0.5 + 2**-5))
    recs = ensemble_records(Gaussian(0, 1), h, window, 60, seed=3)
    tiny = ipr_event_probability(recs, 1e-3)
    assert tiny.estimate == 0.0 and tiny.ci[0] == 0.0
    empty = ensemble_records(Gaussian(0, 1), h, ipr_window(0.5, 6, 1e-9), 60, seed=3)
    assert ipr_event_probability(empty, 1.0).estimate == 0.0
    big = ipr_event_probability(recs, 1.0, c_hat=1.0, W=4.0)
    assert big.ci[0] <= big.estimate <= big.ci[1]
    assert big.consistent


def test_mean_ipr_in_window():
    flat = _record(np.full((4, 1), 0.5), [0.0], 2)
    e = np.eye(4)[:, :2]
    mean, se, count = mean_ipr_in_window([flat, _record(e, [0.0, 0.1], 2)])
    assert count == 3
    assert mean == pytest.approx((0.25 + 2) / 3)
    assert mean_ipr_in_window([_record(np.zeros((4, 0)), [], 2)])[2] == 0


# ---------------------------------------------------------------- DOS

def test_dos_full_line_is_one():
    h = HoppingModel.geometric(1, 1, 5)
    recs = ensemble_records(Gaussian(0, 1), h, (-1e3, 1e3), 10, seed=4)
    est = dos(recs)
    assert est.site == pytest.approx(1.0, abs=1e-10)
    assert est.trace == pytest.approx(1.0, abs=1e-14)


def test_dos_zero_hopping_matches_density():
    n = 6
    h = HoppingModel.geometric(1, 1, n)
    model = Gaussian(0, 1)
    recs = ensemble_records(model, h, (0.0, 0.5), 400, seed=5, mode=truncated(0))
    est = dos(recs, sup_norm=1 / math.sqrt(2 * math.pi))
    exact = model.cdf(0.5) - model.cdf(0.0)
    assert abs(est.trace - exact) <= 3 * est.trace_stderr
    assert abs(est.site - exact) <= 3 * est.site_stderr
    assert est.wegner_ok


def test_dos_estimators_agree():
    h = HoppingModel.geometric(1, 1, 6)
    recs = ensemble_records(Gaussian(0, 1), h, (0.0, 1.0), 300, seed=6)
    assert dos(recs).agree


# ---------------------------------------------------------------- point processes

def test_rescaled_process_shift_and_count(sd6):
    n, E = 6, 0.3
    a = rescaled_process(sd6, E, (-20, 20))
    t = 1.5
    b = rescaled_process(sd6, E + t * 2.0**-n, (-40, 40))
    shifted = a.points - t
    assert np.allclose(shifted, b.points[(b.points >= -20 - t) & (b.points < 20 - t)], atol=1e-10)
    lam = sd6.eigenvalues
    assert a.count == int(np.sum((lam >= E - 20 * 2.0**-n) & (lam < E + 20 * 2.0**-n)))
    assert rescaled_process(sd6, 1e3, (-1, 1)).count == 0


def test_point_sample_invariants():
    with pytest.raises(ValueError):
        PointProcessSample(np.array([0.5, 2.0]), (0.0, 1.0), 3)
    with pytest.raises(ValueError):
        PointProcessSample(np.array([0.6, 0.5]), (0.0, 1.0), 3)


def test_block_sampler_single_block_matches_direct():
    n = 5
    h = HoppingModel.geometric(1, 0.5, n)
    got = list(block_process_sampler(Gaussian(0, 1), h, n, n, 0.5, (-8, 8), 3, seed=7))
    sched = SeedSchedule(7, 0xB1)
    for i, sample in enumerate(got):
        v = sample_potential(Gaussian(0, 1), 2**n, sched.substream(i).derive(0))
        sd = diagonalize(HamiltonianSystem(h, truncated(n), v, 0.0))
        ref = rescaled_process(sd, 0.5, (-8, 8), n)
        assert np.allclose(sample.points, ref.points, atol=1e-9)


def test_block_sampler_reproducible_and_superposed():
    h = HoppingModel.geometric(1, 0.5, 8)
    a = list(block_process_sampler(Gaussian(0, 1), h, 4, 8, 0.5, (-50, 50), 2, seed=1))
    b = list(block_process_sampler(Gaussian(0, 1), h, 4, 8, 0.5, (-50, 50), 2, seed=1))
    assert all(np.array_equal(x.points, y.points) for x, y in zip(a, b))
    with pytest.raises(ValueError):
        next(block_process_sampler(Gaussian(0, 1), h, 9, 8, 0.5, (-1, 1), 1))


def test_block_counts_homogeneous():
    h = HoppingModel.geometric(1, 0.5, 4)
    counts = block_counts(Gaussian(0, 1), h, 4, 0.5, (-0.5, 0.5), 400, seed=2)
    halves = [np.bincount(c, minlength=counts.max() + 1) for c in (counts[:200], counts[200:])]
    table = np.array(halves)
    table = table[:, table.sum(axis=0) > 0]
    assert stats.chi2_contingency(table)[1] > 0.001


def test_poisson_synthetic_calibration():
    rng = np.random.default_rng(8)
    samples = [PointProcessSample(np.sort(rng.uniform(0, 100, rng.poisson(100))), (0.0, 100.0), 0)
               for _ in range(120)]
    rep = poisson_tests(samples, intensity_hat=1.0)
    assert 0.9 <= rep.var_mean_ratio <= 1.1
    assert rep.gap_ks <= 0.03
    assert rep.total_points >= 10**4
    assert len(rep.two_point_curve) == 6


def test_poisson_picket_fence_rejected():
    samples = [PointProcessSample(np.arange(0.0, 100.0), (0.0, 100.0), 0) for _ in range(20)]
    rep = poisson_tests(samples)
    assert rep.gap_ks > 0.5
    with pytest.raises(ValueError):
        poisson_tests(samples[:5])


def test_gap_edges_dropped():
    s = PointProcessSample(np.array([0.0, 1.0, 3.0, 6.0, 10.0]), (0.0, 11.0), 0)
    assert np.array_equal(nearest_neighbor_gaps([s]), [2.0, 3.0])


# ---------------------------------------------------------------- counting

def test_counting_zero_size_and_exponents():
    lam = np.random.default_rng(9).uniform(-1, 1, size=(20000, 4))
    sizes = [0.0, 0.01, 0.02, 0.04, 0.08]
    rep = counting_bounds_check(lam, 0.0, sizes, sup_norm=2.0)
    assert rep.p_ge1[0] == 0.0 and rep.p_ge2[0] == 0.0
    # four independent uniform points: P(>=1) ~ 2|I|, P(>=2) ~ 6 (|I|/2)^2
    assert 0.9 <= rep.exponent1 <= 1.1
    assert 1.6 <= rep.exponent2 <= 2.4
    assert rep.wegner_ok
    assert rep.rows()[1]["size"] == 0.01


def test_eigenvalue_batch_matches_dense():
    h = HoppingModel.geometric(1, 1, 3)
    lam = eigenvalue_batch(Gaussian(0, 1), h, TAIL_CORRECTED, 5, seed=3, chunk=2)
    sched = SeedSchedule(3, 0xC0)
    for i in range(5):
        v = sample_potential(Gaussian(0, 1), 8, sched.derive(i))
        ref = diagonalize(HamiltonianSystem(h, TAIL_CORRECTED, v)).eigenvalues
        assert np.allclose(lam[i], ref, atol=1e-12)


def test_resonance_tail_monotone():
    h = HoppingModel.geometric(1, 1, 4)
    res = resonance_tail(Gaussian(0, 1), h, [0.0, 0.5], [0.1, 1.0, 10.0], 50, seed=1)
    p = res["probability"]
    assert p[0] <= p[1] <= p[2]
    assert res["samples"] == 100


# ---------------------------------------------------------------- accumulators

@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60), st.integers(0, 60))
def test_accumulator_merge_matches_numpy(xs, cut):
    cut = min(cut, len(xs))
    a, b = Accumulator(), Accumulator()
    a.extend(xs[:cut])
    b.extend(xs[cut:])
    m = a.merge(b)
    assert m.count == len(xs)
    assert m.mean == pytest.approx(np.mean(xs), abs=1e-9)
    assert m.variance == pytest.approx(np.var(xs, ddof=1), rel=1e-7, abs=1e-7)


def test_summary_merge_associative():
    parts = []
    for k in range(3):
        s = EnsembleSummary(1, 2, "abc")
        for x in range(k, 10 + k):
            s.add("x", x)
            s.add(f"y{k}", x * x)
        parts.append(s)
    left = parts[0].merge(parts[1]).merge(parts[2]).to_dict()
    right = parts[0].merge(parts[1].merge(parts[2])).to_dict()
    for name in left["observables"]:
        for key in ("count", "mean", "variance"):
            assert left["observables"][name][key] == pytest.approx(right["observables"][name][key], rel=1e-12)
    assert list(left["observables"]) == sorted(left["observables"])
