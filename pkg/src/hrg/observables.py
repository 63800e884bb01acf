"""Spectral observables: eigenfunction correlators, IPRs, density of states,
rescaled eigenvalue processes, Poisson tests and counting bounds.

Ensemble routines take per-realization records so the expensive eigensolves
can be shared between observables.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spl
from scipy import stats

from .disorder import DensityModel, SeedSchedule, sample_potential
from .hamiltonian import (
    DEGENERACY_RTOL,
    HamiltonianSystem,
    SpectralData,
    _eigh,
)
from .hierarchy import DEFAULT_DENSE_CAP, TAIL_CORRECTED, HoppingModel, Mode, assemble_dense_laplacian, shell_of

Interval = tuple[float, float]


def _mask(lam: np.ndarray, interval: Interval | None) -> np.ndarray:
    if interval is None:
        return np.ones(lam.shape, dtype=bool)
    lo, hi = interval
    return (lam >= lo) & (lam <= hi)


# ---------------------------------------------------------------------------
# eigenfunction correlators


def eigenfunction_correlator(sd: SpectralData, j: int, k: int, interval: Interval | None = None) -> float:
    """Q(j, k; I) = sum over eigenvalues in I of |psi(j)| |psi(k)|; I=None means all of R."""
    sel = _mask(sd.eigenvalues, interval)
    vec = sd.eigenvectors
    return float(np.sum(np.abs(vec[j, sel]) * np.abs(vec[k, sel])))


def correlator_row(sd: SpectralData, j: int, interval: Interval | None = None) -> np.ndarray:
    """Q(j, k; I) for every k."""
    sel = _mask(sd.eigenvalues, interval)
    a = np.abs(sd.eigenvectors[:, sel])
    return a @ a[j]


@dataclass
class ShellFit:
    mu_hat: float
    stderr: float
    ci: tuple[float, float]
    rows: list[dict]           # distance, mean, stderr, count
    slope: float
    empty_shells: list[int] = field(default_factory=list)

    def weighted_constant(self, mu: float, length: float) -> float:
        """sum_k 2^{mu d(0,k)} E Q(0,k;I) / |I| from the shell table."""
        return weighted_sum_constant(self.rows, mu, length)


def shell_means(rows: np.ndarray, n: int, j: int = 0) -> np.ndarray:
    """Per-realization per-site means of Q(j, .) on each shell d = 0..n."""
    rows = np.atleast_2d(rows)
    d = shell_of(n, j)
    out = np.zeros((rows.shape[0], n + 1))
    for r in range(n + 1):
        out[:, r] = rows[:, d == r].mean(axis=1)
    return out


def ec_decay_fit(rows: np.ndarray, n: int, j: int = 0, level: float = 0.95) -> ShellFit:
    """Fit log2 of the shell-averaged E Q(j,k;I) against d(j,k).

    Each shell at distance d >= 1 holds 2^{d-1} sites, so a per-site decay
    2^{-(1+mu) d} is what makes sum_k 2^{mu' d} E Q finite for mu' < mu.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[0] < 100:
        raise ValueError("need at least 100 realizations")
    per = shell_means(rows, n, j)
    count = per.shape[0]
    mean = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / math.sqrt(count)
    table = [{"distance": d, "mean": float(mean[d]), "stderr": float(se[d]), "count": count} for d in range(n + 1)]
    empty = [d for d in range(n + 1) if mean[d] <= 0]
    fit = np.array([d for d in range(1, n + 1) if mean[d] > 0 and se[d] > 0])
    if fit.size < 2:
        return ShellFit(float("nan"), float("nan"), (float("nan"), float("nan")), table, float("nan"), empty)
    y = np.log2(mean[fit])
    sy = se[fit] / (mean[fit] * math.log(2.0))
    w = 1.0 / sy**2
    X = np.vstack([fit, np.ones(fit.size)]).T.astype(float)
    A = X.T @ (w[:, None] * X)
    coef = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    # inflate by the reduced chi-square when the straight line misfits
    resid = y - X @ coef
    dof = max(fit.size - 2, 1)
    chi2 = float(resid @ (w * resid)) / dof
    slope_se = math.sqrt(cov[0, 0] * max(chi2, 1.0))
    mu = -float(coef[0]) - 1.0
    zq = stats.norm.ppf(0.5 + level / 2)
    return ShellFit(mu, slope_se, (mu - zq * slope_se, mu + zq * slope_se), table, float(coef[0]), empty)


def weighted_sum_constant(rows: Sequence[dict], mu: float, length: float) -> float:
    """sum_k 2^{mu d} E Q(0,k;I) / |I|, with shell sizes 1, 1, 2, 4, ..."""
    total = 0.0
    for row in rows:
        d = row["distance"]
        size = 1 if d == 0 else 2 ** (d - 1)
        total += size * 2.0 ** (mu * d) * row["mean"]
    return total / length


# ---------------------------------------------------------------------------
# inverse participation ratios


def ipr(psi, q: float = 2.0, check: bool = False) -> float:
    """P_q(psi) = ||psi||_{2q}^{2q} / ||psi||_2^{2q}."""
    psi = np.abs(np.asarray(psi, dtype=float))
    if q < 0.5:
        raise ValueError("q must be at least 1/2")
    norm2 = float(np.sqrt(np.sum(psi**2)))
    if norm2 == 0:
        raise ValueError("IPR of the zero vector is undefined")
    u = psi / norm2
    val = float(np.sum(u ** (2 * q)))
    if check and q >= 1:
        r = float(u.max())
        if not (r ** (2 * q) * (1 - 1e-12) <= val <= r ** (2 * (q - 1)) * (1 + 1e-12)):
            raise AssertionError(f"IPR {val} outside [r^2q, r^2(q-1)] with r={r}")
    return val


def ipr_columns(vectors: np.ndarray, q: float = 2.0) -> np.ndarray:
    """P_q of every column of an orthonormal set."""
    v = np.abs(vectors)
    norm = np.sqrt(np.sum(v**2, axis=0))
    return np.sum((v / norm) ** (2 * q), axis=0)


@dataclass(frozen=True)
class SpectralRecord:
    """What the IPR/DOS/EC observables need from one realization, restricted to an interval."""

    n: int
    seed: int | None
    eigenvalues: np.ndarray     # in the interval, ascending
    vectors: np.ndarray         # (2^n, count)
    interval: Interval

    @property
    def count(self) -> int:
        return self.eigenvalues.size

    def ipr(self, q: float = 2.0) -> np.ndarray:
        return ipr_columns(self.vectors, q) if self.count else np.empty(0)

    def l1_norms(self) -> np.ndarray:
        return np.sum(np.abs(self.vectors), axis=0)

    def correlator_row(self, j: int = 0) -> np.ndarray:
        a = np.abs(self.vectors)
        return a @ a[j] if self.count else np.zeros(2**self.n)


def spectral_record(sys: HamiltonianSystem, interval: Interval, dense_cap: int = DEFAULT_DENSE_CAP,
                    method: str = "auto") -> SpectralRecord:
    """Eigenpairs of H - E with eigenvalue in the closed interval.

    ``method="dense"`` runs a subset eigensolve; ``"shift_invert"`` runs
    Lanczos on (H - c)^{-1} around the interval centre c, doubling the number
    of requested pairs until the farthest one lies outside the interval.
    ``"auto"`` picks shift-invert from 2048 sites on.
    """
    lo, hi = interval
    mat = sys.dense(dense_cap)
    if method == "auto":
        method = "shift_invert" if sys.size >= 2048 else "dense"
    if method == "shift_invert":
        centre, radius = 0.5 * (lo + hi), 0.5 * (hi - lo)
        k = 8
        v0 = np.random.default_rng(0x51).standard_normal(sys.size)   # fixed start keeps reruns identical
        while k < sys.size - 1:
            try:
                lam, vec = spl.eigsh(mat, k=k, sigma=centre, which="LM", v0=v0)
            except (spl.ArpackError, RuntimeError):
                break
            if np.max(np.abs(lam - centre)) > radius:
                keep = (lam >= lo) & (lam <= hi)
                order = np.argsort(lam[keep])
                return SpectralRecord(sys.n, sys.seed, lam[keep][order], vec[:, keep][:, order], (lo, hi))
            k *= 2
    # evr's value subset is half-open (lo, hi]; nudge lo so the interval is closed
    lo_open = np.nextafter(lo, -np.inf)
    lam, vec = _eigh(mat, sys.seed, subset_by_value=(lo_open, hi), driver="evr")
    return SpectralRecord(sys.n, sys.seed, lam, vec, (lo, hi))


def ensemble_records(model: DensityModel, h: HoppingModel, interval: Interval, realizations: int, seed: int,
                     mode: Mode = TAIL_CORRECTED, energy: float = 0.0, stream: int = 0x1F,
                     dense_cap: int = DEFAULT_DENSE_CAP, threads: int = 1) -> list[SpectralRecord]:
    """Records for realizations 0..R-1 in index order."""
    schedule = SeedSchedule(seed, stream)

    def one(i):
        s = schedule.derive(i)
        v = sample_potential(model, 2**h.n, s)
        return spectral_record(HamiltonianSystem(h, mode, v, energy, s), interval, dense_cap)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        return list(ex.map(one, range(realizations)))


@dataclass(frozen=True)
class AveragedIPR:
    value: float
    stderr: float
    count: float                 # E sum_{lambda in I} 1
    nu_hat: float                # 2^{-n} E Tr 1_I
    c_hat: float                 # 2^{-n} E sum_{j,k} Q(j,k;I) / |I|
    lower_bound: float           # C^{-4} (nu / |I|)^4
    l1_chain_bound: float        # E sum ||psi||_1^{-4} / E sum 1
    bound_holds: bool


def averaged_ipr(records: Sequence[SpectralRecord], c_hat: float | None = None) -> AveragedIPR:
    """Pi_n(I) = E sum_{lambda in I} P_2(psi_lambda) / E sum 1 with a delta-method stderr.

    Without an external ``c_hat`` the constant is the site-averaged correlator
    mass 2^{-n} E sum_{j,k} Q(j,k;I) / |I|, which is the smallest C for which
    the averaged form of the correlator bound holds.
    """
    if not records:
        raise ValueError("empty ensemble")
    n = records[0].n
    lo, hi = records[0].interval
    length = hi - lo
    num = np.array([r.ipr(2.0).sum() for r in records])
    den = np.array([float(r.count) for r in records])
    if den.sum() == 0:
        raise ValueError("no eigenvalues in the interval over the ensemble: averaged IPR undefined")
    value = float(num.sum() / den.sum())
    R = len(records)
    resid = num - value * den
    stderr = float(np.sqrt(np.sum(resid**2) / max(R - 1, 1) / R) / den.mean())
    nu = float(den.mean() / 2**n)
    l1 = [r.l1_norms() for r in records]
    mass = np.array([float(np.sum(x**2)) for x in l1])
    c_full = float(mass.mean() / 2**n / length) if length > 0 else float("inf")
    c = c_full if c_hat is None else c_hat
    bound = c ** (-4) * (nu / length) ** 4 if length > 0 else 0.0
    chain = float(sum(np.sum(x ** (-4.0)) for x in l1) / den.sum())
    return AveragedIPR(value, stderr, float(den.mean()), nu, c_full, bound, chain, bool(value >= bound))


def ipr_window(energy: float, n: int, W: float) -> Interval:
    """|lambda - E| <= 2^{-n-1} W."""
    half = 2.0 ** (-n - 1) * W
    return (energy - half, energy + half)


@dataclass(frozen=True)
class EventProbability:
    estimate: float
    ci: tuple[float, float]
    successes: int
    trials: int
    bound: float | None
    consistent: bool | None


def ipr_event_probability(records: Sequence[SpectralRecord], eps: float, c_hat: float | None = None,
                          W: float | None = None, level: float = 0.95) -> EventProbability:
    """Fraction of realizations with an eigenvector in the window having P_2 <= eps^4.

    The records' interval is the window.  With ``c_hat`` and ``W`` the Wilson
    interval is compared against C W eps.
    """
    hits = sum(1 for r in records if r.count and np.any(r.ipr(2.0) <= eps**4))
    trials = len(records)
    if trials == 0:
        raise ValueError("empty ensemble")
    ci = stats.binomtest(hits, trials).proportion_ci(confidence_level=level, method="wilson")
    bound = None if c_hat is None or W is None else c_hat * W * eps
    consistent = None if bound is None else bool(ci.low <= bound)
    return EventProbability(hits / trials, (float(ci.low), float(ci.high)), hits, trials, bound, consistent)


def mean_ipr_in_window(records: Sequence[SpectralRecord], q: float = 2.0) -> tuple[float, float, int]:
    """Mean P_q over all eigenstates in the windows, its stderr (clustered by realization) and the count."""
    vals = [r.ipr(q) for r in records]
    num = np.array([v.sum() for v in vals])
    den = np.array([float(v.size) for v in vals])
    total = den.sum()
    if total == 0:
        return float("nan"), float("nan"), 0
    mean = float(num.sum() / total)
    R = len(records)
    resid = num - mean * den
    se = float(np.sqrt(np.sum(resid**2) / max(R - 1, 1) / R) / den.mean())
    return mean, se, int(total)


# ---------------------------------------------------------------------------
# density of states


@dataclass(frozen=True)
class DosEstimate:
    site: float
    site_stderr: float
    trace: float
    trace_stderr: float
    wegner_bound: float | None
    wegner_ok: bool | None

    @property
    def agree(self) -> bool:
        return abs(self.site - self.trace) <= 2.0 * math.hypot(self.site_stderr, self.trace_stderr)


def dos(records: Sequence[SpectralRecord], sup_norm: float | None = None, site: int = 0) -> DosEstimate:
    """nu_n(I) as <delta_0, 1_I delta_0> and as 2^{-n} Tr 1_I, averaged over realizations.

    With ``sup_norm`` the Wegner diagnostic nu <= ||rho|| |I| is checked with
    three standard errors of slack on the trace estimator.
    """
    if not records:
        raise ValueError("empty ensemble")
    n = records[0].n
    lo, hi = records[0].interval
    a = np.array([float(np.sum(r.vectors[site] ** 2)) if r.count else 0.0 for r in records])
    b = np.array([r.count / 2**n for r in records])
    R = len(records)
    sa = float(a.std(ddof=1) / math.sqrt(R)) if R > 1 else float("nan")
    sb = float(b.std(ddof=1) / math.sqrt(R)) if R > 1 else float("nan")
    bound = None if sup_norm is None else sup_norm * (hi - lo)
    ok = None if bound is None else bool(b.mean() - 3.0 * sb <= bound)
    return DosEstimate(float(a.mean()), sa, float(b.mean()), sb, bound, ok)


# ---------------------------------------------------------------------------
# point processes


@dataclass(frozen=True)
class PointProcessSample:
    points: np.ndarray
    window: Interval
    n: int

    def __post_init__(self):
        lo, hi = self.window
        pts = np.asarray(self.points, dtype=float)
        if pts.size and (pts.min() < lo or pts.max() >= hi):
            raise ValueError("points outside the window")
        if np.any(np.diff(pts) < 0):
            raise ValueError("points must be sorted")

    @property
    def count(self) -> int:
        return self.points.size


def rescaled_process(sd: SpectralData | np.ndarray, energy: float, window: Interval, n: int | None = None) -> PointProcessSample:
    """All 2^n (lambda - E) inside the half-open window [a, b)."""
    lam = sd.eigenvalues if isinstance(sd, SpectralData) else np.asarray(sd, dtype=float)
    if n is None:
        n = int(round(math.log2(lam.size)))
    x = np.sort(2.0**n * (lam - energy))
    lo, hi = window
    return PointProcessSample(x[(x >= lo) & (x < hi)], (float(lo), float(hi)), n)


def block_process_sampler(model: DensityModel, h: HoppingModel, m: int, n: int, energy: float, window: Interval,
                          realizations: int, seed: int = 0, dense_cap: int = DEFAULT_DENSE_CAP,
                          threads: int = 1, stream: int = 0xB1) -> Iterator[PointProcessSample]:
    """Rescaled spectra of H_{n,m}: 2^{n-m} independent H_{m,m} blocks per realization.

    Block b of realization i draws its potential from seed derive(i).derive(b)
    so any block is reproducible in isolation.
    """
    if not 0 <= m <= n:
        raise ValueError("need 0 <= m <= n")
    if 2**m > dense_cap:
        raise ValueError(f"block size 2^{m} exceeds dense cap {dense_cap}")
    hm = h.at_scale(m)
    lap = assemble_dense_laplacian(hm, Mode(m), dense_cap)
    lo, hi = window
    # eigenvalues with 2^n (lambda - E) in [lo, hi)
    elo = energy + lo * 2.0**-n
    ehi = energy + hi * 2.0**-n
    schedule = SeedSchedule(seed, stream)
    blocks = 2 ** (n - m)

    def block(args):
        i, b = args
        s = schedule.substream(i).derive(b)
        v = sample_potential(model, 2**m, s)
        mat = lap.copy()
        mat[np.diag_indices_from(mat)] += v
        return _eigh(mat, s, eigvals_only=True, subset_by_value=(np.nextafter(elo, -np.inf), ehi), driver="evr")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        for i in range(realizations):
            lams = list(ex.map(block, [(i, b) for b in range(blocks)]))
            lam = np.concatenate(lams) if lams else np.empty(0)
            x = np.sort(2.0**n * (lam - energy))
            x = x[(x >= lo) & (x < hi)]
            yield PointProcessSample(x, (float(lo), float(hi)), n)


def block_counts(model: DensityModel, h: HoppingModel, m: int, energy: float, interval: Interval,
                 blocks: int, seed: int = 0, dense_cap: int = DEFAULT_DENSE_CAP, stream: int = 0xB1) -> np.ndarray:
    """Eigenvalue counts of independent H_{m,m} blocks in E + interval (unscaled)."""
    hm = h.at_scale(m)
    lap = assemble_dense_laplacian(hm, Mode(m), dense_cap)
    schedule = SeedSchedule(seed, stream).substream(0)
    lo, hi = energy + interval[0], energy + interval[1]
    out = np.empty(blocks, dtype=int)
    for b in range(blocks):
        s = schedule.derive(b)
        mat = lap.copy()
        mat[np.diag_indices_from(mat)] += sample_potential(model, 2**m, s)
        lam = _eigh(mat, s, eigvals_only=True, subset_by_value=(np.nextafter(lo, -np.inf), hi), driver="evr")
        out[b] = lam.size
    return out


@dataclass
class PoissonReport:
    total_points: int
    intensity_hat: float
    var_mean_ratio: float
    chi2_pvalue: float
    gap_count: int
    gap_ks: float              # vs exponential with fitted mean
    gap_ks_pvalue: float
    gap_ks_intensity: float | None   # vs exponential with the supplied intensity
    two_point_curve: list[dict]
    gap_histogram: list[dict]
    count_window: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _window_counts(samples: Sequence[PointProcessSample], width: float) -> np.ndarray:
    out = []
    for s in samples:
        lo, hi = s.window
        k = int(math.floor((hi - lo) / width + 1e-9))
        if k == 0:
            continue
        edges = lo + width * np.arange(k + 1)
        out.append(np.histogram(s.points, bins=edges)[0])
    return np.concatenate(out) if out else np.empty(0, dtype=int)


def _poisson_chi2(counts: np.ndarray) -> float:
    lam = counts.mean()
    kmax = int(counts.max())
    obs = np.bincount(counts, minlength=kmax + 1).astype(float)
    exp = stats.poisson.pmf(np.arange(kmax + 1), lam) * counts.size
    exp[-1] += stats.poisson.sf(kmax, lam) * counts.size
    # pool cells until every expected count is at least 5
    o_cells, e_cells = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(obs, exp):
        o_acc += o
        e_acc += e
        if e_acc >= 5:
            o_cells.append(o_acc)
            e_cells.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0:
        if e_cells:
            o_cells[-1] += o_acc
            e_cells[-1] += e_acc
        else:
            o_cells.append(o_acc)
            e_cells.append(e_acc)
    if len(o_cells) < 3:
        return float("nan")
    o_cells, e_cells = np.array(o_cells), np.array(e_cells)
    stat = float(np.sum((o_cells - e_cells) ** 2 / e_cells))
    return float(stats.chi2.sf(stat, len(o_cells) - 2))


def nearest_neighbor_gaps(samples: Sequence[PointProcessSample]) -> np.ndarray:
    """Consecutive gaps per sample, dropping the first and last gap of each."""
    gaps = [np.diff(s.points)[1:-1] for s in samples if s.count >= 4]
    return np.concatenate(gaps) if gaps else np.empty(0)


def poisson_tests(samples: Sequence[PointProcessSample], intensity_hat: float | None = None, sub_window: float = 1.0,
                  min_points: int = 1000, two_point_sizes: Sequence[float] | None = None,
                  hist_bins: int = 40) -> PoissonReport:
    """Counting, spacing and two-point diagnostics against a homogeneous Poisson process."""
    total = sum(s.count for s in samples)
    if total < min_points:
        raise ValueError(f"only {total} points; need at least {min_points}")
    length = sum(s.window[1] - s.window[0] for s in samples)
    lam = total / length if intensity_hat is None else intensity_hat
    counts = _window_counts(samples, sub_window)
    ratio = float(counts.var(ddof=1) / counts.mean()) if counts.mean() > 0 else float("nan")
    pval = _poisson_chi2(counts)
    gaps = nearest_neighbor_gaps(samples)
    ks = stats.kstest(gaps, stats.expon(scale=gaps.mean()).cdf)
    ks_int = float(stats.kstest(gaps, stats.expon(scale=1.0 / intensity_hat).cdf).statistic) if intensity_hat else None
    sizes = two_point_sizes or [sub_window * f for f in (0.05, 0.1, 0.2, 0.5, 1.0, 2.0)]
    curve = []
    for b in sizes:
        c = _window_counts(samples, b)
        p2 = float(np.mean(c >= 2)) if c.size else float("nan")
        expected = (lam * b) ** 2 / 2.0
        curve.append({"size": b, "p_ge2": p2, "ratio": p2 / expected if expected > 0 else float("nan"), "windows": int(c.size)})
    hi = float(np.quantile(gaps, 0.999)) if gaps.size else 1.0
    hcounts, hedges = np.histogram(gaps, bins=hist_bins, range=(0.0, hi))
    hist = [{"lo": float(a), "hi": float(b), "count": int(c)} for a, b, c in zip(hedges[:-1], hedges[1:], hcounts)]
    return PoissonReport(total, float(lam), ratio, pval, int(gaps.size), float(ks.statistic), float(ks.pvalue),
                         ks_int, curve, hist, sub_window)


# ---------------------------------------------------------------------------
# counting bounds


@dataclass
class CountingReport:
    sizes: list[float]
    p_ge1: list[float]
    p_ge2: list[float]
    exponent1: float
    exponent2: float
    ratio_max: float            # max over sizes of P(>=2) / P(>=1)^2 where P(>=1) > 0
    trials: int
    wegner_ok: bool | None

    def rows(self) -> list[dict]:
        return [{"size": s, "p_ge1": a, "p_ge2": b} for s, a, b in zip(self.sizes, self.p_ge1, self.p_ge2)]


def eigenvalue_batch(model: DensityModel, h: HoppingModel, mode: Mode, realizations: int, seed: int,
                     chunk: int = 2048, stream: int = 0xC0, dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """All eigenvalues of R realizations, shape (R, 2^n), by batched dense eigvalsh."""
    lap = assemble_dense_laplacian(h, mode, dense_cap)
    schedule = SeedSchedule(seed, stream)
    size = 2**h.n
    out = np.empty((realizations, size))
    for start in range(0, realizations, chunk):
        idx = range(start, min(start + chunk, realizations))
        mats = np.repeat(lap[None], len(idx), axis=0)
        for t, i in enumerate(idx):
            mats[t][np.diag_indices(size)] += sample_potential(model, size, schedule.derive(i))
        out[start : start + len(idx)] = np.linalg.eigvalsh(mats)
    return out


def counting_bounds_check(eigenvalues: np.ndarray, energy: float, sizes: Sequence[float],
                          sup_norm: float | None = None) -> CountingReport:
    """Empirical P(Tr 1_I >= 1) and P(Tr 1_I >= 2) for I = [E - |I|/2, E + |I|/2]."""
    lam = np.atleast_2d(eigenvalues)
    R, size = lam.shape
    p1, p2 = [], []
    for s in sizes:
        if s <= 0:
            p1.append(0.0)
            p2.append(0.0)
            continue
        c = np.sum((lam >= energy - s / 2) & (lam <= energy + s / 2), axis=1)
        p1.append(float(np.mean(c >= 1)))
        p2.append(float(np.mean(c >= 2)))
    sz = np.asarray(sizes, dtype=float)
    a1, a2 = np.asarray(p1), np.asarray(p2)

    def exponent(p):
        ok = (sz > 0) & (p > 0)
        if ok.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(sz[ok]), np.log(p[ok]), 1)[0])

    ratio = [b / a**2 for a, b in zip(a1, a2) if a > 0]
    wegner = None
    if sup_norm is not None:
        # E Tr 1_I <= ||rho|| |I| 2^n, so P(>=1) carries the same bound
        wegner = bool(np.all(a1 - 3 * np.sqrt(a1 * (1 - a1) / R) <= sup_norm * sz * size))
    return CountingReport(list(map(float, sz)), p1, p2, exponent(a1), exponent(a2),
                          float(max(ratio)) if ratio else float("nan"), R, wegner)


# ---------------------------------------------------------------------------
# resonance diagnostic


def resonance_tail(model: DensityModel, h: HoppingModel, t_values: Sequence[float], alphas: Sequence[float],
                   realizations: int, seed: int = 0, rcond_floor: float = 1e-13) -> dict:
    """P(|F_n(t)| >= 1/|alpha|) with F_n(t) = <phi_n, (H_{n,n-1} - t)^{-1} phi_n>.

    Realizations whose reciprocal condition number falls below ``rcond_floor``
    sit on a pole to working precision; they count as |F| = inf and are
    reported separately.
    """
    n = h.n
    lap = assemble_dense_laplacian(h, Mode(max(n - 1, 0)))
    schedule = SeedSchedule(seed, 0x5E)
    phi = np.full(2**n, 2.0 ** (-n / 2))
    vals = []
    near_pole = 0
    for i in range(realizations):
        v = sample_potential(model, 2**n, schedule.derive(i))
        for t in t_values:
            mat = lap.copy()
            mat[np.diag_indices_from(mat)] += v - t
            lu = sla.lu_factor(mat, check_finite=False)
            rc = np.min(np.abs(np.diag(lu[0]))) / np.max(np.abs(np.diag(lu[0])))
            if rc < rcond_floor:
                near_pole += 1
                vals.append(np.inf)
                continue
            vals.append(abs(float(phi @ sla.lu_solve(lu, phi, check_finite=False))))
    vals = np.asarray(vals)
    return {"alpha": list(map(float, alphas)),
            "probability": [float(np.mean(vals >= 1.0 / abs(a))) for a in alphas],
            "samples": int(vals.size), "near_pole": near_pole}


# ---------------------------------------------------------------------------
# ensemble accumulators


@dataclass
class Accumulator:
    """Welford count / mean / M2; merge is Chan's pairwise update."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)

    def extend(self, xs: Iterable[float]) -> None:
        for x in xs:
            self.add(float(x))

    def merge(self, other: "Accumulator") -> "Accumulator":
        if other.count == 0:
            return Accumulator(self.count, self.mean, self.m2)
        if self.count == 0:
            return Accumulator(other.count, other.mean, other.m2)
        n = self.count + other.count
        d = other.mean - self.mean
        mean = self.mean + d * other.count / n
        m2 = self.m2 + other.m2 + d * d * self.count * other.count / n
        return Accumulator(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else float("nan")

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count > 1 else float("nan")


@dataclass
class EnsembleSummary:
    master_seed: int
    stream_id: int
    config_digest: str
    accumulators: dict[str, Accumulator] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)

    def add(self, name: str, value: float) -> None:
        self.accumulators.setdefault(name, Accumulator()).add(float(value))

    def merge(self, other: "EnsembleSummary") -> "EnsembleSummary":
        """Left-to-right merge; names are combined in sorted order."""
        out = EnsembleSummary(self.master_seed, self.stream_id, self.config_digest)
        for name in sorted(set(self.accumulators) | set(other.accumulators)):
            a = self.accumulators.get(name, Accumulator())
            out.accumulators[name] = a.merge(other.accumulators.get(name, Accumulator()))
        out.failures = self.failures + other.failures
        return out

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "stream_id": self.stream_id,
            "config_digest": self.config_digest,
            "observables": {
                k: {"count": a.count, "mean": a.mean, "variance": a.variance, "stderr": a.stderr}
                for k, a in sorted(self.accumulators.items())
            },
            "failures": self.failures,
        }
