"""Renormalization map on single-site densities.

T_p sends a density to the law of 2VV'/(V+V') + p for independent V, V'.
The grid path pushes the law forward through its CDF: the pair (v, w) is
split into |w| < |v| and |v| < |w|, and on the first half the set
{w : 2vw/(v+w) <= t, |w| < |v|} is a single interval whose endpoint moves with
bounded speed in v.  The outer integral over v is Gauss-Legendre per bin, the
inner one is the exact piecewise-linear CDF of the other density.  Summing the
two halves makes the step exactly symmetric in its arguments.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .disorder import Cauchy, DensityModel, GridDensity, sinh_edges
from .hierarchy import HoppingModel

log = logging.getLogger(__name__)

DEFAULT_BINS = 4096
DEFAULT_COVERAGE = 1e-7
HIST_BINS = 4096
PROBE_REACH = 1e10


class SingularInputError(ArithmeticError):
    """The harmonic map hit its pole v + w = 0."""


class QuadratureError(RuntimeError):
    pass


def harmonic_step(v: float, w: float, p: float = 0.0) -> float:
    """(1/(2v) + 1/(2w))^{-1} + p = 2vw/(v+w) + p."""
    s = v + w
    if s == 0 or abs(s) <= 1e-15 * abs(v * w):
        raise SingularInputError(f"harmonic step singular at v={v}, w={w}")
    return 2.0 * v * w / s + p


def harmonic_map(v: np.ndarray, w: np.ndarray, p: float = 0.0) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    return 2.0 * v * w / (v + w) + p


def _singular_pairs(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    s = v + w
    return (s == 0) | (np.abs(s) <= 1e-15 * np.abs(v * w))


# ---------------------------------------------------------------------------
# Monte Carlo path


def flow_step_mc(samples, samples2, p: float, rng: np.random.Generator | None = None,
                 max_resample_fraction: float = 1e-3) -> np.ndarray:
    """Pairwise harmonic step; singular pairs are redrawn from the inputs and counted."""
    v = np.array(samples, dtype=float)
    w = np.array(samples2, dtype=float)
    if v.shape != w.shape:
        raise ValueError("sample vectors must have equal length")
    bad = _singular_pairs(v, w)
    resampled = int(bad.sum())
    if resampled > max_resample_fraction * v.size:
        raise SingularInputError(f"{resampled} singular pairs out of {v.size}")
    if resampled:
        rng = rng or np.random.default_rng(0)
        while bad.any():
            k = int(bad.sum())
            v[bad] = v[rng.integers(0, v.size, k)]
            w[bad] = w[rng.integers(0, w.size, k)]
            bad = _singular_pairs(v, w)
        log.info("flow_step_mc: resampled %d singular pairs", resampled)
    return harmonic_map(v, w, p)


def histogram_sup(samples: np.ndarray, bins: int = HIST_BINS, central: float = 0.99) -> tuple[float, float]:
    """Max of a density histogram over the central quantile range; returns (sup, bin width)."""
    lo, hi = np.quantile(samples, [(1 - central) / 2, (1 + central) / 2])
    counts, edges = np.histogram(samples, bins=bins, range=(lo, hi))
    width = edges[1] - edges[0]
    return float(counts.max() / (samples.size * width)), float(width)


# ---------------------------------------------------------------------------
# grid path


def _gauss_nodes(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _half_cdf(rho: GridDensity, other: GridDensity, t: np.ndarray, order: int, chunk: int = 64) -> np.ndarray:
    """P(2vw/(v+w) <= t, |w| < |v|) for v ~ rho, w ~ other; v-tails enter as u = 2w."""
    x, gw = _gauss_nodes(order)
    a = rho.edges[:-1]
    h = rho.widths
    v = (a[:, None] + h[:, None] * x[None, :]).ravel()
    weight = ((rho.values * h)[:, None] * gw[None, :]).ravel()
    keep = (weight > 0) & (v != 0)
    v, weight = v[keep], weight[keep]
    av = np.abs(v)
    cdf_lo = other.cdf(-av)
    w_edges, w_cum = other.edges, other._cum
    out = np.empty(t.size)
    for s in range(0, t.size, chunk):
        tt = t[s : s + chunk, None]
        denom = 2.0 * v[None, :] - tt
        full = (v[None, :] > 0) & (tt >= v[None, :])
        empty = (v[None, :] < 0) & (tt <= v[None, :])
        safe = np.where(full | empty | (denom == 0), 1.0, denom)
        with np.errstate(over="ignore", invalid="ignore"):
            # t near 1e300 (total mass probe) overflows to +-inf and is clipped below
            wc = np.where(full, av[None, :], np.where(empty, -av[None, :], tt * v[None, :] / safe))
        wc = np.clip(wc, -av[None, :], av[None, :])
        inner = np.interp(wc, w_edges, w_cum) - cdf_lo[None, :]
        out[s : s + chunk] = inner @ weight
    grid_other = other.cdf(t / 2.0) - other.left_tail
    return out + rho.tail_mass * grid_other


def pushforward_cdf(rho: GridDensity, rho2: GridDensity, t, order: int = 4) -> np.ndarray:
    """CDF of 2VV'/(V+V') at points t (no shift)."""
    t = np.asarray(t, dtype=float)
    if rho2 is rho:
        return 2.0 * _half_cdf(rho, rho, t, order)
    return _half_cdf(rho, rho2, t, order) + _half_cdf(rho2, rho, t, order)


@dataclass(frozen=True)
class GridStepDiagnostics:
    mass_defect: float   # |computed total - expected total| before bookkeeping
    leaked: float        # tail x tail mass with undefined image
    tail_mass: float     # output mass outside the window


def _target_edges(cdf_fn, probe: np.ndarray, bins: int, coverage: float) -> np.ndarray:
    """Sinh grid centred at the mode, with scale from the probe's peak and quartiles."""
    F = np.maximum.accumulate(cdf_fn(probe))
    mass = np.diff(F)
    dens = mass / np.diff(probe)
    keep = np.concatenate([[True], np.diff(F) > 0])
    qs = np.interp([coverage / 2, 0.25, 0.5, 0.75, 1 - coverage / 2], F[keep], probe[keep])
    lo, q1, med, q3, hi = qs
    # smooth the probe density a little before locating the mode
    k = max(1, probe.size // 512)
    sm = np.convolve(mass, np.ones(k), mode="same") / np.convolve(np.diff(probe), np.ones(k), mode="same")
    mode = 0.5 * (probe[:-1] + probe[1:])[int(np.argmax(sm))]
    peak = float(np.max(sm))
    center = mode if lo < mode < hi else med
    scale = min(0.5 * (q3 - q1), 0.5 / peak) if peak > 0 else 0.5 * (q3 - q1)
    scale = max(scale, 1e-12)
    lo = min(lo, center - scale)
    hi = max(hi, center + scale)
    return sinh_edges(center, scale, lo, hi, bins)


def flow_step_grid(rho: GridDensity, rho2: GridDensity, p: float = 0.0, bins: int = DEFAULT_BINS,
                   coverage: float = DEFAULT_COVERAGE, order: int = 4, edges=None,
                   max_defect: float = 1e-3, return_diagnostics: bool = False):
    """Deterministic T_p(rho, rho2) on a refitted sinh grid.

    The output window covers all but ``coverage`` of the mass; mass outside it
    is carried in the tails.  ``edges`` overrides the refit (before the shift by p).
    """
    for g in (rho, rho2):
        if abs(g.total_mass - 1.0) > 1e-6:
            raise ValueError(f"input density not normalized (mass {g.total_mass})")
    cdf = lambda t: pushforward_cdf(rho, rho2, t, order)
    leaked = rho.tail_mass * rho2.tail_mass
    total = float(cdf(np.array([1e300]))[0])
    defect = abs(total - (1.0 - leaked))
    if defect > max_defect:
        raise QuadratureError(f"pushforward mass deficit {defect:.3e} exceeds {max_defect:.1e}")
    if edges is None:
        probe = _probe_points(rho, rho2)
        edges = _target_edges(cdf, probe, bins, coverage)
    edges = np.asarray(edges, dtype=float)
    F = np.maximum.accumulate(np.clip(cdf(edges), 0.0, total))
    values = np.diff(F) / np.diff(edges)
    left = float(F[0]) + 0.5 * leaked
    right = max(1.0 - float(F[-1]) - 0.5 * leaked, 0.0)
    out = GridDensity(edges + p, values, left, right)
    if return_diagnostics:
        return out, GridStepDiagnostics(defect, leaked, out.tail_mass)
    return out


def _probe_points(rho: GridDensity, rho2: GridDensity, size: int = 2048) -> np.ndarray:
    lo = min(rho.lo, rho2.lo)
    hi = max(rho.hi, rho2.hi)
    q = np.concatenate([rho.ppf(np.linspace(0.0005, 0.9995, 64)), rho2.ppf(np.linspace(0.0005, 0.9995, 64))])
    spread = float(np.subtract(*np.quantile(q, [0.75, 0.25]))) or 1.0
    center = float(np.median(q))
    scale = min(spread / 2.0, 0.5 / max(rho.sup_norm(), rho2.sup_norm()))
    # inputs of both signs put mass near v + w = 0, whose image has 1/u^2 tails
    reach = PROBE_REACH * scale if lo < 0 < hi else 0.0
    return sinh_edges(center, scale, min(2.0 * lo - abs(center), center - reach),
                      max(2.0 * hi + abs(center), center + reach), size)


# ---------------------------------------------------------------------------
# flows


@dataclass
class FlowState:
    """Result of iterating the identical-density flow rho_r = T_{p_r} rho_{r-1}."""

    step: int
    density: GridDensity | None
    supnorm_series: list[float]
    hopping_prefix: list[float]
    energy: float
    mass_leak: list[float] = field(default_factory=list)
    bin_widths: list[float] = field(default_factory=list)
    method: str = "grid"
    samples: np.ndarray | None = field(default=None, repr=False)

    def to_rows(self) -> list[dict]:
        rows = []
        for r, sup in enumerate(self.supnorm_series):
            rows.append({
                "r": r,
                "p_r": self.hopping_prefix[r - 1] if r > 0 else 0.0,
                "supnorm": sup,
                "mass_leak": self.mass_leak[r] if r < len(self.mass_leak) else 0.0,
            })
        return rows


def run_flow(rho0: DensityModel, h: HoppingModel, energy: float = 0.0, r_max: int = 10,
             method: str = "grid", samples: int = 10**6, seed=0, bins: int = DEFAULT_BINS,
             coverage: float = DEFAULT_COVERAGE, hist_bins: int = HIST_BINS,
             hist_central: float = 0.99) -> FlowState:
    """Iterate T_{p_r} ... T_{p_1} rho_E, recording the sup-norm after every step.

    ``method="mc"`` runs population dynamics: every step pairs two independent
    uniform resamplings of the current population, so the population size
    stays fixed.  Its sup-norm is the largest bin of a ``hist_bins`` histogram
    over the central ``hist_central`` quantile range; with few counts per bin
    this is biased upward by sampling noise.
    """
    if r_max < 1:
        raise ValueError("r_max must be at least 1")
    prefix = [h.p(r) for r in range(1, r_max + 1)]
    start = rho0.shifted(energy)
    if method == "grid":
        rho = start if isinstance(start, GridDensity) else GridDensity.discretize(start, bins=bins, coverage=coverage)
        sups, leaks, widths = [rho.sup_norm()], [rho.tail_mass], [rho.bin_width]
        for p in prefix:
            rho = flow_step_grid(rho, rho, p, bins=bins, coverage=coverage)
            sups.append(rho.sup_norm())
            leaks.append(rho.tail_mass)
            widths.append(rho.bin_width)
            if not math.isfinite(sups[-1]):
                raise QuadratureError("non-finite sup-norm in grid flow")
        return FlowState(r_max, rho, sups, prefix, energy, leaks, widths, "grid")
    if method == "mc":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        x = np.asarray(start.sample(rng, samples), dtype=float)
        sup, width = histogram_sup(x, hist_bins, hist_central)
        sups, widths = [sup], [width]
        for p in prefix:
            i = rng.integers(0, x.size, x.size)
            j = rng.integers(0, x.size, x.size)
            x = flow_step_mc(x[i], x[j], p, rng=rng)
            sup, width = histogram_sup(x, hist_bins, hist_central)
            sups.append(sup)
            widths.append(width)
        return FlowState(r_max, None, sups, prefix, energy, [0.0] * (r_max + 1), widths, "mc", x)
    raise ValueError(f"unknown flow method {method!r}")


@dataclass(frozen=True)
class Verdict:
    rate_hat: float
    delta_hat: float
    holds: bool
    stderr: float
    window: int


def assumption_verdict(state: FlowState, c: float, window: int | None = None) -> Verdict:
    """Slope of log2 sup-norm against r over the last ceil(r_max/2) steps.

    holds requires delta_hat = c - rate_hat to exceed twice the slope's
    standard error.
    """
    series = np.asarray(state.supnorm_series, dtype=float)
    if series.size < 6:
        raise ValueError("need at least 6 points in the sup-norm series")
    if not np.all(np.isfinite(series)) or np.any(series <= 0):
        raise ValueError("sup-norm series has non-finite or non-positive entries")
    r_max = series.size - 1
    window = window or math.ceil(r_max / 2)
    r = np.arange(series.size)[-window:]
    y = np.log2(series[-window:])
    X = np.vstack([r, np.ones_like(r)]).T.astype(float)
    coef, res, *_ = np.linalg.lstsq(X, y, rcond=None)
    slope = float(coef[0])
    dof = max(window - 2, 1)
    resid = y - X @ coef
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / float(((r - r.mean()) ** 2).sum()))
    delta = c - slope
    return Verdict(slope, delta, bool(delta > 0 and delta > 2.0 * se), se, window)


def cauchy_flow_exact(z: complex, h: HoppingModel | Sequence[float], r: int) -> complex:
    """Poisson-kernel parameter after r steps: z + p_1 + ... + p_r."""
    if not np.imag(z) > 0:
        raise ValueError("need Im z > 0")
    prefix = h.prefix(r) if isinstance(h, HoppingModel) else np.asarray(h, dtype=float)[:r]
    return complex(z) + float(np.sum(prefix))


def ks_grid_vs_model(grid: GridDensity, model: DensityModel, points: np.ndarray | None = None) -> float:
    """sup |F_grid - F_model| over the grid edges (both CDFs are monotone, so edges suffice
    up to the model's variation inside one bin)."""
    t = grid.edges if points is None else np.asarray(points, dtype=float)
    return float(np.max(np.abs(grid.cdf(t) - model.cdf(t))))


def write_flow_csv(state: FlowState, path: Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["r", "p_r", "supnorm", "mass_leak"], lineterminator="\n")
        w.writeheader()
        for row in state.to_rows():
            w.writerow({k: (repr(float(v)) if k != "r" else v) for k, v in row.items()})


def write_flow_sidecar(verdict: Verdict, path: Path, extra: dict | None = None) -> None:
    data = {"rate_hat": verdict.rate_hat, "delta_hat": verdict.delta_hat, "holds": verdict.holds,
            "stderr": verdict.stderr, "window": verdict.window}
    data.update(extra or {})
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
