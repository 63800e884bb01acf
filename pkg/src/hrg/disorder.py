"""Single-site densities, grid densities and reproducible potential sampling.

Every density model exposes ``pdf``, ``cdf``, ``sample``, ``sup_norm`` and
``shifted``.  ``shifted(E)`` is the law of V - E, i.e. the density
rho_E = rho(. + E).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import integrate, optimize, special

SQRT2PI = math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# seeding

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer; a bijection of the 64-bit integers."""
    z = (int(x) + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _splitmix64_array(x: np.ndarray) -> np.ndarray:
    z = x.astype(np.uint64) + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class SeedSchedule:
    """Deterministic per-realization seeds.

    seed(index) = mix(mix(mix(master_seed) ^ stream_id) ^ index) with ``mix``
    the SplitMix64 finalizer.  For a fixed schedule the map index -> seed is
    a bijection, and two streams never share a seed at the same index.
    """

    master_seed: int
    stream_id: int = 0

    @property
    def base(self) -> int:
        return splitmix64(splitmix64(self.master_seed & _MASK64) ^ (self.stream_id & _MASK64))

    def derive(self, index: int) -> int:
        if index < 0:
            raise ValueError("realization index must be non-negative")
        return splitmix64(self.base ^ (int(index) & _MASK64))

    def derive_many(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.uint64)
        with np.errstate(over="ignore"):
            return _splitmix64_array(np.uint64(self.base) ^ idx)

    def substream(self, stream_id: int) -> "SeedSchedule":
        return SeedSchedule(self.derive(stream_id), 0)

    def rng(self, index: int) -> np.random.Generator:
        return np.random.default_rng(self.derive(index))


def derive_seed(schedule: SeedSchedule, index: int) -> int:
    return schedule.derive(index)


# ---------------------------------------------------------------------------
# analytic densities


class DensityModel:
    """Interface shared by all single-site densities."""

    def pdf(self, v):
        raise NotImplementedError

    def cdf(self, v):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def sup_norm(self) -> float:
        raise NotImplementedError

    def shifted(self, energy: float) -> "DensityModel":
        raise NotImplementedError

    def __call__(self, v):
        return self.pdf(v)


@dataclass(frozen=True)
class Gaussian(DensityModel):
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("gaussian sigma must be positive")

    def pdf(self, v):
        x = (np.asarray(v, dtype=float) - self.mu) / self.sigma
        return np.exp(-0.5 * x * x) / (SQRT2PI * self.sigma)

    def cdf(self, v):
        return special.ndtr((np.asarray(v, dtype=float) - self.mu) / self.sigma)

    def ppf(self, q):
        return self.mu + self.sigma * special.ndtri(q)

    def sample(self, rng, size):
        return self.mu + self.sigma * rng.standard_normal(size)

    def sup_norm(self):
        return 1.0 / (SQRT2PI * self.sigma)

    def shifted(self, energy):
        return Gaussian(self.mu - energy, self.sigma)


@dataclass(frozen=True)
class Cauchy(DensityModel):
    """Poisson kernel P_z with z = mu + i sigma."""

    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("cauchy sigma must be positive")

    @classmethod
    def from_z(cls, z: complex) -> "Cauchy":
        return cls(float(np.real(z)), float(np.imag(z)))

    @property
    def z(self) -> complex:
        return complex(self.mu, self.sigma)

    def pdf(self, v):
        x = np.asarray(v, dtype=float) - self.mu
        return self.sigma / (np.pi * (x * x + self.sigma**2))

    def cdf(self, v):
        return 0.5 + np.arctan((np.asarray(v, dtype=float) - self.mu) / self.sigma) / np.pi

    def ppf(self, q):
        return self.mu + self.sigma * np.tan(np.pi * (np.asarray(q, dtype=float) - 0.5))

    def sample(self, rng, size):
        return self.ppf(rng.random(size))

    def sup_norm(self):
        return 1.0 / (np.pi * self.sigma)

    def shifted(self, energy):
        return Cauchy(self.mu - energy, self.sigma)


@dataclass(frozen=True)
class Mixture(DensityModel):
    components: tuple[tuple[float, DensityModel], ...]

    def __post_init__(self):
        comps = tuple((float(w), m) for w, m in self.components)
        object.__setattr__(self, "components", comps)
        weights = np.array([w for w, _ in comps])
        if len(comps) == 0 or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to 1")

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components])

    def pdf(self, v):
        return sum(w * m.pdf(v) for w, m in self.components)

    def cdf(self, v):
        return sum(w * m.cdf(v) for w, m in self.components)

    def sample(self, rng, size):
        which = rng.choice(len(self.components), size=size, p=self.weights)
        out = np.empty(size)
        for i, (_, m) in enumerate(self.components):
            sel = which == i
            count = int(sel.sum())
            if count:
                out[sel] = m.sample(rng, count)
        return out

    def sup_norm(self):
        # bound-free estimate: max on a fine grid around every component
        grid = np.concatenate([_probe_grid(m) for _, m in self.components])
        return float(np.max(self.pdf(grid)))

    def shifted(self, energy):
        return Mixture(tuple((w, m.shifted(energy)) for w, m in self.components))


@dataclass(frozen=True)
class CauchyConvolved(DensityModel):
    """Law of X + C with X ~ base and C ~ P_z independent."""

    base: DensityModel
    z: complex = 1j

    def __post_init__(self):
        if not np.imag(self.z) > 0:
            raise ValueError("cauchy_convolved needs Im z > 0")

    @property
    def kernel(self) -> Cauchy:
        return Cauchy.from_z(self.z)

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        k = self.kernel
        b = self.base
        if isinstance(b, Gaussian):
            return special.voigt_profile(v - b.mu - k.mu, b.sigma, k.sigma)
        if isinstance(b, Cauchy):
            return Cauchy(b.mu + k.mu, b.sigma + k.sigma).pdf(v)
        if isinstance(b, Mixture):
            return sum(w * CauchyConvolved(m, self.z).pdf(v) for w, m in b.components)
        return np.vectorize(self._pdf_quad)(v)

    def _pdf_quad(self, v: float) -> float:
        k = self.kernel
        f = lambda t: float(self.base.pdf(v - t)) * float(k.pdf(t))
        return integrate.quad(f, -np.inf, np.inf, points=None, limit=200)[0]

    def cdf(self, v):
        # integrate base.cdf(v - C) over the kernel's quantile variable
        v = np.asarray(v, dtype=float)
        b = self.base
        if isinstance(b, Cauchy):
            k = self.kernel
            return Cauchy(b.mu + k.mu, b.sigma + k.sigma).cdf(v)
        if isinstance(b, Mixture):
            return sum(w * CauchyConvolved(m, self.z).cdf(v) for w, m in b.components)
        nodes, weights = _unit_gauss_legendre()
        c = self.kernel.ppf(nodes)
        flat = v.reshape(-1)
        out = np.empty(flat.shape)
        for s in range(0, flat.size, 512):
            chunk = flat[s : s + 512]
            out[s : s + 512] = b.cdf(chunk[:, None] - c[None, :]) @ weights
        return out.reshape(v.shape)

    def sample(self, rng, size):
        x = self.base.sample(rng, size)
        return x + self.kernel.sample(rng, size)

    def sup_norm(self):
        return float(np.max(self.pdf(_probe_grid(self))))

    def shifted(self, energy):
        return CauchyConvolved(self.base.shifted(energy), self.z)


def _unit_gauss_legendre(order: int = 4000):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _location_scale(m) -> tuple[float, float]:
    if isinstance(m, (Gaussian, Cauchy)):
        return m.mu, m.sigma
    if isinstance(m, CauchyConvolved):
        mu, s = _location_scale(m.base)
        return mu + m.kernel.mu, s + m.kernel.sigma
    if isinstance(m, Mixture):
        pairs = [_location_scale(c) for _, c in m.components]
        return float(np.mean([p[0] for p in pairs])), float(min(p[1] for p in pairs))
    if isinstance(m, GridDensity):
        return float(m.ppf(0.5)), float(max(m.ppf(0.75) - m.ppf(0.25), 1e-12))
    return 0.0, 1.0


def _probe_grid(m) -> np.ndarray:
    if isinstance(m, Mixture):
        return np.concatenate([_probe_grid(c) for _, c in m.components])
    mu, s = _location_scale(m)
    return mu + s * np.linspace(-8.0, 8.0, 4001)


# ---------------------------------------------------------------------------
# grid densities


@dataclass(frozen=True, eq=False)
class GridDensity(DensityModel):
    """Piecewise-constant density on bins plus mass outside the grid.

    ``edges`` need not be uniform.  Mass below ``lo`` and above ``hi`` is kept
    in ``left_tail`` / ``right_tail``; for CDF purposes it sits at -inf and
    +inf respectively.
    """

    edges: np.ndarray
    values: np.ndarray
    left_tail: float = 0.0
    right_tail: float = 0.0
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if edges.ndim != 1 or values.shape != (edges.size - 1,):
            raise ValueError("need len(edges) == len(values) + 1")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("grid edges must be strictly increasing")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("grid density values must be finite and non-negative")
        if self.left_tail < 0 or self.right_tail < 0:
            raise ValueError("tail masses must be non-negative")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "values", values)
        cum = self.left_tail + np.concatenate([[0.0], np.cumsum(values * np.diff(edges))])
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def uniform(cls, lo: float, hi: float, values, tail_mass: float = 0.0, left_fraction: float = 0.5) -> "GridDensity":
        values = np.asarray(values, dtype=float)
        return cls(np.linspace(lo, hi, values.size + 1), values,
                   tail_mass * left_fraction, tail_mass * (1.0 - left_fraction))

    @classmethod
    def from_model(cls, model: DensityModel, edges) -> "GridDensity":
        """Exact bin masses of ``model`` on ``edges``."""
        edges = np.asarray(edges, dtype=float)
        cdf = np.asarray(model.cdf(edges), dtype=float)
        cdf = np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))
        values = np.diff(cdf) / np.diff(edges)
        return cls(edges, values, float(cdf[0]), float(1.0 - cdf[-1]))

    @classmethod
    def discretize(cls, model: DensityModel, bins: int = 4096, coverage: float = 1e-7,
                   center: float | None = None, scale: float | None = None) -> "GridDensity":
        """Sinh-spaced grid leaving at most ``coverage`` mass outside."""
        lo_q, hi_q = _model_quantiles(model, coverage / 2.0)
        mu, s = _location_scale(model)
        center = mu if center is None else center
        scale = s if scale is None else scale
        return cls.from_model(model, sinh_edges(center, scale, lo_q, hi_q, bins))

    # window and bin geometry
    @property
    def lo(self) -> float:
        return float(self.edges[0])

    @property
    def hi(self) -> float:
        return float(self.edges[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def masses(self) -> np.ndarray:
        return self.values * self.widths

    @property
    def tail_mass(self) -> float:
        return self.left_tail + self.right_tail

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum() + self.tail_mass)

    @property
    def bin_width(self) -> float:
        """Width of the bin holding the maximum (resolution of the sup-norm estimate)."""
        return float(self.widths[int(np.argmax(self.values))])

    def sup_norm(self) -> float:
        return float(self.values.max())

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        idx = np.searchsorted(self.edges, v, side="right") - 1
        inside = (idx >= 0) & (idx < self.values.size)
        out = np.zeros(v.shape)
        out[inside] = self.values[idx[inside]]
        return out

    def cdf(self, v):
        return np.interp(v, self.edges, self._cum)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        cum = self._cum
        # strictly increasing copy for inversion
        keep = np.concatenate([[True], np.diff(cum) > 0])
        return np.interp(q, cum[keep], self.edges[keep])

    def sample(self, rng, size):
        """Inverse-CDF sampling conditional on the grid; tail mass is not sampled."""
        masses = self.masses
        cum = np.cumsum(masses)
        u = rng.random(size) * cum[-1]
        idx = np.minimum(np.searchsorted(cum, u, side="right"), masses.size - 1)
        return self.edges[idx] + rng.random(size) * self.widths[idx]

    def shifted(self, energy):
        return GridDensity(self.edges - energy, self.values, self.left_tail, self.right_tail)

    def translated(self, p: float) -> "GridDensity":
        return self.shifted(-p)


def sinh_edges(center: float, scale: float, lo: float, hi: float, bins: int) -> np.ndarray:
    """Edges center + scale*sinh(xi) with xi uniform, spanning [lo, hi]."""
    if not hi > lo:
        raise ValueError("empty grid range")
    scale = max(scale, 1e-12 * max(abs(lo), abs(hi), 1.0))
    a = np.arcsinh((lo - center) / scale)
    b = np.arcsinh((hi - center) / scale)
    edges = center + scale * np.sinh(np.linspace(a, b, bins + 1))
    edges[0], edges[-1] = lo, hi
    return edges


def _model_quantiles(model: DensityModel, tail: float) -> tuple[float, float]:
    if hasattr(model, "ppf") and isinstance(model, (Gaussian, Cauchy, GridDensity)):
        return float(model.ppf(tail)), float(model.ppf(1.0 - tail))
    mu, s = _location_scale(model)

    def root(q):
        f = lambda x: float(model.cdf(np.array([x]))[0]) - q
        lo, hi = mu - s, mu + s
        while f(lo) > 0:
            lo = mu - 2.0 * (mu - lo)
        while f(hi) < 0:
            hi = mu + 2.0 * (hi - mu)
        return optimize.brentq(f, lo, hi, xtol=1e-10 * max(1.0, abs(lo), abs(hi)))

    return root(tail), root(1.0 - tail)


def tabulated(values, lo: float, hi: float, tail_mass: float = 0.0) -> GridDensity:
    """Uniform tabulated density; values are rescaled so that the grid holds 1 - tail_mass."""
    values = np.asarray(values, dtype=float)
    width = (hi - lo) / values.size
    mass = values.sum() * width
    if mass <= 0:
        raise ValueError("tabulated density has no mass")
    grid = GridDensity.uniform(lo, hi, values * (1.0 - tail_mass) / mass, tail_mass)
    if abs(grid.total_mass - 1.0) > 1e-8:
        raise ValueError("tabulated density does not normalize")
    return grid


Model = Union[Gaussian, Cauchy, Mixture, CauchyConvolved, GridDensity]


# ---------------------------------------------------------------------------
# operations


def density_eval(model: DensityModel, v):
    return model.pdf(v)


@dataclass(frozen=True)
class DominationCheck:
    c_hat: float
    ok: bool
    c_exact: float | None = None
    argmax: float = 0.0


def default_domination_grid(vmax: float = 1e4, points: int = 4001) -> np.ndarray:
    pos = np.logspace(-4, np.log10(vmax), points)
    return np.concatenate([-pos[::-1], [0.0], pos])


def check_cauchy_domination(model: DensityModel, v_grid=None, growth_tol: float = 1e-2) -> DominationCheck:
    """Estimate C = sup rho(v)(1 + v^2).

    The check fails (ok=False) when the weighted density is still growing
    over the outermost decade of the grid on either side.
    """
    v = default_domination_grid() if v_grid is None else np.sort(np.asarray(v_grid, dtype=float))
    w = np.asarray(model.pdf(v), dtype=float) * (1.0 + v * v)
    i = int(np.argmax(w))
    c_hat = float(w[i])
    ok = bool(np.isfinite(c_hat))
    vmax = np.max(np.abs(v))
    for side in (-1.0, 1.0):
        outer = side * vmax
        inner = side * vmax / 10.0
        w_out = float(model.pdf(np.array([outer]))[0]) * (1 + outer**2)
        w_in = float(model.pdf(np.array([inner]))[0]) * (1 + inner**2)
        if w_in > 0 and w_out > w_in * (1.0 + growth_tol):
            ok = False
    c_exact = None
    if isinstance(model, (Gaussian, Cauchy)):
        c_exact = _domination_constant_exact(model)
        c_hat = max(c_hat, c_exact)
    return DominationCheck(c_hat, ok, c_exact, float(v[i]))


def _domination_constant_exact(model: Gaussian | Cauchy) -> float:
    """Maximize rho(v)(1+v^2) over the whole line (v = tan(theta)) and refine."""
    f = lambda th: -float(model.pdf(np.array([np.tan(th)]))[0]) * (1.0 + np.tan(th) ** 2)
    thetas = np.linspace(-np.pi / 2, np.pi / 2, 20001)[1:-1]
    x = np.tan(thetas)
    vals = model.pdf(x) * (1.0 + x * x)
    i = int(np.argmax(vals))
    lo, hi = thetas[max(i - 1, 0)], thetas[min(i + 1, thetas.size - 1)]
    res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    limit = model.sigma / np.pi if isinstance(model, Cauchy) else 0.0
    return float(max(-res.fun, vals[i], limit))


def sample_potential(model: DensityModel | Sequence[DensityModel], count: int, seed) -> np.ndarray:
    """i.i.d. potential values; a per-site list of models gives independent, non-identical sites."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if isinstance(model, DensityModel):
        return np.asarray(model.sample(rng, count), dtype=float)
    models = list(model)
    if len(models) != count:
        raise ValueError("per-site model list must have one entry per site")
    out = np.empty(count)
    for i, m in enumerate(models):
        out[i] = m.sample(rng, 1)[0]
    return out
