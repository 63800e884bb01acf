"""Operator-level renormalization.

Pairing sites (2k, 2k+1) into e_k = (d_2k + d_2k+1)/sqrt2 and
f_k = (d_2k - d_2k+1)/sqrt2 splits H_n into an e-block (hopping p_1 + child
Laplacian + V_ee), an f-block V_ff and off-diagonal V_ef.  Eliminating the
f-block leaves a system on B_{n-1} with hopping (p_{r+1}) and potential
RV_k = 2 V_2k V_2k+1 / (V_2k + V_2k+1) + p_1.

Energies are handled by the shift convention: everything below works with
W = V - E and a child at energy 0.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.integrate as si
import scipy.linalg as sla

from .disorder import Cauchy, DensityModel, SeedSchedule, sample_potential
from .hamiltonian import ConditioningError, HamiltonianSystem, green_column, phi_vector
from .hierarchy import DEFAULT_DENSE_CAP, TAIL_CORRECTED, HoppingModel, LevelError, Mode, hier_distance, shell_of

log = logging.getLogger(__name__)

SINGULAR_RTOL = 1e-13


class SingularPairError(ArithmeticError):
    def __init__(self, msg: str, seed=None):
        super().__init__(f"{msg} (seed={seed})")
        self.seed = seed


def _pair_sums(w: np.ndarray):
    a, b = w[0::2], w[1::2]
    return a, b, a + b


def singular_pairs(w: np.ndarray) -> np.ndarray:
    a, b, s = _pair_sums(np.asarray(w, dtype=float))
    return np.abs(s) <= SINGULAR_RTOL * np.maximum(np.abs(a), np.abs(b))


@dataclass(frozen=True, eq=False)
class RenormStep:
    parent: HamiltonianSystem
    child: HamiltonianSystem
    ratios: np.ndarray    # (W_2k - W_2k+1) / (W_2k + W_2k+1)
    v_ff: np.ndarray      # (W_2k + W_2k+1) / 2

    def s_apply(self, psi) -> np.ndarray:
        """S psi = U_e* psi - (V_ef / V_ff) U_f* psi, a vector on B_{n-1}."""
        psi = np.asarray(psi)
        e = (psi[0::2] + psi[1::2]) / math.sqrt(2.0)
        f = (psi[0::2] - psi[1::2]) / math.sqrt(2.0)
        return e - self.ratios * f

    @staticmethod
    def uf_apply(psi) -> np.ndarray:
        psi = np.asarray(psi)
        return (psi[0::2] - psi[1::2]) / math.sqrt(2.0)

    def s_entries(self, j: int) -> float:
        """Coefficient of delta_{j//2} in S delta_j."""
        r = self.ratios[j // 2]
        return (1.0 - r) / math.sqrt(2.0) if j % 2 == 0 else (1.0 + r) / math.sqrt(2.0)


def renormalized_potential(w, p1: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    a, b, s = _pair_sums(w)
    return 2.0 * a * b / s + p1


def first_hopping(sys: HamiltonianSystem) -> float:
    """p_1 if level 1 is part of the operator, else 0."""
    if sys.mode.tail_corrected or sys.mode.truncate >= 1:
        return sys.hopping.p(1)
    return 0.0


def renormalize(sys: HamiltonianSystem) -> RenormStep:
    """One renormalization step; the child inherits the mode one level down."""
    if sys.n < 1:
        raise LevelError("cannot renormalize a scale-0 system")
    w = sys.shifted_potential
    if np.any(singular_pairs(w)):
        raise SingularPairError("site pair with V_2k + V_2k+1 = 0", sys.seed)
    a, b, s = _pair_sums(w)
    child = HamiltonianSystem(
        sys.hopping.shifted(),
        sys.mode.child(),
        2.0 * a * b / s + first_hopping(sys),
        0.0,
        sys.seed,
    )
    return RenormStep(sys, child, (a - b) / s, s / 2.0)


def _ef_unitary(n: int) -> np.ndarray:
    """Columns e_0..e_{N/2-1}, f_0..f_{N/2-1}."""
    size = 2**n
    half = size // 2
    u = np.zeros((size, size))
    k = np.arange(half)
    c = 1.0 / math.sqrt(2.0)
    u[2 * k, k] = c
    u[2 * k + 1, k] = c
    u[2 * k, half + k] = c
    u[2 * k + 1, half + k] = -c
    return u


def block_form(step: RenormStep, dense_cap: int = DEFAULT_DENSE_CAP):
    """(U* H U computed directly, the same matrix assembled from its blocks).

    Blocks: ee = child Laplacian + p_1 + V_ee, ff = V_ff, ef = fe = V_ef.
    """
    parent = step.parent
    u = _ef_unitary(parent.n)
    direct = u.T @ parent.dense(dense_cap) @ u
    child_lap = step.child.dense(dense_cap) - np.diag(step.child.potential)
    w = parent.shifted_potential
    a, b, _ = _pair_sums(w)
    half = parent.size // 2
    built = np.zeros_like(direct)
    built[:half, :half] = child_lap + np.eye(half) * first_hopping(parent) + np.diag((a + b) / 2)
    built[half:, half:] = np.diag((a + b) / 2)
    built[:half, half:] = np.diag((a - b) / 2)
    built[half:, :half] = np.diag((a - b) / 2)
    return direct, built


def schur_complement(step: RenormStep, dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """ee - ef ff^{-1} fe of the e/f block form, computed densely."""
    direct, _ = block_form(step, dense_cap)
    half = step.parent.size // 2
    ee, ef, ff = direct[:half, :half], direct[:half, half:], direct[half:, half:]
    return ee - ef @ np.linalg.solve(ff, ef.T)


def _solve(sys: HamiltonianSystem, rhs, dense_cap: int) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            return sla.solve(sys.dense(dense_cap), rhs, assume_a="sym", check_finite=False)
        except (sla.LinAlgWarning, sla.LinAlgError, np.linalg.LinAlgError) as exc:
            raise ConditioningError(f"scale-{sys.n} system not invertible: {exc}", sys.seed) from exc


def schur_recover(sys: HamiltonianSystem, phi, psi, energy: float | None = None,
                  dense_cap: int = DEFAULT_DENSE_CAP) -> float:
    """<S phi, (RH - E)^{-1} S psi> + <U_f* phi, V_ff^{-1} U_f* psi>.

    Equals <phi, (H - E)^{-1} psi>; the child and V_ff are inverted separately.
    """
    if energy is not None:
        sys = sys.at_energy(energy)
    step = renormalize(sys)
    if np.any(step.v_ff == 0):
        raise ConditioningError("V_ff not invertible", sys.seed)
    s_phi, s_psi = step.s_apply(phi), step.s_apply(psi)
    first = float(np.dot(s_phi, _solve(step.child, s_psi, dense_cap)))
    f_phi, f_psi = step.uf_apply(phi), step.uf_apply(psi)
    return first + float(np.sum(f_phi * f_psi / step.v_ff))


def green_recursion(sys: HamiltonianSystem, j: int, energy: float | None = None,
                    dense_cap: int = DEFAULT_DENSE_CAP, return_depth: bool = False):
    """G_n(0, j; E) through the pair recursion.

    While j is outside the root pair, G(0, j) = s_0 s_j RG(0, j // 2) with
    s_0 = (1 - r_0)/sqrt2 and s_j = (1 -/+ r_{j//2})/sqrt2.  Once j in {0, 1}
    the diagonal RG(0, 0) of the child comes from a direct solve and the
    f-channel adds +-1/(W_0 + W_1).  Depth equals d(0, j) or 1 for j = 0.
    """
    if energy is not None:
        sys = sys.at_energy(energy)
    if not 0 <= j < sys.size:
        raise IndexError(f"site {j} outside B_{sys.n}")
    if sys.n == 0:
        val = 1.0 / sys.dense(dense_cap)[0, 0]
        return (val, 0) if return_depth else val
    factor = 1.0
    depth = 0
    cur = sys
    while True:
        step = renormalize(cur)
        depth += 1
        if j >= 2:
            factor *= step.s_entries(0) * step.s_entries(j)
            j //= 2
            cur = step.child
            continue
        r0 = step.ratios[0]
        w = cur.shifted_potential
        e0 = np.zeros(step.child.size)
        e0[0] = 1.0
        rg00 = float(_solve(step.child, e0, dense_cap)[0])
        f_term = 1.0 / (w[0] + w[1])
        if j == 0:
            val = 0.5 * (1.0 - r0) ** 2 * rg00 + f_term
        else:
            val = 0.5 * (1.0 - r0) * (1.0 + r0) * rg00 - f_term
        val *= factor
        return (val, depth) if return_depth else val


def phi_statistic(sys: HamiltonianSystem, energy: float | None = None, method: str = "fast",
                  dense_cap: int = DEFAULT_DENSE_CAP) -> float:
    """Phi_n(E) = 1 / <phi_n, (H - E)^{-1} phi_n>.

    Since S phi_n = phi_{n-1} and U_f* phi_n = 0, the fast path just
    renormalizes the potential n times and reads off the 1x1 system.
    """
    if energy is not None:
        sys = sys.at_energy(energy)
    if method == "direct":
        phi = phi_vector(sys.n)
        return 1.0 / float(np.dot(phi, _solve(sys, phi, dense_cap)))
    if method != "fast":
        raise ValueError(f"unknown method {method!r}")
    cur = sys
    while cur.n > 0:
        cur = renormalize(cur).child
    coef = cur.hopping.level_coefficients(cur.mode)
    return float(cur.shifted_potential[0] + coef[0])


def phi_statistic_batch(potentials: np.ndarray, h: HoppingModel, energy: float = 0.0,
                        mode: Mode = Mode(None)) -> np.ndarray:
    """Fast-path Phi_n for a stack of potentials of shape (R, 2^n)."""
    w = np.asarray(potentials, dtype=float) - energy
    hop = h
    while w.shape[-1] > 1:
        a, b = w[..., 0::2], w[..., 1::2]
        p1 = hop.p(1) if mode.tail_corrected or mode.truncate >= 1 else 0.0
        w = 2.0 * a * b / (a + b) + p1
        hop = hop.shifted()
        mode = mode.child()
    return w[..., 0] + hop.level_coefficients(mode)[0]


# ---------------------------------------------------------------------------
# ensembles


def draw_potential(model: DensityModel | Sequence[DensityModel], n: int, schedule: SeedSchedule, index: int,
                   energy: float = 0.0, max_attempts: int = 16):
    """Potential for realization ``index`` with no singular pair at any renormalization depth.

    A hit (a null event) is redrawn from a derived sub-seed; returns (potential, seed, redraws).
    """
    sub = schedule.substream(index)
    for attempt in range(max_attempts):
        seed = schedule.derive(index) if attempt == 0 else sub.derive(attempt)
        v = sample_potential(model, 2**n, seed)
        if not _any_singular(v - energy):
            return v, seed, attempt
        log.warning("realization %d: singular pair, redrawing (seed=%d)", index, seed)
    raise SingularPairError(f"realization {index}: no non-singular draw in {max_attempts} attempts")


def _any_singular(w: np.ndarray) -> bool:
    while w.size > 1:
        if np.any(singular_pairs(w)):
            return True
        a, b, s = _pair_sums(w)
        w = 2.0 * a * b / s
    return False


@dataclass
class FractionalMomentTable:
    s: float
    rows: list[dict]          # distance, s, mean, stderr, count
    slope: float
    slope_stderr: float
    mu_hat: float
    warnings: list[str] = field(default_factory=list)

    @property
    def one_plus_mu(self) -> float:
        return -self.slope


def _weighted_slope(x: np.ndarray, y: np.ndarray, sy: np.ndarray):
    w = 1.0 / np.maximum(sy, 1e-300) ** 2
    X = np.vstack([x, np.ones_like(x)]).T
    A = X.T @ (w[:, None] * X)
    coef = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    return float(coef[0]), float(math.sqrt(cov[0, 0])), float(coef[1])


def fractional_moment_scan(model: DensityModel, h: HoppingModel, energy: float, s: float, n: int | None = None,
                           k_list: Sequence[int] | None = None, realizations: int = 200, seed: int = 0,
                           mode: Mode = TAIL_CORRECTED, dense_cap: int = DEFAULT_DENSE_CAP,
                           threads: int = 1) -> FractionalMomentTable:
    """Mean |G_n(0,k;E)|^s per distance shell with a log2-linear decay fit.

    Per realization, every k in ``k_list`` (default: all of B_n) is averaged
    within its shell, so rows are means over realizations of shell averages.
    """
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    if realizations < 100:
        raise ValueError("need at least 100 realizations")
    n = h.n if n is None else n
    h = h.at_scale(n)
    ks = np.arange(2**n) if k_list is None else np.asarray(sorted(set(int(k) for k in k_list)))
    dist = shell_of(n)[ks]
    shells = np.unique(dist)
    schedule = SeedSchedule(seed, stream_id=0xF4)

    def one(i):
        v, sd, _ = draw_potential(model, n, schedule, i, energy)
        sys = HamiltonianSystem(h, mode, v, energy, sd)
        g = np.abs(green_column(sys, 0, 0.0, dense_cap))[ks] ** s
        return np.array([g[dist == d].mean() for d in shells])

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        per = np.array(list(ex.map(one, range(realizations))))
    mean = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / math.sqrt(realizations)
    rows = [{"distance": int(d), "s": s, "mean": float(m), "stderr": float(e), "count": realizations}
            for d, m, e in zip(shells, mean, se)]
    notes = []
    for d, m, e in zip(shells, mean, se):
        if m > 0 and e / m > 0.2:
            notes.append(f"heavy tail: relative stderr {e / m:.2f} at distance {d}")
            warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    fit = shells >= 1
    if fit.sum() >= 2:
        y = np.log2(mean[fit])
        sy = se[fit] / (mean[fit] * math.log(2.0))
        slope, slope_se, _ = _weighted_slope(shells[fit].astype(float), y, sy)
    else:
        slope, slope_se = float("nan"), float("nan")
    return FractionalMomentTable(s, rows, slope, slope_se, -slope - 1.0, notes)


@dataclass(frozen=True)
class DecouplingEstimate:
    s: float
    z: complex
    gamma_grid: np.ndarray
    ratios: np.ndarray       # R(gamma), nan where quadrature was skipped
    D_hat: float
    argmax: complex
    skipped: int


def default_gamma_grid() -> np.ndarray:
    re, im = np.meshgrid(np.linspace(-20, 20, 41), np.linspace(-20, 20, 41))
    square = (re + 1j * im).ravel()
    far = np.logspace(np.log10(25.0), 4, 16).astype(complex)
    return np.concatenate([square, far])


def _line_integral(f, breaks: Sequence[float]) -> float:
    pts = sorted(set(float(b) for b in breaks))
    total = 0.0
    total += si.quad(f, -np.inf, pts[0], limit=200)[0]
    for a, b in zip(pts[:-1], pts[1:]):
        total += si.quad(f, a, b, limit=200)[0]
    total += si.quad(f, pts[-1], np.inf, limit=200)[0]
    return total


def decoupling_ratio(s: float, z: complex, gamma: complex) -> float:
    """R(gamma) = int |v|^s |v-gamma|^{-s} P_z / int |v-gamma|^{-s} P_z."""
    kern = Cauchy.from_z(z)
    g = complex(gamma)
    breaks = [0.0, g.real, kern.mu - kern.sigma, kern.mu + kern.sigma]
    with warnings.catch_warnings():
        warnings.simplefilter("error", si.IntegrationWarning)
        num = _line_integral(lambda v: abs(v) ** s * abs(v - g) ** (-s) * kern.pdf(v), breaks)
        den = _line_integral(lambda v: abs(v - g) ** (-s) * kern.pdf(v), breaks)
    return num / den


def estimate_decoupling(s: float, z: complex, gamma_grid=None, threads: int = 1) -> DecouplingEstimate:
    """Grid lower bound D_hat = max max(R, 1/R) for the decoupling constant."""
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    if not np.imag(z) > 0:
        raise ValueError("need Im z > 0")
    grid = default_gamma_grid() if gamma_grid is None else np.asarray(gamma_grid, dtype=complex)

    def one(g):
        try:
            return decoupling_ratio(s, z, g)
        except si.IntegrationWarning:
            return float("nan")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        ratios = np.array(list(ex.map(one, grid)))
    ok = np.isfinite(ratios) & (ratios > 0)
    if not ok.any():
        raise RuntimeError("decoupling quadrature failed at every grid point")
    score = np.where(ok, np.maximum(ratios, 1.0 / np.where(ok, ratios, 1.0)), -np.inf)
    i = int(np.argmax(score))
    return DecouplingEstimate(s, complex(z), grid, ratios, float(score[i]), complex(grid[i]), int((~ok).sum()))


@dataclass(frozen=True)
class FMInequalityReport:
    lhs: float
    lhs_stderr: float
    rg_moment: float
    rg_stderr: float
    D_hat: float
    rhs: float
    ratio: float          # lhs / E|RG|^s
    chain_bound: float    # 2^s D_hat^2
    verdict: bool
    chain_ok: bool


def fm_inequality_check(z: complex, s: float, n: int, k: int, realizations: int, seed: int = 0,
                        h: HoppingModel | None = None, decoupling: DecouplingEstimate | None = None,
                        threads: int = 1) -> FMInequalityReport:
    """Both sides of E|G_n(0,2k;0)|^s <= D^4 E|RG_{n-1}(0,k;0)|^s with P_z disorder at every site."""
    if not 1 <= k < 2 ** (n - 1):
        raise ValueError("k must lie in B_{n-1} minus the origin")
    h = (h or HoppingModel.geometric(1.0, 1.0, n)).at_scale(n)
    dec = decoupling or estimate_decoupling(s, z, threads=threads)
    model = Cauchy.from_z(z)
    schedule = SeedSchedule(seed, stream_id=0x3C)

    def one(i):
        v, sd, _ = draw_potential(model, n, schedule, i)
        sys = HamiltonianSystem(h, TAIL_CORRECTED, v, 0.0, sd)
        g = green_column(sys, 0)[2 * k]
        step = renormalize(sys)
        rg = green_column(step.child, 0)[k]
        return abs(g) ** s, abs(rg) ** s

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        vals = np.array(list(ex.map(one, range(realizations))))
    m = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(realizations)
    rhs = dec.D_hat**4 * m[1]
    rhs_se = dec.D_hat**4 * se[1]
    verdict = bool(m[0] <= rhs + 2.0 * math.hypot(se[0], rhs_se))
    ratio = float(m[0] / m[1])
    chain = 2.0**s * dec.D_hat**2
    return FMInequalityReport(float(m[0]), float(se[0]), float(m[1]), float(se[1]), dec.D_hat, float(rhs),
                              ratio, chain, verdict, bool(ratio <= chain))
