"""Finite-volume Hamiltonians H_n and H_{n,m}: assembly, eigensolves, resolvent entries."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .disorder import DensityModel, sample_potential
from .hierarchy import (
    DEFAULT_DENSE_CAP,
    TAIL_CORRECTED,
    HoppingModel,
    Mode,
    ResourceError,
    apply_laplacian,
    assemble_dense_laplacian,
)

DEGENERACY_RTOL = 1e-12
ORTHO_TOL = 1e-10


class EigensolverError(RuntimeError):
    def __init__(self, msg: str, seed=None):
        super().__init__(f"{msg} (seed={seed})")
        self.seed = seed


class ConditioningError(ArithmeticError):
    def __init__(self, msg: str, seed=None):
        super().__init__(f"{msg} (seed={seed})")
        self.seed = seed


class DegenerateSpectrumWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Realization:
    potential: np.ndarray
    seed: int | None = None


def phi_vector(n: int) -> np.ndarray:
    """Maximally delocalized unit vector 2^{-n/2} 1 on B_n."""
    return np.full(2**n, 2.0 ** (-n / 2))


@dataclass(frozen=True, eq=False)
class HamiltonianSystem:
    """H = Laplacian(mode) + V on B_n, seen at energy E (all spectral data refer to H - E)."""

    hopping: HoppingModel
    mode: Mode
    potential: np.ndarray
    energy: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        v = np.asarray(self.potential, dtype=float)
        if v.ndim != 1 or v.size != 2**self.hopping.n:
            raise ValueError(f"potential of length {v.size} for volume 2^{self.hopping.n}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite potential values")
        self.mode.top(self.hopping.n)
        v.setflags(write=False)
        object.__setattr__(self, "potential", v)

    @property
    def n(self) -> int:
        return self.hopping.n

    @property
    def size(self) -> int:
        return 2**self.hopping.n

    @property
    def shifted_potential(self) -> np.ndarray:
        return self.potential - self.energy

    def at_energy(self, energy: float) -> "HamiltonianSystem":
        return HamiltonianSystem(self.hopping, self.mode, self.potential, float(energy), self.seed)

    def matvec(self, psi) -> np.ndarray:
        """(H - E) psi without forming the matrix."""
        psi = np.asarray(psi, dtype=float)
        return apply_laplacian(self.hopping, self.mode, psi) + self.shifted_potential * psi

    def dense(self, dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        mat = assemble_dense_laplacian(self.hopping, self.mode, dense_cap)
        mat[np.diag_indices_from(mat)] += self.shifted_potential
        return mat

    def blocks(self) -> list["HamiltonianSystem"]:
        """Independent H_{m,m} blocks of a truncated H_{n,m}; the whole system otherwise."""
        if self.mode.tail_corrected or self.mode.truncate == self.n:
            return [self]
        m = self.mode.truncate
        h = self.hopping.at_scale(m)
        size = 2**m
        return [
            HamiltonianSystem(h, Mode(m), self.potential[b * size : (b + 1) * size], self.energy, self.seed)
            for b in range(2 ** (self.n - m))
        ]


def assemble(h: HoppingModel, mode: Mode, potential, energy: float = 0.0, seed=None) -> HamiltonianSystem:
    return HamiltonianSystem(h, mode, np.asarray(potential, dtype=float), float(energy), seed)


def random_system(model: DensityModel, h: HoppingModel, mode: Mode = TAIL_CORRECTED, seed=None,
                  energy: float = 0.0) -> HamiltonianSystem:
    """One realization with i.i.d. potential drawn from ``model``."""
    v = sample_potential(model, 2**h.n, seed)
    return HamiltonianSystem(h, mode, v, float(energy), seed if isinstance(seed, (int, np.integer)) else None)


@dataclass(frozen=True, eq=False)
class SpectralData:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    seed: int | None = None
    degenerate_pairs: int = 0

    @property
    def degenerate(self) -> bool:
        return self.degenerate_pairs > 0

    def __len__(self) -> int:
        return self.eigenvalues.size


def _count_ties(lam: np.ndarray, norm: float) -> int:
    if lam.size < 2:
        return 0
    return int(np.sum(np.diff(lam) < DEGENERACY_RTOL * max(norm, 1e-300)))


def _eigh(mat: np.ndarray, seed, **kw):
    try:
        return sla.eigh(mat, check_finite=False, **kw)
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise EigensolverError(f"eigensolver failed: {exc}", seed) from exc


def diagonalize(sys: HamiltonianSystem, dense_cap: int = DEFAULT_DENSE_CAP, check: bool = True,
                warn_ties: bool = True) -> SpectralData:
    """Full eigensystem of H - E with ascending eigenvalues.

    Near-degenerate neighbours (gap below 1e-12 ||H||) are counted and warned
    about; callers computing gap statistics should drop such realizations.
    """
    mat = sys.dense(dense_cap)
    lam, vec = _eigh(mat, sys.seed)
    if check:
        err = np.max(np.abs(vec.T @ vec - np.eye(lam.size)))
        if err > ORTHO_TOL:
            raise EigensolverError(f"eigenvectors not orthonormal (error {err:.2e})", sys.seed)
    norm = float(np.max(np.abs(lam))) if lam.size else 0.0
    ties = _count_ties(lam, norm)
    if ties and warn_ties:
        warnings.warn(f"{ties} near-degenerate eigenvalue gaps (seed={sys.seed})", DegenerateSpectrumWarning, stacklevel=2)
    return SpectralData(lam, vec, sys.seed, ties)


def diagonalize_blocks(sys: HamiltonianSystem, dense_cap: int = DEFAULT_DENSE_CAP) -> list[SpectralData]:
    """Per-block eigensystems of a block-diagonal H_{n,m}.  Only each block must fit the cap."""
    return [diagonalize(b, dense_cap) for b in sys.blocks()]


def eigenvalues_in(sys: HamiltonianSystem, lo: float, hi: float, dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Eigenvalues of H - E in the half-open interval (lo, hi], block by block."""
    out = []
    for b in sys.blocks():
        lam = _eigh(b.dense(dense_cap), sys.seed, eigvals_only=True, subset_by_value=(lo, hi), driver="evr")
        out.append(lam)
    return np.sort(np.concatenate(out)) if out else np.empty(0)


def green_column(sys: HamiltonianSystem, j: int, z: complex | float = 0.0,
                 dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """x = (H - E - z)^{-1} delta_j by a pivoted dense solve."""
    mat = sys.dense(dense_cap)
    if np.iscomplexobj(z) or isinstance(z, complex):
        z = complex(z)
        if z.imag == 0:
            z = z.real
    if isinstance(z, complex):
        mat = mat.astype(complex)
    mat[np.diag_indices_from(mat)] -= z
    rhs = np.zeros(sys.size, dtype=mat.dtype)
    rhs[j] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            return sla.solve(mat, rhs, assume_a="sym" if not isinstance(z, complex) else "gen", check_finite=False)
        except (sla.LinAlgWarning, sla.LinAlgError, np.linalg.LinAlgError) as exc:
            raise ConditioningError(f"H - z numerically singular at z={z}: {exc}", sys.seed) from exc


def green_entry(sys: HamiltonianSystem, j: int, k: int, z: complex | float = 0.0,
                dense_cap: int = DEFAULT_DENSE_CAP):
    """<delta_k, (H - E - z)^{-1} delta_j>."""
    return green_column(sys, j, z, dense_cap)[k]


def green_entry_spectral(sd: SpectralData, j: int, k: int, z: complex | float = 0.0):
    """Same entry from an eigendecomposition: sum psi(j) psi(k) / (lambda - z)."""
    return np.sum(sd.eigenvectors[j] * sd.eigenvectors[k] / (sd.eigenvalues - z))


def quadratic_form_inverse(sys: HamiltonianSystem, phi, psi, dense_cap: int = DEFAULT_DENSE_CAP) -> float:
    """<phi, (H - E)^{-1} psi> by a dense solve."""
    mat = sys.dense(dense_cap)
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            x = sla.solve(mat, np.asarray(psi, dtype=float), assume_a="sym", check_finite=False)
        except (sla.LinAlgWarning, sla.LinAlgError, np.linalg.LinAlgError) as exc:
            raise ConditioningError(f"H - E numerically singular: {exc}", sys.seed) from exc
    return float(np.dot(phi, x))


def operator_norm_bound(sys: HamiltonianSystem) -> float:
    """Cheap bound on ||H - E||: Laplacian norm plus sup |V - E|."""
    coef = sys.hopping.level_coefficients(sys.mode)
    return float(np.sum(np.abs(coef)) + np.max(np.abs(sys.shifted_potential)))


__all__ = [
    "ConditioningError",
    "DegenerateSpectrumWarning",
    "EigensolverError",
    "HamiltonianSystem",
    "Realization",
    "ResourceError",
    "SpectralData",
    "assemble",
    "diagonalize",
    "diagonalize_blocks",
    "eigenvalues_in",
    "green_column",
    "green_entry",
    "green_entry_spectral",
    "phi_vector",
    "quadratic_form_inverse",
    "random_system",
]
