"""Dyadic hierarchy on N_0: ultrametric distance, block averaging and the
hierarchical Laplacian.

Sites of the finite volume are the integers 0 <= j < 2**n.  Level-r blocks are
the dyadic ranges [2**r * floor(j / 2**r), 2**r * (floor(j / 2**r) + 1)).

The fast operators work along the last axis, so a stack of vectors of shape
(..., 2**n) is handled in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_DENSE_CAP = 4096


class LevelError(ValueError):
    """Averaging level outside 0..n."""


class ResourceError(RuntimeError):
    """Requested dense object exceeds the configured size cap."""


def hier_distance(j: int, k: int) -> int:
    """Smallest r with floor(j / 2**r) == floor(k / 2**r)."""
    if j < 0 or k < 0:
        raise ValueError("sites are non-negative integers")
    return (int(j) ^ int(k)).bit_length()


def distance_matrix(n: int) -> np.ndarray:
    """All pairwise distances d(j, k) on B_n as an int array."""
    idx = np.arange(2**n, dtype=np.int64)
    x = idx[:, None] ^ idx[None, :]
    # bit_length via log2, exact for n far below 53
    out = np.zeros_like(x)
    nz = x > 0
    out[nz] = np.floor(np.log2(x[nz])).astype(np.int64) + 1
    return out


def shell_of(n: int, j: int = 0) -> np.ndarray:
    """d(j, k) for every k in B_n."""
    k = np.arange(2**n, dtype=np.int64) ^ int(j)
    out = np.zeros(2**n, dtype=np.int64)
    nz = k > 0
    out[nz] = np.floor(np.log2(k[nz])).astype(np.int64) + 1
    return out


def ball(r: int, j: int) -> range:
    """B_r(j) as an index range."""
    start = (j >> r) << r
    return range(start, start + (1 << r))


def _scale_of(psi: np.ndarray) -> int:
    size = psi.shape[-1]
    n = size.bit_length() - 1
    if size != 1 << n:
        raise ValueError(f"vector length {size} is not a power of two")
    return n


def apply_averaging(r: int, psi) -> np.ndarray:
    """E_r psi: replace every entry by the mean over its level-r block."""
    psi = np.asarray(psi, dtype=float)
    n = _scale_of(psi)
    if not 0 <= r <= n:
        raise LevelError(f"level r={r} outside 0..{n}")
    if r == 0:
        return psi.copy()
    lead = psi.shape[:-1]
    means = psi.reshape(*lead, -1, 1 << r).mean(axis=-1, keepdims=True)
    return np.broadcast_to(means, (*lead, psi.shape[-1] >> r, 1 << r)).reshape(psi.shape).copy()


def apply_projection(r: int, psi) -> np.ndarray:
    """P_r psi = (E_r - E_{r+1}) psi, with E_{n+1} read as 0."""
    psi = np.asarray(psi, dtype=float)
    n = _scale_of(psi)
    if r == n:
        return apply_averaging(n, psi)
    return apply_averaging(r, psi) - apply_averaging(r + 1, psi)


@dataclass(frozen=True)
class Mode:
    """Finite-volume restriction of the Laplacian.

    ``truncate=None`` is the tail-corrected H_n (levels 1..n plus alpha_n on
    the constant vector); an integer m gives the truncation sum_{r<=m} p_r E_r.
    """

    truncate: int | None = None

    @property
    def tail_corrected(self) -> bool:
        return self.truncate is None

    def top(self, n: int) -> int:
        m = n if self.truncate is None else self.truncate
        if not 0 <= m <= n:
            raise LevelError(f"truncation m={m} outside 0..{n}")
        return m

    def child(self) -> "Mode":
        if self.truncate is None:
            return self
        # a level-0 truncation has no hopping left and stays so
        return Mode(max(self.truncate - 1, 0))

    def __str__(self) -> str:
        return "tail_corrected" if self.truncate is None else f"truncated({self.truncate})"


TAIL_CORRECTED = Mode()


def truncated(m: int) -> Mode:
    return Mode(int(m))


@dataclass(frozen=True)
class HoppingModel:
    """Hopping sequence p_1, p_2, ... and the volume scale n.

    Geometric kind: p_r = eps * 2**(-c r).  Explicit kind: p_r = values[r-1]
    for r <= len(values) and 0 beyond; the declared (eps, c) envelope
    |p_r| <= eps * 2**(-c r) is checked on construction and bounds the
    truncation remainder of alpha_n.
    """

    n: int
    eps: float
    c: float
    values: tuple[float, ...] | None = None
    _check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("volume scale n must be non-negative")
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"decay exponent c={self.c} must be positive: the hopping sequence must be summable")
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise ValueError(f"hopping strength eps={self.eps} must be positive")
        if self.values is not None:
            vals = tuple(float(v) for v in self.values)
            object.__setattr__(self, "values", vals)
            if self._check:
                for r, v in enumerate(vals, start=1):
                    if not math.isfinite(v) or abs(v) > self.eps * 2.0 ** (-self.c * r) * (1 + 1e-12):
                        raise ValueError(
                            f"explicit hopping p_{r}={v} violates |p_r| <= eps*2^(-c r) "
                            f"with eps={self.eps}, c={self.c}"
                        )

    @classmethod
    def geometric(cls, eps: float, c: float, n: int) -> "HoppingModel":
        return cls(n=n, eps=float(eps), c=float(c))

    @classmethod
    def explicit(cls, values: Sequence[float], n: int, eps: float | None = None, c: float | None = None) -> "HoppingModel":
        """Explicit sequence; without a declared envelope, (eps, c) = (max_r |p_r| 2^r, 1)."""
        values = tuple(float(v) for v in values)
        if c is None:
            c = 1.0
        if eps is None:
            eps = max([abs(v) * 2.0 ** (c * r) for r, v in enumerate(values, start=1)] + [1e-300])
        return cls(n=n, eps=float(eps), c=float(c), values=values)

    @property
    def is_geometric(self) -> bool:
        return self.values is None

    def p(self, r: int) -> float:
        if r < 1:
            raise LevelError("hopping levels start at r=1")
        if self.values is None:
            return self.eps * 2.0 ** (-self.c * r)
        return self.values[r - 1] if r <= len(self.values) else 0.0

    def prefix(self, m: int | None = None) -> np.ndarray:
        """(p_1, ..., p_m); m defaults to n."""
        m = self.n if m is None else m
        return np.array([self.p(r) for r in range(1, m + 1)], dtype=float)

    def partial_sum(self, r: int) -> float:
        """lambda_r = p_1 + ... + p_r."""
        return float(np.sum(self.prefix(r))) if r > 0 else 0.0

    def lambda_inf(self) -> float:
        if self.values is None:
            q = 2.0 ** (-self.c)
            return self.eps * q / (1.0 - q)
        return float(sum(self.values))

    def alpha(self, n: int | None = None) -> float:
        """Tail coefficient alpha_n = sum_{r>n} 2^{n-r} p_r."""
        n = self.n if n is None else n
        if self.values is None:
            q = 2.0 ** (-(1.0 + self.c))
            return self.eps * 2.0 ** (-self.c * n) * q / (1.0 - q)
        return float(sum(2.0 ** (n - r) * v for r, v in enumerate(self.values, start=1) if r > n))

    def alpha_remainder_bound(self, n: int | None = None) -> float:
        """Bound on the part of alpha_n dropped by truncating an explicit list."""
        if self.values is None:
            return 0.0
        n = self.n if n is None else n
        start = max(len(self.values), n) + 1
        q = 2.0 ** (-(1.0 + self.c))
        return self.eps * 2.0**n * q**start / (1.0 - q)

    def shifted(self) -> "HoppingModel":
        """Renormalized hopping (p_{r+1})_r at scale n-1."""
        if self.n < 1:
            raise LevelError("cannot renormalize a scale-0 hopping model")
        if self.values is None:
            return HoppingModel(n=self.n - 1, eps=self.eps * 2.0 ** (-self.c), c=self.c)
        return HoppingModel(n=self.n - 1, eps=self.eps * 2.0 ** (-self.c), c=self.c,
                            values=self.values[1:], _check=False)

    def at_scale(self, n: int) -> "HoppingModel":
        return HoppingModel(n=n, eps=self.eps, c=self.c, values=self.values, _check=False)

    def level_coefficients(self, mode: Mode = TAIL_CORRECTED) -> np.ndarray:
        """Coefficient of E_r for r = 0..n in the chosen finite-volume Laplacian."""
        n = self.n
        m = mode.top(n)
        coef = np.zeros(n + 1)
        coef[1 : m + 1] = self.prefix(m)
        if mode.tail_corrected:
            coef[n] += self.alpha(n)
        return coef


def apply_laplacian(h: HoppingModel, mode: Mode, psi) -> np.ndarray:
    """Matrix-free sum_r coef_r E_r psi in O(2**n).

    One bottom-up pass builds block sums at every level, one top-down pass
    accumulates the weighted block means.
    """
    psi = np.asarray(psi, dtype=float)
    n = _scale_of(psi)
    if n != h.n:
        raise ValueError(f"vector of scale {n} for a hopping model at scale {h.n}")
    if not np.all(np.isfinite(psi)):
        raise ValueError("non-finite entries in input vector")
    coef = h.level_coefficients(mode)
    out = np.multiply(psi, coef[0])
    if n == 0:
        return out
    sums = [psi]
    for _ in range(n):
        prev = sums[-1]
        sums.append(np.add(prev[..., 0::2], prev[..., 1::2]))
    acc = np.zeros((*psi.shape[:-1], 1))
    for r in range(n, 1, -1):
        acc = np.repeat(acc + (coef[r] * 2.0**-r) * sums[r], 2, axis=-1)
    acc += (coef[1] * 0.5) * sums[1]
    # the finest level is added through a strided view to avoid one full-size temporary
    out[..., 0::2] += acc
    out[..., 1::2] += acc
    return out


def assemble_dense_laplacian(h: HoppingModel, mode: Mode = TAIL_CORRECTED, dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Dense matrix with entries sum_{r >= max(1, d(j,k))} coef_r 2^{-r}."""
    size = 2**h.n
    if size > dense_cap:
        raise ResourceError(f"dense Laplacian of size {size} exceeds cap {dense_cap}")
    coef = h.level_coefficients(mode)
    weights = coef * 2.0 ** -np.arange(h.n + 1)
    # tail[d] = sum_{r >= d} weights[r]; coef[0] is non-zero only for the n=0 tail term
    tail = np.cumsum(weights[::-1])[::-1]
    return tail[distance_matrix(h.n)]


def laplacian_eigensystem(h: HoppingModel, mode: Mode = TAIL_CORRECTED) -> list[tuple[float, int]]:
    """Closed-form spectrum as (eigenvalue, multiplicity) per level.

    The level-r eigenspace is the range of P_r; for r < m it has dimension
    2^{n-r-1} and eigenvalue lambda_r, the top level m carries the remaining
    2^{n-m}-dimensional range of E_m.  Levels are not merged when values tie.
    """
    n = h.n
    m = mode.top(n)
    coef = h.level_coefficients(mode)
    lam = coef[0] + np.concatenate([[0.0], np.cumsum(coef[1 : m + 1])])
    out = [(float(lam[r]), 2 ** (n - r - 1)) for r in range(m)]
    out.append((float(lam[m]), 2 ** (n - m)))
    return out


def expand_spectrum(pairs: list[tuple[float, int]]) -> np.ndarray:
    return np.sort(np.concatenate([np.full(mult, val) for val, mult in pairs]))
