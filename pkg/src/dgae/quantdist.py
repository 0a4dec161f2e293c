"""Quantile-function representation of return distributions.

A distribution with N atoms is stored as its inverse CDF sampled at the
midpoint fractions ``q_i = (2i + 1) / (2N)``. Integrals over ``q in [0, 1]``
become uniform averages over those N values, which is exact for the atomic
distributions a quantile network produces.

The metric functions accept either :class:`QuantileDistribution` instances or
plain arrays whose last axis holds the quantiles, so the same code path serves
single comparisons and whole rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

DEFAULT_N_QUANTILES = 64


class DimensionError(ValueError):
    """Two quantile vectors with different N were combined."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


def midpoint_fractions(n: int) -> np.ndarray:
    """Return the N midpoint quantile fractions ``(2i + 1) / (2N)``."""
    if n < 1:
        raise DomainError(f"need at least one quantile, got n={n}")
    return (2.0 * np.arange(n) + 1.0) / (2.0 * n)


@dataclass(frozen=True, eq=False)
class QuantileDistribution:
    """Inverse CDF of a return distribution at N midpoint fractions."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size < 1:
            raise DomainError("a quantile distribution needs at least one value")
        if not np.all(np.isfinite(values)):
            raise DomainError("quantile values must be finite")
        if np.any(np.diff(values) < 0):
            raise DomainError("quantile values must be nondecreasing")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def fractions(self) -> np.ndarray:
        return midpoint_fractions(self.n)

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantileDistribution):
            return NotImplemented
        return self.n == other.n and bool(np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"QuantileDistribution({np.array2string(self.values, precision=6)})"

    @classmethod
    def point_mass(cls, value: float, n: int = 1) -> "QuantileDistribution":
        return cls(np.full(n, float(value)))

    @classmethod
    def zeros(cls, n: int) -> "QuantileDistribution":
        return cls(np.zeros(n))

    @classmethod
    def from_samples(cls, samples, n: int | None = None) -> "QuantileDistribution":
        """Empirical inverse CDF of ``samples`` at the N midpoint fractions.

        Sorts ascending and picks the order statistic ``x_(ceil(q M))``, the
        smallest sample whose empirical CDF reaches ``q``. With ``n=None`` all
        M order statistics are kept.
        """
        x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
        if x.size == 0:
            raise DomainError("cannot build a distribution from zero samples")
        if n is None:
            return cls(x)
        ranks = np.ceil(midpoint_fractions(n) * x.size).astype(int) - 1
        return cls(x[np.clip(ranks, 0, x.size - 1)])

    @classmethod
    def from_atoms(cls, atoms, probs, n: int) -> "QuantileDistribution":
        """Midpoint quantiles of a discrete law given as atoms and probabilities."""
        atoms = np.asarray(atoms, dtype=float)
        probs = np.asarray(probs, dtype=float)
        order = np.argsort(atoms, kind="stable")
        atoms, probs = atoms[order], probs[order]
        cdf = np.cumsum(probs)
        cdf /= cdf[-1]
        # smallest atom u with F(u) >= q
        idx = np.searchsorted(cdf, midpoint_fractions(n), side="left")
        return cls(atoms[np.clip(idx, 0, atoms.size - 1)])

    def to_csv_line(self) -> str:
        return ",".join(repr(float(v)) for v in self.values)

    @classmethod
    def from_csv_line(cls, line: str) -> "QuantileDistribution":
        return cls(np.array([float(tok) for tok in line.strip().split(",")]))


QuantileLike = Union[QuantileDistribution, np.ndarray]


def _as_array(F) -> np.ndarray:
    if isinstance(F, QuantileDistribution):
        return F.values
    return np.asarray(F, dtype=float)


def _check_same_n(a: np.ndarray, b: np.ndarray):
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(
            f"quantile counts differ: {a.shape[-1]} vs {b.shape[-1]}"
        )


def directional_metric(F, G):
    """Signed transport cost from F to G under the linear cost ``L(x) = x``.

    Returns ``mean_i(F[i] - G[i])``. A negative value means G carries more
    mass toward high returns than F; positive means F does. Operates on the
    last axis, so batched arrays give one value per row.
    """
    f, g = _as_array(F), _as_array(G)
    _check_same_n(f, g)
    out = np.mean(f - g, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def scale(F, eta: float):
    """Inverse CDF of ``eta * U`` given the inverse CDF of ``U`` (eta > 0)."""
    if not eta > 0:
        raise DomainError(f"scale factor must be positive, got {eta}")
    if isinstance(F, QuantileDistribution):
        return QuantileDistribution(eta * F.values)
    return eta * np.asarray(F, dtype=float)


def shift(F, c: float):
    if not np.isfinite(c):
        raise DomainError(f"shift must be finite, got {c}")
    if isinstance(F, QuantileDistribution):
        return QuantileDistribution(F.values + c)
    return np.asarray(F, dtype=float) + c


def mean(F):
    out = np.mean(_as_array(F), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def wasserstein_p(F, G, p: float = 1.0):
    """p-Wasserstein distance between two quantile representations."""
    if not p >= 1:
        raise DomainError(f"p must be >= 1, got {p}")
    f, g = _as_array(F), _as_array(G)
    _check_same_n(f, g)
    diff = np.abs(f - g)
    if p == 1:
        out = np.mean(diff, axis=-1)
    else:
        out = np.mean(diff**p, axis=-1) ** (1.0 / p)
    return float(out) if np.ndim(out) == 0 else out
