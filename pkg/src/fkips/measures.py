"""Finite-state measure algebra.

Probability vectors, row-stochastic kernels, total variation, Dobrushin
ergodic coefficients and Boltzmann-Gibbs reweighting.  This is the exact
ground-truth layer everything else builds on: states are plain indices
``0..d-1``, weights are dense float64 vectors, and every operation is a pure
function of immutable value objects.

Conventions
-----------
* ``total_variation(mu, nu)`` is the subset-sup distance, computed as half
  the L1 distance of the weight vectors (the two are identical on finite
  spaces; the exponential subset enumeration is kept as an independent
  oracle in the test suite).
* ``dobrushin(K)`` is the worst-case total variation between rows of ``K``;
  it is sub-multiplicative under kernel composition and contracts both
  measure pairs and function oscillations.
* ``bg_transform(G, mu)`` reweights ``mu`` by the positive function ``G``
  and renormalizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMeasureError, InputError

# Rejection gate for weight sums before exact renormalization; keeps
# accumulated floating-point drift out of oracle products.
SUM_TOLERANCE = 1e-9


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1 or arr.size == 0:
        raise InputError(f"{name} must be a non-empty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} must contain only finite values")
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Probability vector over states ``0..d-1``.

    Weights must be non-negative and sum to 1 within ``SUM_TOLERANCE``;
    they are renormalized exactly on construction.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = _as_vector(self.weights, "weights")
        if np.any(w < 0):
            raise InputError("weights must be non-negative")
        s = w.sum()
        if abs(s - 1.0) > SUM_TOLERANCE:
            raise InputError(f"weights sum to {s!r}, expected 1 within {SUM_TOLERANCE}")
        object.__setattr__(self, "weights", _freeze(w / s))

    @classmethod
    def from_unnormalized(cls, weights) -> "FiniteDistribution":
        """Normalize any non-negative vector with positive total mass."""
        w = _as_vector(weights, "weights")
        if np.any(w < 0):
            raise InputError("weights must be non-negative")
        s = w.sum()
        if s <= 0:
            raise DegenerateMeasureError("total mass is zero")
        return cls(w / s)

    @classmethod
    def uniform(cls, dim: int) -> "FiniteDistribution":
        if dim < 1:
            raise InputError("dim must be >= 1")
        return cls(np.full(dim, 1.0 / dim))

    @classmethod
    def dirac(cls, dim: int, state: int) -> "FiniteDistribution":
        if not 0 <= state < dim:
            raise InputError("dirac state out of range")
        w = np.zeros(dim)
        w[state] = 1.0
        return cls(w)

    @property
    def dim(self) -> int:
        return self.weights.size

    def expect(self, values) -> float:
        """Integral of a per-state value table against the distribution."""
        v = np.asarray(values, dtype=np.float64)
        if v.shape != self.weights.shape:
            raise InputError("value table dimension mismatch")
        return float(self.weights @ v)

    def push(self, kernel: "KernelMatrix") -> "FiniteDistribution":
        """Push-forward ``mu . K``."""
        if kernel.dim != self.dim:
            raise InputError("kernel dimension mismatch")
        return FiniteDistribution(self.weights @ kernel.rows)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Row-stochastic Markov transition matrix on ``0..d-1``."""

    rows: np.ndarray

    def __post_init__(self):
        m = np.array(self.rows, dtype=np.float64, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise InputError("kernel must be a non-empty square matrix")
        if not np.all(np.isfinite(m)):
            raise InputError("kernel must contain only finite values")
        if np.any(m < 0):
            raise InputError("kernel entries must be non-negative")
        sums = m.sum(axis=1)
        bad = np.abs(sums - 1.0) > SUM_TOLERANCE
        if np.any(bad):
            raise InputError(
                f"kernel rows {np.flatnonzero(bad).tolist()} are not stochastic"
            )
        object.__setattr__(self, "rows", _freeze(m / sums[:, None]))

    @classmethod
    def identity(cls, dim: int) -> "KernelMatrix":
        return cls(np.eye(dim))

    @classmethod
    def constant(cls, target: FiniteDistribution) -> "KernelMatrix":
        """Rank-one kernel sending every state to ``target``."""
        return cls(np.tile(target.weights, (target.dim, 1)))

    @classmethod
    def uniform(cls, dim: int) -> "KernelMatrix":
        return cls.constant(FiniteDistribution.uniform(dim))

    @classmethod
    def lazy_ring(cls, dim: int, stay: float = 0.5) -> "KernelMatrix":
        """Nearest-neighbour ring walk holding in place with probability ``stay``."""
        if not 0.0 <= stay < 1.0:
            raise InputError("stay probability must lie in [0, 1)")
        move = (1.0 - stay) / 2.0
        m = np.zeros((dim, dim))
        for x in range(dim):
            m[x, x] += stay
            m[x, (x + 1) % dim] += move
            m[x, (x - 1) % dim] += move
        return cls(m)

    @property
    def dim(self) -> int:
        return self.rows.shape[0]

    def row(self, state: int) -> FiniteDistribution:
        return FiniteDistribution(self.rows[state])

    def compose(self, other: "KernelMatrix") -> "KernelMatrix":
        """Kernel composition ``K1 . K2`` (apply self first)."""
        if other.dim != self.dim:
            raise InputError("kernel dimension mismatch")
        return KernelMatrix(self.rows @ other.rows)

    def power(self, exponent: int) -> "KernelMatrix":
        """Iterated kernel ``K^m`` via binary powering.

        Every intermediate product is row-renormalized: raw repeated squaring
        lets the row-sum roundoff compound geometrically in the exponent,
        which matters for the astronomically iterated annealing kernels.
        """
        if exponent < 0:
            raise InputError("kernel exponent must be >= 0")
        result = np.eye(self.dim)
        base = np.array(self.rows)
        e = int(exponent)
        while e > 0:
            if e & 1:
                result = result @ base
                result /= result.sum(axis=1, keepdims=True)
            e >>= 1
            if e:
                base = base @ base
                base /= base.sum(axis=1, keepdims=True)
        return KernelMatrix(result)

    def apply(self, values) -> np.ndarray:
        """Function image ``K.f`` as a per-state vector."""
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (self.dim,):
            raise InputError("function table dimension mismatch")
        return self.rows @ v


@dataclass(frozen=True, eq=False)
class PotentialVector:
    """Strictly positive per-state fitness table."""

    values: np.ndarray

    def __post_init__(self):
        v = _as_vector(self.values, "potential values")
        if np.any(v <= 0):
            raise InputError("potential values must be strictly positive")
        object.__setattr__(self, "values", _freeze(v))

    @classmethod
    def constant(cls, dim: int, value: float = 1.0) -> "PotentialVector":
        return cls(np.full(dim, float(value)))

    @classmethod
    def boltzmann(cls, v_table, delta: float) -> "PotentialVector":
        """Annealing potential ``exp(-delta * V)`` for an energy table ``V``."""
        v = _as_vector(v_table, "energy table")
        return cls(np.exp(-float(delta) * v))

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class BoundedFunction:
    """Finite real-valued per-state test function."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(_as_vector(self.values, "values")))

    @property
    def dim(self) -> int:
        return self.values.size


def total_variation(mu: FiniteDistribution, nu: FiniteDistribution) -> float:
    """Sup over subsets A of ``|mu(A) - nu(A)|``, as half the L1 distance."""
    if mu.dim != nu.dim:
        raise InputError("distribution dimension mismatch")
    return 0.5 * float(np.abs(mu.weights - nu.weights).sum())


def tv_weights(w1: np.ndarray, w2: np.ndarray) -> float:
    """Half-L1 distance of raw weight vectors (internal fast path)."""
    return 0.5 * float(np.abs(w1 - w2).sum())


def dobrushin(kernel: KernelMatrix) -> float:
    """Dobrushin ergodic coefficient: worst-case row total variation.

    Satisfies ``dobrushin(K1.K2) <= dobrushin(K1) * dobrushin(K2)`` and
    contracts both ``osc(K.f)`` and ``tv(mu.K, nu.K)``.
    """
    rows = kernel.rows
    d = rows.shape[0]
    if d <= 256:
        diffs = np.abs(rows[:, None, :] - rows[None, :, :]).sum(axis=2)
        return 0.5 * float(diffs.max())
    best = 0.0
    for x in range(d):
        best = max(best, float(np.abs(rows[x + 1 :] - rows[x]).sum(axis=1).max(initial=0.0)))
    return 0.5 * best


def bg_transform(potential: PotentialVector, mu: FiniteDistribution) -> FiniteDistribution:
    """Boltzmann-Gibbs reweighting: weights proportional to ``G(x) * mu(x)``."""
    if potential.dim != mu.dim:
        raise InputError("potential dimension mismatch")
    w = potential.values * mu.weights
    s = w.sum()
    if s <= 0:
        raise DegenerateMeasureError("mu(G) = 0: reweighting undefined")
    return FiniteDistribution(w / s)


def osc(f) -> float:
    """Oscillation ``max(f) - min(f)`` of a per-state table."""
    v = f.values if isinstance(f, (BoundedFunction, PotentialVector)) else None
    if v is None:
        v = _as_vector(f, "function values")
    return float(v.max() - v.min())


def potential_ratio(potential) -> float:
    """Worst-case ratio ``max(G) / min(G)`` of a strictly positive table."""
    v = potential.values if isinstance(potential, PotentialVector) else _as_vector(
        potential, "potential values"
    )
    lo = float(v.min())
    if lo <= 0:
        raise InputError("potential values must be strictly positive")
    return float(v.max()) / lo
