"""Generic N-particle selection/mutation simulator.

Each step first selects: particle i is kept in place with probability
``eps * G(x_i)`` and otherwise redrawn from the G-weighted empirical measure
of the whole ensemble; then mutates: every particle takes one independent
kernel draw.  The running product of pre-selection mean potentials is an
unbiased estimator of the unnormalized flow mass and is accumulated in log
space.

Randomness is counter-based: every (seed, replicate, step, purpose) tuple
indexes a disjoint Philox stream, and all per-particle draws are vectorized
reads from that stream.  Trajectories therefore depend only on those four
integers, never on scheduling or thread count, and replicates can run in
any order or in parallel with bit-identical results.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ExtinctionError, InputError
from .measures import BoundedFunction, FiniteDistribution, KernelMatrix, PotentialVector

# Fixed second key word; the user seed fills the first.
_KEY_SALT = np.uint64(0x9E3779B97F4A7C15)


class Purpose(IntEnum):
    INIT = 0
    KEEP = 1
    RESAMPLE = 2
    MUTATE = 3


def substream(seed: int, replicate: int, step: int, purpose: int) -> np.random.Generator:
    """Dedicated Philox stream for one (replicate, step, purpose) slot."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), _KEY_SALT], dtype=np.uint64)
    counter = np.array(
        [0, replicate & 0xFFFFFFFFFFFFFFFF, step & 0xFFFFFFFFFFFFFFFF, int(purpose)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """N particle states plus the running log of the mass estimator.

    ``seed``/``replicate``/``step`` are the RNG lineage: all randomness of
    the next transition is a pure function of them.
    """

    states: np.ndarray
    step: int
    log_gamma1: float
    seed: int
    replicate: int = 0

    def __post_init__(self):
        states = np.asarray(self.states)
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def histogram(self, dim: int) -> FiniteDistribution:
        """Occupation measure on a finite space of the given dimension."""
        counts = np.bincount(np.asarray(self.states, dtype=np.int64), minlength=dim)
        return FiniteDistribution(counts / self.size)


class SelectionOutcome:
    """Post-selection ensemble plus the step's selection diagnostics."""

    __slots__ = ("ensemble", "mean_potential", "kept_fraction", "ess")

    def __init__(self, ensemble, mean_potential, kept_fraction, ess):
        self.ensemble = ensemble
        self.mean_potential = mean_potential
        self.kept_fraction = kept_fraction
        self.ess = ess


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    mean_potential: float
    kept_fraction: float
    ess: float
    log_gamma1: float
    wall_time: float
    estimates: tuple = ()


def _potential_values(potential, states: np.ndarray) -> np.ndarray:
    if isinstance(potential, PotentialVector):
        return potential.values[np.asarray(states, dtype=np.int64)]
    if callable(potential):
        vals = np.asarray(potential(states), dtype=np.float64)
        if vals.shape != (states.shape[0],):
            raise InputError("potential evaluator must return one value per particle")
        return vals
    raise InputError("potential must be a PotentialVector or a callable")


def _function_values(f, states: np.ndarray) -> np.ndarray:
    if isinstance(f, BoundedFunction):
        return f.values[np.asarray(states, dtype=np.int64)]
    if isinstance(f, np.ndarray):
        return f[np.asarray(states, dtype=np.int64)]
    if callable(f):
        return np.asarray(f(states), dtype=np.float64)
    raise InputError("test function must be a BoundedFunction, table or callable")


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, cdf.size - 1)


def init_ensemble(eta0, n_particles: int, seed: int, replicate: int = 0) -> ParticleEnsemble:
    """N independent draws from the initial law; the mass estimator starts at 1."""
    if n_particles < 1:
        raise InputError("population size must be >= 1")
    rng = substream(seed, replicate, 0, Purpose.INIT)
    if isinstance(eta0, FiniteDistribution):
        cdf = np.cumsum(eta0.weights)
        states = _inverse_cdf(cdf, rng.random(n_particles)).astype(np.int64)
    elif callable(eta0):
        states = np.asarray(eta0(n_particles, rng))
        if states.shape[0] != n_particles:
            raise InputError("initial sampler must return one state per particle")
    else:
        raise InputError("eta0 must be a FiniteDistribution or a sampler callable")
    return ParticleEnsemble(
        states=states, step=0, log_gamma1=0.0, seed=seed, replicate=replicate
    )


def selection_step(ens: ParticleEnsemble, potential, eps: float) -> SelectionOutcome:
    """Keep-or-recycle transition driven by the potential.

    ``eps`` scales the keep probability; it must satisfy
    ``eps * max_i G(x_i) <= 1`` on the current ensemble.  ``eps = 0`` is the
    pure multinomial baseline (every particle redrawn).  The mass estimator
    is advanced by the pre-selection mean potential.
    """
    gv = _potential_values(potential, ens.states)
    if np.any(gv < 0):
        raise InputError("selection potential must be non-negative")
    total = gv.sum()
    if total <= 0:
        raise ExtinctionError(ens.step)
    if eps < 0:
        raise InputError("eps must be >= 0")
    if eps * gv.max() > 1.0 + 1e-12:
        raise InputError("eps * max potential exceeds 1 on this ensemble")
    mean_g = float(gv.mean())
    weights = gv / total
    ess = float(1.0 / np.square(weights).sum())

    next_step = ens.step + 1
    keep_u = substream(ens.seed, ens.replicate, next_step, Purpose.KEEP).random(ens.size)
    res_u = substream(ens.seed, ens.replicate, next_step, Purpose.RESAMPLE).random(ens.size)
    kept = keep_u < eps * gv
    cdf = np.cumsum(weights)
    drawn = _inverse_cdf(cdf, res_u)
    new_states = np.where(kept, ens.states, ens.states[drawn])
    out = ParticleEnsemble(
        states=new_states,
        step=ens.step,
        log_gamma1=ens.log_gamma1 + float(np.log(mean_g)),
        seed=ens.seed,
        replicate=ens.replicate,
    )
    return SelectionOutcome(out, mean_g, float(kept.mean()), ess)


def mutation_step(ens: ParticleEnsemble, kernel) -> ParticleEnsemble:
    """Move every particle by one independent kernel draw; advances the step."""
    next_step = ens.step + 1
    rng = substream(ens.seed, ens.replicate, next_step, Purpose.MUTATE)
    if isinstance(kernel, KernelMatrix):
        states = np.asarray(ens.states, dtype=np.int64)
        cdfs = np.cumsum(kernel.rows, axis=1)[states]
        u = rng.random(ens.size)
        new_states = np.minimum(
            (u[:, None] >= cdfs).sum(axis=1), kernel.dim - 1
        ).astype(np.int64)
    elif callable(kernel):
        new_states = np.asarray(kernel(ens.states, rng))
        if new_states.shape[0] != ens.size:
            raise InputError("kernel sampler must return one state per particle")
    else:
        raise InputError("kernel must be a KernelMatrix or a sampler callable")
    return ParticleEnsemble(
        states=new_states,
        step=next_step,
        log_gamma1=ens.log_gamma1,
        seed=ens.seed,
        replicate=ens.replicate,
    )


def estimate(ens: ParticleEnsemble, f) -> float:
    """Empirical mean of a test function over the ensemble."""
    return float(_function_values(f, ens.states).mean())


def resolve_eps(mode, gv_max: float) -> float:
    """Translate an eps policy into a per-step value.

    ``"auto"`` keeps with maximal probability (eps = 1/max G on the current
    ensemble), ``"multinomial"`` always resamples, a float is used as given.
    """
    if mode == "auto":
        if gv_max <= 0:
            return 0.0
        return 1.0 / gv_max
    if mode == "multinomial":
        return 0.0
    return float(mode)


@dataclass(frozen=True)
class IpsRun:
    """Full trajectory: per-step ensembles and diagnostics."""

    ensembles: tuple
    diagnostics: tuple

    @property
    def final(self) -> ParticleEnsemble:
        return self.ensembles[-1]

    def log_gamma1(self, n: int) -> float:
        return self.ensembles[n].log_gamma1

    def gamma1(self, n: int) -> float:
        return float(np.exp(self.ensembles[n].log_gamma1))


def run_ips(
    spec,
    n_particles: int,
    seed: int,
    *,
    horizon: int | None = None,
    eps: object = "auto",
    replicate: int = 0,
    test_functions: tuple = (),
) -> IpsRun:
    """Simulate the particle approximation of a flow.

    ``spec`` is a finite :class:`~fkips.flow.FlowSpec` or any object exposing
    ``initial`` (law or sampler), ``steps`` (iterable of (potential, kernel)
    pairs) and ``horizon``.  ``eps`` is an eps policy (see
    :func:`resolve_eps`) or a per-step sequence of policies.
    """
    steps = list(spec.steps)
    horizon = len(steps) if horizon is None else int(horizon)
    if not 0 <= horizon <= len(steps):
        raise InputError("horizon out of range")
    eps_schedule = list(eps) if isinstance(eps, (list, tuple)) else [eps] * horizon
    if len(eps_schedule) != horizon:
        raise InputError("eps schedule length mismatch")

    ens = init_ensemble(spec.initial, n_particles, seed, replicate)
    ensembles = [ens]
    diagnostics = []
    for n in range(horizon):
        t0 = time.perf_counter()
        potential, kernel = steps[n]
        gv_max = float(_potential_values(potential, ens.states).max())
        eps_n = resolve_eps(eps_schedule[n], gv_max)
        outcome = selection_step(ens, potential, eps_n)
        ens = mutation_step(outcome.ensemble, kernel)
        ensembles.append(ens)
        diagnostics.append(
            StepDiagnostics(
                step=n + 1,
                mean_potential=outcome.mean_potential,
                kept_fraction=outcome.kept_fraction,
                ess=outcome.ess,
                log_gamma1=ens.log_gamma1,
                wall_time=time.perf_counter() - t0,
                estimates=tuple(estimate(ens, f) for f in test_functions),
            )
        )
    return IpsRun(ensembles=tuple(ensembles), diagnostics=tuple(diagnostics))
