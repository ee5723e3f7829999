"""Annealed and adaptive Feynman-Kac interacting particle systems.

Layers, bottom up:

* :mod:`fkips.measures` -- finite distributions, kernels, total variation,
  Dobrushin coefficients, Boltzmann-Gibbs reweighting;
* :mod:`fkips.flow` -- the exact flow oracle and composed-operator
  quantities;
* :mod:`fkips.bounds` -- closed-form calculators for every deviation
  constant, tuning rule and tail bound;
* :mod:`fkips.engine` -- the N-particle simulator with counter-based
  deterministic randomness;
* :mod:`fkips.annealing` -- Boltzmann-Gibbs targets, Metropolis annealing
  kernels, minorization certificates, the tuned optimizer;
* :mod:`fkips.adaptive` -- adaptive temperature increments and their
  perturbation/concentration verification;
* :mod:`fkips.harness` -- configs, replicate orchestration, bound
  verification, CSV emission (CLI in :mod:`fkips.cli`).
"""

from .measures import (
    BoundedFunction,
    FiniteDistribution,
    KernelMatrix,
    PotentialVector,
    bg_transform,
    dobrushin,
    osc,
    potential_ratio,
    total_variation,
)
from .flow import FlowSpec, FlowTrace, fk_step, run_flow, semigroup
from .engine import ParticleEnsemble, init_ensemble, mutation_step, run_ips, selection_step
from .annealing import (
    GibbsProblem,
    MinorizationCert,
    TemperatureSchedule,
    build_isa_flow,
    gibbs_measure,
    metropolis_kernel,
    minorize,
    optimize,
)
from .adaptive import AdaptiveConfig, LambdaCurve, kappa_solve, run_adaptive

__version__ = "0.1.0"

__all__ = [
    "AdaptiveConfig",
    "BoundedFunction",
    "FiniteDistribution",
    "FlowSpec",
    "FlowTrace",
    "GibbsProblem",
    "KernelMatrix",
    "LambdaCurve",
    "MinorizationCert",
    "ParticleEnsemble",
    "PotentialVector",
    "TemperatureSchedule",
    "bg_transform",
    "build_isa_flow",
    "dobrushin",
    "fk_step",
    "gibbs_measure",
    "init_ensemble",
    "kappa_solve",
    "metropolis_kernel",
    "minorize",
    "mutation_step",
    "optimize",
    "osc",
    "potential_ratio",
    "run_adaptive",
    "run_flow",
    "run_ips",
    "selection_step",
    "total_variation",
]
