"""Adaptive temperature machinery: increment solving, the deterministic
reference, the particle scheme and its verification procedures."""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from fkips.adaptive import (
    AdaptiveConfig,
    LambdaCurve,
    concentration_check,
    kappa_solve,
    khintchine_conditional_check,
    l2_error_check,
    perturbation_check,
    run_adaptive,
    theoretical_adaptive_flow,
)
from fkips.annealing import GibbsProblem
from fkips.errors import InputError
from fkips.flow import run_flow
from fkips.measures import BoundedFunction, FiniteDistribution, KernelMatrix

from .instances import adaptive_problem


class TestLambdaCurve:
    def test_normalization_at_zero(self):
        curve = LambdaCurve(np.array([0.5, 1.0]), np.array([0.5, 0.5]))
        assert curve.value(0.0) == pytest.approx(1.0)

    def test_strictly_decreasing_and_convex(self):
        curve = LambdaCurve(np.array([0.2, 0.7, 1.0]), np.array([0.2, 0.3, 0.5]))
        xs = np.linspace(0.0, 5.0, 30)
        vals = [curve.value(x) for x in xs]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        mids = [curve.value((x + y) / 2) for x, y in zip(xs, xs[2:])]
        assert all(m <= (vals[i] + vals[i + 2]) / 2 + 1e-12 for i, m in enumerate(mids))

    def test_rejects_negative_energy(self):
        with pytest.raises(InputError):
            LambdaCurve(np.array([-0.1, 1.0]), np.array([0.5, 0.5]))


class TestKappaSolve:
    def test_unit_target_boundary(self):
        curve = LambdaCurve(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
        res = kappa_solve(curve, 1.0)
        assert res.delta == 0.0 and not res.saturated

    def test_single_atom_analytic_inverse(self):
        curve = LambdaCurve(np.array([1.0]), np.array([1.0]))
        res = kappa_solve(curve, math.exp(-1.0), tol=1e-12)
        assert res.delta == pytest.approx(1.0, abs=1e-9)

    def test_two_atom_root_matches_high_precision_solver(self):
        curve = LambdaCurve(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
        res = kappa_solve(curve, 0.5, tol=1e-12)
        oracle = brentq(
            lambda x: 0.5 * (math.exp(-x) + math.exp(-2 * x)) - 0.5, 0.0, 5.0, xtol=1e-14
        )
        assert oracle == pytest.approx(0.4812118250596035, abs=1e-12)
        assert res.delta == pytest.approx(oracle, abs=1e-6)

    def test_saturation_when_mass_sits_at_zero_energy(self):
        curve = LambdaCurve(np.array([0.0, 1.0]), np.array([0.6, 0.4]))
        res = kappa_solve(curve, 0.5, delta_max=30.0)
        assert res.saturated and res.delta == 30.0

    def test_target_validation(self):
        curve = LambdaCurve(np.array([1.0]), np.array([1.0]))
        with pytest.raises(InputError):
            kappa_solve(curve, 0.0)
        with pytest.raises(InputError):
            kappa_solve(curve, 1.5)

    def test_monotone_in_target(self):
        curve = LambdaCurve(np.array([0.5, 0.8, 1.0]), np.array([0.3, 0.3, 0.4]))
        deltas = [kappa_solve(curve, eps, tol=1e-12).delta for eps in (0.3, 0.5, 0.7, 0.9)]
        assert all(b < a for a, b in zip(deltas, deltas[1:]))


class TestTheoreticalFlow:
    def test_mass_ratios_hit_the_target(self):
        prob = adaptive_problem(4)
        ref = theoretical_adaptive_flow(prob, 0.75, 6, mcmc_iters=3)
        trace = run_flow(ref.flow)
        for n in range(6):
            assert trace.gamma1[n + 1] / trace.gamma1[n] == pytest.approx(0.75, abs=1e-8)

    def test_flow_laws_match_reference(self):
        prob = adaptive_problem(4)
        ref = theoretical_adaptive_flow(prob, 0.7, 5, mcmc_iters=2)
        trace = run_flow(ref.flow)
        for eta_flow, eta_ref in zip(trace.etas, ref.etas):
            assert np.abs(eta_flow.weights - eta_ref.weights).max() <= 1e-9

    def test_single_energy_level_constant_increment(self):
        prob = GibbsProblem(
            energy=BoundedFunction([0.8, 0.8, 0.8]),
            reference=FiniteDistribution.uniform(3),
            proposal=KernelMatrix.lazy_ring(3, 0.25),
        )
        ref = theoretical_adaptive_flow(prob, 0.6, 4)
        expected = -math.log(0.6) / 0.8
        for delta in ref.deltas:
            assert delta == pytest.approx(expected, abs=1e-9)

    def test_larger_target_gives_smaller_increments(self):
        prob = adaptive_problem(4)
        refs = {eps: theoretical_adaptive_flow(prob, eps, 4) for eps in (0.6, 0.75, 0.9)}
        for n in range(4):
            ds = [refs[eps].deltas[n] for eps in (0.6, 0.75, 0.9)]
            assert ds[0] > ds[1] > ds[2]

    def test_rejects_zero_energy_atom(self):
        prob = GibbsProblem(
            energy=BoundedFunction([0.0, 0.5, 1.0]),
            reference=FiniteDistribution.uniform(3),
            proposal=KernelMatrix.lazy_ring(3, 0.25),
        )
        with pytest.raises(InputError):
            theoretical_adaptive_flow(prob, 0.7, 3)

    def test_envelope_recursion(self):
        prob = adaptive_problem(4)
        ref = theoretical_adaptive_flow(prob, 0.75, 5, mcmc_iters=3)
        acc = 1.0
        for n in range(5):
            acc = 1.0 + ref.g[n] * ref.b[n] * (1.0 + ref.c[n]) * acc
            assert ref.e_tilde[n + 1] == pytest.approx(acc, rel=1e-14)


class TestRunAdaptive:
    def test_single_particle_never_resampled(self):
        prob = adaptive_problem(4)
        cfg = AdaptiveConfig(epsilon=0.7, mutation_mode="adaptive", mcmc_iters=1)
        run = run_adaptive(prob, cfg, 1, 3, seed=1)
        v0 = prob.v_values[int(run.ensembles[0].states[0])]
        assert run.rows[0].delta == pytest.approx(-math.log(0.7) / v0, abs=1e-8)

    def test_solver_residuals_within_tolerance(self):
        prob = adaptive_problem(4)
        cfg = AdaptiveConfig(epsilon=0.75, tol=1e-10, mcmc_iters=3)
        run = run_adaptive(prob, cfg, 300, 6, seed=2)
        for row in run.rows:
            assert not row.saturated
            assert row.lambda_residual <= 1e-10

    def test_kept_fraction_targets_epsilon(self):
        prob = adaptive_problem(4)
        cfg = AdaptiveConfig(epsilon=0.75, mcmc_iters=3)
        reps = 500
        n_particles = 1000
        ref = theoretical_adaptive_flow(prob, 0.75, 3, mcmc_iters=3)
        kept = np.array(
            [
                [
                    row.kept_fraction
                    for row in run_adaptive(
                        prob, cfg, n_particles, 3, seed=3, replicate=r, reference=ref
                    ).rows
                ]
                for r in range(reps)
            ]
        )
        # keep variance per replicate is at most 1/(4 N)
        se = math.sqrt(0.25 / n_particles / reps)
        for n in range(3):
            assert abs(kept[:, n].mean() - 0.75) <= 4 * se + 1e-3

    def test_saturation_flag_on_zero_energy_states(self):
        prob = GibbsProblem(
            energy=BoundedFunction([0.0, 0.0, 1.0]),
            reference=FiniteDistribution.uniform(3),
            proposal=KernelMatrix.lazy_ring(3, 0.25),
        )
        cfg = AdaptiveConfig(
            epsilon=0.5, mutation_mode="adaptive", mcmc_iters=1, delta_max=10.0
        )
        run = run_adaptive(prob, cfg, 60, 2, seed=4)
        # two thirds of the mass never decays below 1/2: the solver saturates
        assert any(row.saturated for row in run.rows)
        assert all(row.delta <= 10.0 for row in run.rows)

    def test_adaptive_mutation_mode_runs(self):
        prob = adaptive_problem(4)
        cfg = AdaptiveConfig(epsilon=0.7, mutation_mode="adaptive", mcmc_iters=2)
        run = run_adaptive(prob, cfg, 200, 4, seed=5)
        assert len(run.ensembles) == 5
        assert run.rows[0].c_mode == "empirical"

    def test_config_validation(self):
        with pytest.raises(InputError):
            AdaptiveConfig(epsilon=1.2)
        with pytest.raises(InputError):
            AdaptiveConfig(epsilon=0.5, mutation_mode="bogus")


class TestVerificationProcedures:
    def test_perturbation_estimates_hold(self):
        prob = adaptive_problem(4)
        cfg = AdaptiveConfig(epsilon=0.75, mcmc_iters=3)
        report = perturbation_check(prob, cfg, 300, 3, seed=6, replicates=150)
        assert report.all_hold
        names = {r.name for r in report.rows}
        assert names == {
            "reweighting-control",
            "reweighting-control-combined",
            "one-step-stability",
        }

    def test_l2_envelope_holds(self):
        prob = adaptive_problem(6)
        cfg = AdaptiveConfig(epsilon=0.75, mcmc_iters=4)
        report = l2_error_check(prob, cfg, 400, 4, seed=7, replicates=150)
        assert report.all_hold
        assert report.e_tilde[0] == 1.0

    def test_khintchine_conditional_step(self):
        prob = adaptive_problem(4)
        cfg = AdaptiveConfig(epsilon=0.75, mcmc_iters=3)
        d2, bound, _ = khintchine_conditional_check(prob, cfg, 400, 2, seed=8, replicates=200)
        assert d2 <= bound

    def test_concentration_refuses_on_failed_hypothesis(self):
        # a barely-mixing kernel pushes b g (1+c) far above the level
        prob = GibbsProblem(
            energy=BoundedFunction([0.5, 0.65, 0.8, 1.0]),
            reference=FiniteDistribution.uniform(4),
            proposal=KernelMatrix.lazy_ring(4, 0.9),
        )
        cfg = AdaptiveConfig(epsilon=0.5, mcmc_iters=1)
        report = concentration_check(
            prob, cfg, (100,), 3, 50, 0.3, (0.1,), (1.0,), seed=9
        )
        assert not report.hypothesis_met
        assert report.failing_step is not None
        assert report.rows == ()

    def test_concentration_bounds_hold_under_hypothesis(self):
        prob = adaptive_problem(4)
        cfg = AdaptiveConfig(epsilon=0.75, mcmc_iters=3)
        report = concentration_check(
            prob, cfg, (200,), 3, 300, 0.6, (0.0, 0.1, 0.25), (1.0, 2.0), seed=10
        )
        assert report.hypothesis_met
        assert report.all_hold
        zero_rows = [r for r in report.rows if r.kind == "tail-shape" and r.level == 0.0]
        assert all(r.bound == 1.0 for r in zero_rows)
