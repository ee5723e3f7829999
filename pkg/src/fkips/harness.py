"""Experiment orchestration: config text, replicate runs, bound verification
and CSV emission.

Config grammar (flat sections of key = value lines):

    # comment
    [section]
    key = value            scalars: int, float, bool, bare string
    key = 1 2 3            array: whitespace-separated numbers
    key = 1 0; 0 1         matrix: rows separated by ';'

Unknown sections or keys are rejected with field-level messages.  Sections
and keys:

    [problem]   dim, v, m (uniform|array), proposal (uniform | lazy-ring STAY
                | matrix)
    [flow]      initial (uniform|array), potentials (T x d matrix),
                kernel (d x d matrix, shared) or kernels ((T*d) x d stacked)
    [algorithm] kind = classic | isa | adaptive
    [schedule]  mode (bounded|decreasing|constant), betas (array) or
                beta0/delta/steps, delta_declared, a, k0
    [adaptive]  epsilon, tol, delta_max, mutation (theoretical|adaptive),
                mcmc_iters, beta0
    [run]       n_particles, steps, replicates, seed, eps_mode
                (auto|multinomial|float), n_test_functions, threads
    [checks]    regime (bounded|decreasing), a, g_sup, y_values, s_values,
                epsilon_level, eps_prime

Every output is a deterministic function of (config, seed): replicates use
counter-based streams indexed by replicate number, aggregation folds in
replicate order regardless of scheduling, and CSV cells print floats at 17
significant digits.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import adaptive as adaptive_mod
from . import bounds
from .annealing import (
    GibbsProblem,
    TemperatureSchedule,
    build_isa_flow,
    gibbs_measure,
    metropolis_kernel,
    minorize,
    optimize,
)
from .engine import run_ips
from .errors import ConfigError
from .flow import (
    FlowSpec,
    check_semigroup_lemmas,
    gamma_via_semigroup,
    run_flow,
    semigroup_table,
)
from .measures import (
    BoundedFunction,
    FiniteDistribution,
    KernelMatrix,
    PotentialVector,
    dobrushin,
)
from .testfns import osc1_dictionary

_FLOAT_FMT = ".17g"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), _FLOAT_FMT)
    return str(x)


# ---------------------------------------------------------------------------
# Config text
# ---------------------------------------------------------------------------

_SCHEMA = {
    "problem": {"dim", "v", "m", "proposal"},
    "flow": {"initial", "potentials", "kernel", "kernels"},
    "algorithm": {"kind"},
    "schedule": {"mode", "betas", "beta0", "delta", "steps", "delta_declared", "a", "k0"},
    "adaptive": {"epsilon", "tol", "delta_max", "mutation", "mcmc_iters", "beta0"},
    "run": {
        "n_particles",
        "steps",
        "replicates",
        "seed",
        "eps_mode",
        "n_test_functions",
        "threads",
    },
    "checks": {"regime", "a", "g_sup", "y_values", "s_values", "epsilon_level", "eps_prime"},
}


def _parse_scalar(token: str):
    low = token.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def _parse_value(text: str):
    text = text.strip()
    if ";" in text:
        rows = [r.split() for r in text.split(";")]
        try:
            return np.array([[float(x) for x in row] for row in rows])
        except ValueError:
            return text
    parts = text.split()
    if len(parts) > 1:
        try:
            return np.array([float(x) for x in parts])
        except ValueError:
            return text
    return _parse_scalar(text) if parts else ""


@dataclass
class RawConfig:
    """Parsed key-value sections, prior to semantic assembly."""

    sections: dict

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def has(self, section: str) -> bool:
        return section in self.sections


def parse_config(text: str) -> "ExperimentConfig":
    """Parse and validate config text; collects field-level errors."""
    errors = []
    sections: dict = {}
    current = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SCHEMA:
                errors.append(f"line {lineno}: unknown section [{current}]")
                current = None
            else:
                sections.setdefault(current, {})
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected key = value")
            continue
        if current is None:
            errors.append(f"line {lineno}: key outside any known section")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA[current]:
            errors.append(f"line {lineno}: unknown key {key!r} in section [{current}]")
            continue
        sections[current][key] = _parse_value(value)
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig.from_raw(RawConfig(sections))


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description."""

    kind: str
    raw: RawConfig
    n_particles: int
    steps: int
    replicates: int
    seed: int
    eps_mode: object
    n_test_functions: int
    threads: int

    @classmethod
    def from_raw(cls, raw: RawConfig) -> "ExperimentConfig":
        errors = []
        kind = raw.get("algorithm", "kind", "classic")
        if kind not in ("classic", "isa", "adaptive"):
            errors.append(f"algorithm.kind must be classic|isa|adaptive, got {kind!r}")

        def _int_field(section, key, default, minimum):
            val = raw.get(section, key, default)
            if not isinstance(val, (int, np.integer)) or isinstance(val, bool) or val < minimum:
                errors.append(f"{key} must be an integer >= {minimum}, got {val!r}")
                return default
            return int(val)

        n_particles = _int_field("run", "n_particles", 100, 1)
        steps = _int_field("run", "steps", 1, 0)
        replicates = _int_field("run", "replicates", 1, 1)
        seed = _int_field("run", "seed", 0, 0)
        n_test = _int_field("run", "n_test_functions", 4, 1)
        threads = _int_field("run", "threads", 1, 1)
        eps_mode = raw.get("run", "eps_mode", "auto")
        if isinstance(eps_mode, str) and eps_mode not in ("auto", "multinomial"):
            errors.append(f"eps_mode must be auto|multinomial|float, got {eps_mode!r}")
        if errors:
            raise ConfigError(errors)
        cfg = cls(
            kind=kind,
            raw=raw,
            n_particles=n_particles,
            steps=steps,
            replicates=replicates,
            seed=seed,
            eps_mode=eps_mode,
            n_test_functions=n_test,
            threads=threads,
        )
        cfg.build_flow()   # fail fast on semantic errors
        return cfg

    # -- assembly -----------------------------------------------------------

    def build_problem(self) -> GibbsProblem:
        raw = self.raw
        errors = []
        dim = raw.get("problem", "dim")
        v = raw.get("problem", "v")
        if v is None:
            errors.append("problem.v is required")
            raise ConfigError(errors)
        v = np.atleast_1d(np.asarray(v, dtype=np.float64))
        if dim is None:
            dim = v.size
        if v.size != dim:
            errors.append(f"problem.v has {v.size} entries, expected dim = {dim}")
        m_spec = raw.get("problem", "m", "uniform")
        if isinstance(m_spec, str) and m_spec == "uniform":
            m = FiniteDistribution.uniform(int(dim))
        else:
            m = FiniteDistribution.from_unnormalized(np.asarray(m_spec, dtype=np.float64))
        prop = raw.get("problem", "proposal", "uniform")
        if isinstance(prop, str):
            parts = prop.split()
            if parts[0] == "uniform":
                kernel = KernelMatrix.uniform(int(dim))
            elif parts[0] == "lazy-ring":
                stay = float(parts[1]) if len(parts) > 1 else 0.5
                kernel = KernelMatrix.lazy_ring(int(dim), stay)
            else:
                errors.append(f"unknown proposal {prop!r}")
                raise ConfigError(errors)
        else:
            kernel = KernelMatrix(np.asarray(prop, dtype=np.float64))
        if errors:
            raise ConfigError(errors)
        return GibbsProblem(energy=BoundedFunction(v), reference=m, proposal=kernel)

    def build_schedule(self) -> TemperatureSchedule:
        raw = self.raw
        mode_map = {
            "bounded": "bounded-increment",
            "decreasing": "decreasing-increment",
            "constant": "constant-step",
        }
        mode = mode_map.get(raw.get("schedule", "mode", "constant"))
        if mode is None:
            raise ConfigError([f"schedule.mode must be bounded|decreasing|constant"])
        betas = raw.get("schedule", "betas")
        if betas is None:
            beta0 = float(raw.get("schedule", "beta0", 0.0))
            delta = float(raw.get("schedule", "delta", 0.5))
            steps = int(raw.get("schedule", "steps", self.steps))
            return TemperatureSchedule.constant_step(beta0, delta, steps)
        betas = tuple(float(b) for b in np.atleast_1d(betas))
        declared = raw.get("schedule", "delta_declared")
        if mode == "bounded-increment" and declared is None:
            declared = max(
                betas[i + 1] - betas[i] for i in range(len(betas) - 1)
            ) if len(betas) > 1 else 0.0
        return TemperatureSchedule(betas, mode, declared_delta=declared)

    def build_adaptive_config(self) -> adaptive_mod.AdaptiveConfig:
        raw = self.raw
        eps = raw.get("adaptive", "epsilon")
        if eps is None:
            raise ConfigError(["adaptive.epsilon is required"])
        delta_max = raw.get("adaptive", "delta_max")
        return adaptive_mod.AdaptiveConfig(
            epsilon=float(eps),
            tol=float(raw.get("adaptive", "tol", 1e-10)),
            delta_max=None if delta_max in (None, "none") else float(delta_max),
            mutation_mode=raw.get("adaptive", "mutation", "theoretical"),
            mcmc_iters=int(raw.get("adaptive", "mcmc_iters", 1)),
            beta0=float(raw.get("adaptive", "beta0", 0.0)),
        )

    def build_flow(self) -> FlowSpec | None:
        """Finite flow the experiment drives; None for adaptive runs."""
        if self.kind == "classic":
            raw = self.raw
            pots = raw.get("flow", "potentials")
            if pots is None:
                raise ConfigError(["flow.potentials is required for classic runs"])
            pots = np.atleast_2d(np.asarray(pots, dtype=np.float64))
            dim = pots.shape[1]
            init_spec = raw.get("flow", "initial", "uniform")
            if isinstance(init_spec, str) and init_spec == "uniform":
                initial = FiniteDistribution.uniform(dim)
            else:
                initial = FiniteDistribution.from_unnormalized(
                    np.asarray(init_spec, dtype=np.float64)
                )
            stacked = raw.get("flow", "kernels")
            if stacked is not None:
                stacked = np.asarray(stacked, dtype=np.float64)
                if stacked.shape != (pots.shape[0] * dim, dim):
                    raise ConfigError(["flow.kernels must stack one d x d kernel per step"])
                kernels = [
                    KernelMatrix(stacked[i * dim : (i + 1) * dim]) for i in range(pots.shape[0])
                ]
            else:
                kern = raw.get("flow", "kernel")
                if kern is None:
                    raise ConfigError(["flow.kernel or flow.kernels is required"])
                shared = KernelMatrix(np.asarray(kern, dtype=np.float64))
                kernels = [shared] * pots.shape[0]
            steps = tuple(
                (PotentialVector(pots[i]), kernels[i]) for i in range(pots.shape[0])
            )
            return FlowSpec(initial=initial, steps=steps)
        if self.kind == "isa":
            problem = self.build_problem()
            schedule = self.build_schedule()
            k0 = int(self.raw.get("schedule", "k0", 1))
            a = float(self.raw.get("schedule", "a", 0.5))
            cert = minorize(problem, k0)
            return build_isa_flow(problem, schedule, cert, a).flow
        return None

    def horizon(self) -> int:
        flow = self.build_flow()
        if flow is not None:
            return min(self.steps, flow.horizon) if self.steps else flow.horizon
        return self.steps


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; parse(serialize(parse(x))) is a fixed point."""
    out = []
    for section in _SCHEMA:
        if not cfg.raw.has(section):
            continue
        body = cfg.raw.sections[section]
        out.append(f"[{section}]")
        for key in sorted(body):
            val = body[key]
            if isinstance(val, np.ndarray):
                if val.ndim == 2:
                    text = "; ".join(" ".join(_fmt(x) for x in row) for row in val)
                else:
                    text = " ".join(_fmt(x) for x in val)
            else:
                text = _fmt(val)
            out.append(f"{key} = {text}")
        out.append("")
    return "\n".join(out)


def flow_to_config(spec: FlowSpec, *, n_particles=100, replicates=1, seed=0, steps=None) -> str:
    """Render a finite flow as classic-run config text."""
    lines = ["[flow]"]
    lines.append("initial = " + " ".join(_fmt(x) for x in spec.initial.weights))
    lines.append(
        "potentials = "
        + "; ".join(" ".join(_fmt(x) for x in g.values) for g, _ in spec.steps)
    )
    stacked = np.vstack([m.rows for _, m in spec.steps])
    lines.append("kernels = " + "; ".join(" ".join(_fmt(x) for x in row) for row in stacked))
    lines.append("")
    lines.append("[algorithm]")
    lines.append("kind = classic")
    lines.append("")
    lines.append("[run]")
    lines.append(f"n_particles = {n_particles}")
    lines.append(f"steps = {steps if steps is not None else spec.horizon}")
    lines.append(f"replicates = {replicates}")
    lines.append(f"seed = {seed}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Replicate execution and aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StatSummary:
    mean: float
    se: float
    quantiles: tuple            # (q10, q50, q90)
    exceedance: tuple = ()      # ((threshold, frequency), ...)


@dataclass(frozen=True)
class ReplicateStats:
    """Aggregated per-(step, statistic) replicate summaries."""

    entries: dict   # (step, stat_name) -> StatSummary
    replicates: int

    def get(self, step: int, stat: str) -> StatSummary:
        return self.entries[(step, stat)]


def aggregate(raw_rows, stat_names, thresholds=()) -> ReplicateStats:
    """Deterministic fold of raw per-replicate rows into summaries.

    ``raw_rows`` maps (replicate, step) -> dict of statistic values; the
    fold visits replicates in index order.
    """
    by_key: dict = {}
    replicates = 0
    for (rep, step), stats in sorted(raw_rows.items()):
        replicates = max(replicates, rep + 1)
        for name in stat_names:
            by_key.setdefault((step, name), []).append(stats[name])
    entries = {}
    for key, vals in by_key.items():
        arr = np.asarray(vals, dtype=np.float64)
        se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        entries[key] = StatSummary(
            mean=float(arr.mean()),
            se=se,
            quantiles=tuple(float(q) for q in np.quantile(arr, (0.1, 0.5, 0.9))),
            exceedance=tuple(
                (float(t), float((np.abs(arr) >= t).mean())) for t in thresholds
            ),
        )
    return ReplicateStats(entries=entries, replicates=replicates)


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    stats: ReplicateStats
    raw_csv: str
    stats_csv: str
    oracle_csv: str | None


def _classic_replicate(flow, cfg, horizon, fdict_tables, rep):
    run = run_ips(
        flow,
        cfg.n_particles,
        cfg.seed,
        horizon=horizon,
        eps=cfg.eps_mode,
        replicate=rep,
        test_functions=fdict_tables,
    )
    rows = {}
    for n in range(horizon + 1):
        ens = run.ensembles[n]
        stats = {
            "log_gamma1": ens.log_gamma1,
            "mean_potential": run.diagnostics[n - 1].mean_potential if n else math.nan,
            "kept_fraction": run.diagnostics[n - 1].kept_fraction if n else math.nan,
            "ess": run.diagnostics[n - 1].ess if n else float(cfg.n_particles),
        }
        hist = ens.histogram(flow.dim).weights
        for i, table in enumerate(fdict_tables):
            stats[f"est_{i}"] = float(hist @ table)
        rows[(rep, n)] = stats
    return rows


def _adaptive_replicate(problem, acfg, cfg, reference, fdict_tables, rep):
    run = adaptive_mod.run_adaptive(
        problem,
        acfg,
        cfg.n_particles,
        cfg.steps,
        cfg.seed,
        replicate=rep,
        reference=reference,
    )
    rows = {}
    for n, ens in enumerate(run.ensembles):
        stats = {
            "log_gamma1": ens.log_gamma1,
            "delta": run.rows[n - 1].delta if n else 0.0,
            "beta": run.rows[n - 1].beta if n else acfg.beta0,
            "c": run.rows[n - 1].c if n else 0.0,
            "kept_fraction": run.rows[n - 1].kept_fraction if n else math.nan,
            "saturated": float(run.rows[n - 1].saturated) if n else 0.0,
        }
        hist = ens.histogram(problem.dim).weights
        for i, table in enumerate(fdict_tables):
            stats[f"est_{i}"] = float(hist @ table)
        rows[(rep, n)] = stats
    return rows


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentResult:
    """Execute all replicates and aggregate.

    ``threads`` only affects wall time: replicates are independent
    counter-based streams, collected in replicate order.
    """
    threads = cfg.threads if threads is None else max(1, int(threads))
    flow = cfg.build_flow()
    oracle_csv = None
    if cfg.kind in ("classic", "isa"):
        horizon = cfg.horizon()
        dim = flow.dim
        fdict = osc1_dictionary(dim, cfg.n_test_functions)
        tables = tuple(fdict)
        job = lambda rep: _classic_replicate(flow, cfg, horizon, tables, rep)
        stat_names = ["log_gamma1", "mean_potential", "kept_fraction", "ess"] + [
            f"est_{i}" for i in range(len(tables))
        ]
        trace = run_flow(FlowSpec(initial=flow.initial, steps=flow.steps[:horizon]))
        oracle_csv = _oracle_csv(trace, tables)
    else:
        problem = cfg.build_problem()
        acfg = cfg.build_adaptive_config()
        fdict = osc1_dictionary(problem.dim, cfg.n_test_functions)
        tables = tuple(fdict)
        reference = None
        if acfg.mutation_mode == "theoretical":
            reference = adaptive_mod.theoretical_adaptive_flow(
                problem,
                acfg.epsilon,
                cfg.steps,
                mcmc_iters=acfg.mcmc_iters,
                beta0=acfg.beta0,
            )
        job = lambda rep: _adaptive_replicate(problem, acfg, cfg, reference, tables, rep)
        stat_names = ["log_gamma1", "delta", "beta", "c", "kept_fraction", "saturated"] + [
            f"est_{i}" for i in range(len(tables))
        ]

    raw_rows: dict = {}
    if threads == 1:
        for rep in range(cfg.replicates):
            raw_rows.update(job(rep))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for chunk in pool.map(job, range(cfg.replicates)):
                raw_rows.update(chunk)
    stats = aggregate(raw_rows, stat_names)
    return ExperimentResult(
        config=cfg,
        stats=stats,
        raw_csv=_raw_csv(raw_rows, stat_names),
        stats_csv=_stats_csv(stats, stat_names),
        oracle_csv=oracle_csv,
    )


def _raw_csv(raw_rows, stat_names) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["replicate", "step"] + stat_names)
    for (rep, step) in sorted(raw_rows):
        stats = raw_rows[(rep, step)]
        writer.writerow([rep, step] + [_fmt(stats[name]) for name in stat_names])
    return buf.getvalue()


def _stats_csv(stats: ReplicateStats, stat_names) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "statistic", "mean", "se", "q10", "q50", "q90"])
    for (step, name) in sorted(stats.entries, key=lambda k: (k[0], stat_names.index(k[1]))):
        s = stats.entries[(step, name)]
        writer.writerow(
            [step, name, _fmt(s.mean), _fmt(s.se)] + [_fmt(q) for q in s.quantiles]
        )
    return buf.getvalue()


def _oracle_csv(trace, tables) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["step", "log_gamma1", "gamma1"] + [f"exact_est_{i}" for i in range(len(tables))]
    )
    for n, eta in enumerate(trace.etas):
        writer.writerow(
            [n, _fmt(trace.log_gamma1[n]), _fmt(trace.gamma1[n])]
            + [_fmt(float(eta.weights @ t)) for t in tables]
        )
    return buf.getvalue()


def emit_csv(text_or_result, path) -> None:
    """Write CSV text (or an ExperimentResult's raw CSV) to a file."""
    text = text_or_result.raw_csv if isinstance(text_or_result, ExperimentResult) else text_or_result
    with open(path, "w", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# Bound verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckRow:
    name: str
    scope: str       # e.g. "n=3,y=2" or "all"
    lhs: float
    rhs: float
    status: str      # "pass" | "fail" | "hypothesis-unmet"

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


@dataclass(frozen=True)
class VerifyReport:
    rows: tuple
    hypothesis_ok: bool

    @property
    def all_pass(self) -> bool:
        return all(r.status == "pass" for r in self.rows)

    def failures(self):
        return [r for r in self.rows if r.status == "fail"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["check", "scope", "lhs", "rhs", "margin", "status"])
        for r in self.rows:
            writer.writerow([r.name, r.scope, _fmt(r.lhs), _fmt(r.rhs), _fmt(r.margin), r.status])
        return buf.getvalue()


def _binomial_allowance(bound: float, replicates: int) -> float:
    b = min(max(bound, 0.0), 1.0)
    return 3.0 * math.sqrt(b * (1.0 - b) / replicates)


def _deviation_tensor(flow, cfg_particles, replicates, seed, horizon, fdict, threads=1):
    """dev[r, n, j] = empirical-minus-exact mean of dictionary entry j, and
    the per-replicate log mass gaps."""
    trace = run_flow(FlowSpec(initial=flow.initial, steps=flow.steps[:horizon]))
    exact = np.array([[eta.expect(f) for f in fdict] for eta in trace.etas])
    devs = np.zeros((replicates, horizon + 1, fdict.shape[0]))
    log_gaps = np.zeros((replicates, horizon + 1))

    def job(rep):
        run = run_ips(flow, cfg_particles, seed, horizon=horizon, replicate=rep)
        local_dev = np.zeros((horizon + 1, fdict.shape[0]))
        local_gap = np.zeros(horizon + 1)
        for n in range(horizon + 1):
            hist = run.ensembles[n].histogram(flow.dim).weights
            local_dev[n] = hist @ fdict.T - exact[n]
            local_gap[n] = run.ensembles[n].log_gamma1 - trace.log_gamma1[n]
        return rep, local_dev, local_gap

    if threads == 1:
        results = map(job, range(replicates))
    else:
        pool = ThreadPoolExecutor(max_workers=threads)
        results = pool.map(job, range(replicates))
    for rep, local_dev, local_gap in results:
        devs[rep] = local_dev
        log_gaps[rep] = local_gap
    return trace, devs, log_gaps


def composed_caps_bounded(flow: FlowSpec, a: float, g_sup: float):
    """Exact composed-quantity caps implied by the uniform-regime hypothesis:
    ``g_{p,n} <= g_sup + a``, ``b_p g_{p-1,n} <= a`` and
    ``g_{p,n} b_{p,n} <= a^(n-p)``.  Returns (ok, worst_excess, scope)."""
    trace = run_flow(flow)
    worst, scope, ok = -math.inf, "none", True
    for n in range(flow.horizon + 1):
        table = {sg.p: sg for sg in semigroup_table(flow, n)}
        for p, sg in table.items():
            for name, excess in (
                ("g_pn", sg.g - (g_sup + a)),
                ("g_pn*b_pn", sg.g * sg.b - a ** (n - p)),
            ):
                if excess > worst:
                    worst, scope = excess, f"{name},p={p},n={n}"
                ok &= excess <= 1e-10
            if p >= 1:
                # b_p pairs with g_{p-1,n}; trace.b is 0-indexed by step
                excess = trace.b[p - 1] * table[p - 1].g - a
                if excess > worst:
                    worst, scope = excess, f"b_p*g_(p-1)n,p={p},n={n}"
                ok &= excess <= 1e-10
    return ok, worst, scope


def composed_caps_decreasing(flow: FlowSpec, a: float):
    """Exact composed caps of the decreasing regime:
    ``g_{p,n} <= g_(p+1)^(1+alpha)`` for p < n and
    ``g_{p,n} b_{p,n} <= a^(n-p)``."""
    trace = run_flow(flow)
    alpha = a / (1.0 - a)
    worst, scope, ok = -math.inf, "none", True
    for n in range(flow.horizon + 1):
        for sg in semigroup_table(flow, n):
            p = sg.p
            if p < n:
                excess = sg.g - trace.g[p] ** (1.0 + alpha)
                # trace.g is 0-indexed: trace.g[p] is the step-(p+1) ratio
                if excess > worst:
                    worst, scope = excess, f"g_pn,p={p},n={n}"
                ok &= excess <= 1e-10
            excess = sg.g * sg.b - a ** (n - p)
            if excess > worst:
                worst, scope = excess, f"g_pn*b_pn,p={p},n={n}"
            ok &= excess <= 1e-10
    return ok, worst, scope


def check_uniform_regime(
    flow: FlowSpec,
    a: float,
    g_sup: float,
    n_particles: int,
    replicates: int,
    seed: int,
    *,
    y_values=(1.0, 2.0, 4.0),
    l2_replicates: int | None = None,
    threads: int = 1,
) -> VerifyReport:
    """All uniform-regime checks on one flow.

    Preamble verifies the hypothesis with exact quantities (potential ratios
    capped by g_sup, ergodic coefficients by a/(a+g_sup), plus the composed
    caps they imply); rows then cover the per-step L2 level, the
    occupation-deviation thresholds over the y grid, and both signs of the
    normalized log mass ratio.
    """
    rows = []
    trace = run_flow(flow)
    b_cap = bounds.condition_bounded(g_sup, a)
    hyp_ok = all(g <= g_sup + 1e-12 for g in trace.g) and all(
        b <= b_cap + 1e-12 for b in trace.b
    )
    status_if = lambda ok: "pass" if ok else "fail"
    if not hyp_ok:
        rows.append(
            CheckRow("uniform-hypothesis", "all", max(trace.b), b_cap, "hypothesis-unmet")
        )
        return VerifyReport(rows=tuple(rows), hypothesis_ok=False)
    rows.append(CheckRow("uniform-hypothesis", "all", max(trace.b), b_cap, "pass"))
    caps_ok, worst, scope = composed_caps_bounded(flow, a, g_sup)
    rows.append(
        CheckRow(
            "uniform-composed-caps",
            scope,
            worst,
            1e-10,
            "pass" if caps_ok else "fail",
        )
    )

    horizon = flow.horizon
    fdict = osc1_dictionary(flow.dim)
    r2_reps = replicates if l2_replicates is None else l2_replicates
    _, devs, log_gaps = _deviation_tensor(
        flow, n_particles, replicates, seed, horizon, fdict, threads
    )

    # L2 level, uniformly in time
    l2_bound = bounds.lp_uniform_bound(2, a, n_particles)
    l2 = np.sqrt(np.mean(np.square(devs[:r2_reps]), axis=0)).max(axis=1)
    for n in range(horizon + 1):
        rows.append(
            CheckRow(
                "uniform-l2",
                f"n={n}",
                float(l2[n]),
                l2_bound,
                status_if(l2[n] <= l2_bound),
            )
        )

    # occupation-measure deviation thresholds
    params = bounds.RegimeParams(a=a, g_sup=g_sup, n_particles=n_particles)
    r1, r2 = bounds.r_star_bounded(params)
    worst = np.abs(devs).max(axis=2)   # per replicate, sup over dictionary
    for y in y_values:
        thr = bounds.eta_deviation_threshold(r1, r2, n_particles, y)
        level = math.exp(-y)
        for n in range(1, horizon + 1):
            freq = float((worst[:, n] > thr).mean())
            allow = _binomial_allowance(level, replicates)
            rows.append(
                CheckRow(
                    "uniform-eta-deviation",
                    f"n={n},y={_fmt(y)}",
                    freq,
                    level + allow,
                    status_if(freq <= level + allow),
                )
            )

    # normalized log mass ratio, both signs
    rt1, rt2 = bounds.r_tilde_bounded(params)
    for y in y_values:
        level = math.exp(-y)
        allow = _binomial_allowance(level, replicates)
        for n in range(1, horizon + 1):
            thr = bounds.gamma_log_ratio_threshold_bounded(rt1, rt2, n, n_particles, y)
            signed = log_gaps[:, n] / n
            for sign, tag in ((1.0, "+"), (-1.0, "-")):
                freq = float((sign * signed > thr).mean())
                rows.append(
                    CheckRow(
                        "uniform-mass-ratio",
                        f"n={n},y={_fmt(y)},sign={tag}",
                        freq,
                        level + allow,
                        status_if(freq <= level + allow),
                    )
                )
    return VerifyReport(rows=tuple(rows), hypothesis_ok=True)


def check_decreasing_regime(
    flow: FlowSpec,
    a: float,
    n_particles: int,
    replicates: int,
    seed: int,
    *,
    y_values=(1.0, 2.0, 4.0),
    threads: int = 1,
) -> VerifyReport:
    """Decreasing-regime checks: hypothesis on each step's mixing level, the
    per-time deviation thresholds, and the three-term mass-ratio bound."""
    rows = []
    trace = run_flow(flow)
    g_sched = list(trace.g)
    hyp_ok = True
    for p, (g_p, b_p) in enumerate(zip(trace.g, trace.b), start=1):
        cap = bounds.condition_decreasing(g_p, a).value
        if b_p > cap + 1e-12:
            hyp_ok = False
            rows.append(
                CheckRow("decreasing-hypothesis", f"p={p}", b_p, cap, "hypothesis-unmet")
            )
    if not hyp_ok:
        return VerifyReport(rows=tuple(rows), hypothesis_ok=False)
    rows.append(CheckRow("decreasing-hypothesis", "all", 0.0, 0.0, "pass"))
    caps_ok, worst, scope = composed_caps_decreasing(flow, a)
    rows.append(
        CheckRow("decreasing-composed-caps", scope, worst, 1e-10, "pass" if caps_ok else "fail")
    )

    horizon = flow.horizon
    fdict = osc1_dictionary(flow.dim)
    _, devs, log_gaps = _deviation_tensor(
        flow, n_particles, replicates, seed, horizon, fdict, threads
    )
    l2_bound = bounds.lp_uniform_bound(2, a, n_particles)
    l2 = np.sqrt(np.mean(np.square(devs), axis=0)).max(axis=1)
    for n in range(horizon + 1):
        rows.append(
            CheckRow(
                "decreasing-l2",
                f"n={n}",
                float(l2[n]),
                l2_bound,
                "pass" if l2[n] <= l2_bound else "fail",
            )
        )
    worst = np.abs(devs).max(axis=2)
    for y in y_values:
        level = math.exp(-y)
        allow = _binomial_allowance(level, replicates)
        for n in range(1, horizon + 1):
            dec = bounds.r_star_decreasing(g_sched, a, n_particles, n)
            thr = bounds.eta_deviation_threshold(dec.r3, dec.r4, n_particles, y)
            freq = float((worst[:, n] > thr).mean())
            rows.append(
                CheckRow(
                    "decreasing-eta-deviation",
                    f"n={n},y={_fmt(y)}",
                    freq,
                    level + allow,
                    "pass" if freq <= level + allow else "fail",
                )
            )
            rt3, rt4, rt5 = bounds.r_tilde_decreasing(g_sched, a, n)
            thr_g = bounds.gamma_log_ratio_threshold_decreasing(
                rt3, rt4, rt5, n, n_particles, y
            )
            signed = log_gaps[:, n] / n
            for sign, tag in ((1.0, "+"), (-1.0, "-")):
                freq = float((sign * signed > thr_g).mean())
                rows.append(
                    CheckRow(
                        "decreasing-mass-ratio",
                        f"n={n},y={_fmt(y)},sign={tag}",
                        freq,
                        level + allow,
                        "pass" if freq <= level + allow else "fail",
                    )
                )
    return VerifyReport(rows=tuple(rows), hypothesis_ok=True)


def check_oracle_identity(flow: FlowSpec, rel_tol: float = 1e-10) -> VerifyReport:
    """Mass recursion vs composed-operator route, every split point."""
    trace = run_flow(flow)
    rows = []
    ok_all = True
    for n in range(flow.horizon + 1):
        direct = trace.gamma1[n]
        worst = 0.0
        for p in range(n + 1):
            alt = gamma_via_semigroup(flow, trace, p, n)
            worst = max(worst, abs(alt - direct) / max(abs(direct), 1e-300))
        ok = worst <= rel_tol
        ok_all &= ok
        rows.append(
            CheckRow("oracle-mass-identity", f"n={n}", worst, rel_tol, "pass" if ok else "fail")
        )
    return VerifyReport(rows=tuple(rows), hypothesis_ok=ok_all)


def verify_bounds(cfg: ExperimentConfig, threads: int | None = None) -> VerifyReport:
    """Config-driven verification suite; dispatches on the algorithm kind.

    When [run] replicates is omitted, L2-style checks default to 500
    replicates and tail-frequency checks to 2000.
    """
    threads = cfg.threads if threads is None else max(1, int(threads))
    raw = cfg.raw
    explicit_r = raw.get("run", "replicates")
    tail_replicates = cfg.replicates if explicit_r is not None else 2000
    l2_replicates = cfg.replicates if explicit_r is not None else 500
    y_values = raw.get("checks", "y_values")
    y_values = (
        tuple(float(y) for y in np.atleast_1d(y_values)) if y_values is not None else (1.0, 2.0, 4.0)
    )
    if cfg.kind == "classic":
        flow = cfg.build_flow()
        a = float(raw.get("checks", "a", 0.5))
        regime = raw.get("checks", "regime", "bounded")
        rows = list(check_oracle_identity(flow).rows)
        lemmas = check_semigroup_lemmas(flow)
        rows.append(
            CheckRow(
                "semigroup-lemmas",
                "all",
                -lemmas.min_slack,
                1e-10,
                "pass" if lemmas.holds(1e-10) else "fail",
            )
        )
        if regime == "bounded":
            g_sup = raw.get("checks", "g_sup")
            g_sup = float(g_sup) if g_sup is not None else max(run_flow(flow).g)
            report = check_uniform_regime(
                flow,
                a,
                g_sup,
                cfg.n_particles,
                tail_replicates,
                cfg.seed,
                y_values=y_values,
                l2_replicates=l2_replicates,
                threads=threads,
            )
        else:
            report = check_decreasing_regime(
                flow,
                a,
                cfg.n_particles,
                tail_replicates,
                cfg.seed,
                y_values=y_values,
                threads=threads,
            )
        rows.extend(report.rows)
        return VerifyReport(rows=tuple(rows), hypothesis_ok=report.hypothesis_ok)
    if cfg.kind == "isa":
        problem = cfg.build_problem()
        schedule = cfg.build_schedule()
        k0 = int(raw.get("schedule", "k0", 1))
        a = float(raw.get("schedule", "a", 0.5))
        eps_level = float(raw.get("checks", "epsilon_level", 0.5))
        eps_prime = float(raw.get("checks", "eps_prime", 0.25))
        return check_isa_bounds(
            problem,
            schedule,
            k0,
            a,
            eps_level,
            eps_prime,
            cfg.n_particles,
            tail_replicates,
            cfg.seed,
            y=float(y_values[0]) if y_values else 2.0,
        )
    # adaptive
    problem = cfg.build_problem()
    acfg = cfg.build_adaptive_config()
    a = float(raw.get("checks", "a", 0.6))
    s_values = raw.get("checks", "s_values")
    s_grid = (
        tuple(float(s) for s in np.atleast_1d(s_values))
        if s_values is not None
        else (0.0, 0.1, 0.2, 0.3)
    )
    report = adaptive_mod.concentration_check(
        problem,
        acfg,
        (cfg.n_particles,),
        cfg.steps,
        tail_replicates,
        a,
        s_grid,
        tuple(y for y in y_values if y >= 1.0),
        cfg.seed,
    )
    rows = []
    if not report.hypothesis_met:
        rows.append(
            CheckRow(
                "adaptive-hypothesis",
                f"step={report.failing_step}",
                max(report.hypothesis_levels),
                a,
                "hypothesis-unmet",
            )
        )
        return VerifyReport(rows=tuple(rows), hypothesis_ok=False)
    rows.append(
        CheckRow("adaptive-hypothesis", "all", max(report.hypothesis_levels), a, "pass")
    )
    for r in report.rows:
        rows.append(
            CheckRow(
                f"adaptive-{r.kind}",
                f"N={r.n_particles},n={r.step},level={_fmt(r.level)}",
                r.frequency,
                r.bound + r.allowance,
                "pass" if r.holds else "fail",
            )
        )
    return VerifyReport(rows=tuple(rows), hypothesis_ok=True)


def check_isa_bounds(
    problem: GibbsProblem,
    schedule: TemperatureSchedule,
    k0: int,
    a: float,
    eps_level: float,
    eps_prime: float,
    n_particles: int,
    replicates: int,
    seed: int,
    *,
    y: float = 2.0,
    beta_grid=(0.0, 0.5, 1.0, 2.0, 5.0),
) -> VerifyReport:
    """Annealing checks: invariance, mixing estimate, tail bound and the
    replicated optimizer exceedance at confidence exponent y."""
    rows = []
    cert = minorize(problem, k0)
    # invariance of the annealing kernel
    worst_inv = 0.0
    for beta in beta_grid:
        mu = gibbs_measure(problem, beta)
        pushed = mu.push(metropolis_kernel(problem, beta))
        worst_inv = max(worst_inv, float(np.abs(pushed.weights - mu.weights).max()))
    rows.append(
        CheckRow(
            "annealing-invariance",
            "beta-grid",
            worst_inv,
            1e-12,
            "pass" if worst_inv <= 1e-12 else "fail",
        )
    )
    # mixing estimate for the k0-fold kernel
    worst_gap = -math.inf
    for beta in beta_grid:
        kb = metropolis_kernel(problem, beta).power(cert.k0)
        exact = dobrushin(kb)
        est = cert.mixing_bound(beta)
        worst_gap = max(worst_gap, exact - est)
    rows.append(
        CheckRow(
            "annealing-mixing-estimate",
            "beta-grid",
            worst_gap,
            1e-12,
            "pass" if worst_gap <= 1e-12 else "fail",
        )
    )
    # Boltzmann-Gibbs tail bound
    v_min = problem.v_min
    m_prime = problem.sublevel_mass(v_min + eps_prime)
    tail_ok = True
    worst_tail = -math.inf
    for beta in beta_grid:
        mu = gibbs_measure(problem, beta)
        exact_tail = float(mu.weights[problem.v_values >= v_min + eps_level].sum())
        bound = bounds.gibbs_tail_bound(beta, eps_level, eps_prime, m_prime)
        worst_tail = max(worst_tail, exact_tail - bound)
        tail_ok &= exact_tail <= bound + 1e-12
    rows.append(
        CheckRow(
            "gibbs-tail",
            "beta-grid",
            worst_tail,
            0.0,
            "pass" if tail_ok else "fail",
        )
    )
    # replicated optimizer: per-step exceedance of the composite bound
    level = math.exp(-y)
    allow = _binomial_allowance(level, replicates)
    exceed = None
    exact_below = True
    for rep in range(replicates):
        result = optimize(
            problem,
            schedule,
            n_particles,
            seed,
            eps_level,
            eps_prime,
            cert=cert,
            a=a,
            y_values=(y,),
            replicate=rep,
        )
        if exceed is None:
            exceed = np.zeros(len(result.rows))
        for i, row in enumerate(result.rows):
            if row.proportion > row.thresholds[y]:
                exceed[i] += 1
            if row.proportion_exact > row.gibbs_term + 1e-12:
                exact_below = False
    rows.append(
        CheckRow(
            "optimizer-exact-mass",
            "all-steps",
            0.0 if exact_below else 1.0,
            0.0,
            "pass" if exact_below else "fail",
        )
    )
    freqs = exceed / replicates
    for n, freq in enumerate(freqs, start=1):
        rows.append(
            CheckRow(
                "optimizer-exceedance",
                f"n={n},y={_fmt(y)}",
                float(freq),
                level + allow,
                "pass" if freq <= level + allow else "fail",
            )
        )
    return VerifyReport(rows=tuple(rows), hypothesis_ok=True)
