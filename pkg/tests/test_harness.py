"""Harness: config grammar, replicate orchestration, aggregation,
verification dispatch, CSV emission and the CLI."""

import csv
import io
import math

import numpy as np
import pytest

from fkips.cli import main as cli_main
from fkips.engine import run_ips
from fkips.errors import ConfigError
from fkips.flow import FlowSpec
from fkips.harness import (
    CheckRow,
    aggregate,
    check_oracle_identity,
    check_uniform_regime,
    emit_csv,
    flow_to_config,
    parse_config,
    run_experiment,
    serialize_config,
    verify_bounds,
)
from fkips.measures import FiniteDistribution, KernelMatrix, PotentialVector

from .instances import bounded_regime_flow

CLASSIC_TEXT = """
# minimal classic flow
[flow]
initial = uniform
potentials = 1 2; 1 2; 1 2
kernel = 0.8 0.2; 0.3 0.7

[algorithm]
kind = classic

[run]
n_particles = 120
steps = 3
replicates = 4
seed = 7
"""

ADAPTIVE_TEXT = """
[problem]
dim = 4
v = 0.5 0.65 0.8 1.0
m = uniform
proposal = lazy-ring 0.25

[algorithm]
kind = adaptive

[adaptive]
epsilon = 0.75
mcmc_iters = 3

[run]
n_particles = 150
steps = 3
replicates = 6
seed = 11
"""


class TestParsing:
    def test_minimal_classic_with_defaults(self):
        cfg = parse_config(CLASSIC_TEXT)
        assert cfg.kind == "classic"
        assert cfg.n_particles == 120 and cfg.replicates == 4
        assert cfg.eps_mode == "auto" and cfg.threads == 1
        flow = cfg.build_flow()
        assert flow.horizon == 3 and flow.dim == 2

    def test_negative_population_names_the_field(self):
        with pytest.raises(ConfigError) as err:
            parse_config(CLASSIC_TEXT.replace("n_particles = 120", "n_particles = -3"))
        assert any("n_particles" in e for e in err.value.errors)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError) as err:
            parse_config(CLASSIC_TEXT + "\nwhatever = 3\n")
        assert any("whatever" in e for e in err.value.errors)
        with pytest.raises(ConfigError):
            parse_config("[bogus_section]\nx = 1\n")

    def test_error_list_collects_multiple(self):
        bad = CLASSIC_TEXT + "\njunk1 = 1\njunk2 = 2\n"
        with pytest.raises(ConfigError) as err:
            parse_config(bad)
        assert len(err.value.errors) == 2

    def test_round_trip_is_idempotent(self):
        for text in (CLASSIC_TEXT, ADAPTIVE_TEXT):
            cfg = parse_config(text)
            canon = serialize_config(cfg)
            assert serialize_config(parse_config(canon)) == canon

    def test_flow_to_config_round_trip(self):
        flow = bounded_regime_flow(3, seed=42)
        cfg = parse_config(flow_to_config(flow, n_particles=77, seed=5))
        rebuilt = cfg.build_flow()
        assert rebuilt.horizon == flow.horizon
        assert np.allclose(rebuilt.initial.weights, flow.initial.weights)
        for (g1, k1), (g2, k2) in zip(rebuilt.steps, flow.steps):
            assert np.allclose(g1.values, g2.values, rtol=1e-15)
            assert np.allclose(k1.rows, k2.rows, rtol=1e-15)


class TestRunExperiment:
    def test_single_replicate_reproduces_engine_run(self):
        cfg = parse_config(CLASSIC_TEXT.replace("replicates = 4", "replicates = 1"))
        flow = cfg.build_flow()
        direct = run_ips(flow, cfg.n_particles, cfg.seed, eps="auto", replicate=0)
        result = run_experiment(cfg)
        reader = csv.DictReader(io.StringIO(result.raw_csv))
        rows = {int(r["step"]): r for r in reader}
        for n in range(4):
            assert float(rows[n]["log_gamma1"]) == pytest.approx(
                direct.ensembles[n].log_gamma1, rel=1e-15
            )

    def test_byte_identical_across_runs_and_threads(self):
        cfg = parse_config(CLASSIC_TEXT)
        outs = [run_experiment(cfg, threads=t) for t in (1, 2, 8)]
        again = run_experiment(cfg, threads=1)
        assert len({o.raw_csv for o in outs} | {again.raw_csv}) == 1
        assert len({o.stats_csv for o in outs}) == 1

    def test_adaptive_kind_runs(self):
        cfg = parse_config(ADAPTIVE_TEXT)
        result = run_experiment(cfg)
        assert "delta" in result.raw_csv.splitlines()[0]
        assert result.oracle_csv is None

    def test_aggregation_matches_recomputation_from_raw(self):
        cfg = parse_config(CLASSIC_TEXT)
        result = run_experiment(cfg)
        reader = csv.DictReader(io.StringIO(result.raw_csv))
        values = {}
        for row in reader:
            key = (int(row["step"]), "log_gamma1")
            values.setdefault(key, []).append(float(row["log_gamma1"]))
        for key, vals in values.items():
            arr = np.asarray(vals)
            summary = result.stats.get(*key)
            assert summary.mean == arr.mean()
            assert summary.se == arr.std(ddof=1) / math.sqrt(arr.size)


class TestAggregate:
    def test_fold_in_replicate_order(self):
        raw = {
            (1, 0): {"x": 3.0},
            (0, 0): {"x": 1.0},
            (2, 0): {"x": 2.0},
        }
        stats = aggregate(raw, ["x"])
        assert stats.get(0, "x").mean == pytest.approx(2.0)
        assert stats.replicates == 3

    def test_exceedance_grid(self):
        raw = {(r, 0): {"x": float(r)} for r in range(4)}
        stats = aggregate(raw, ["x"], thresholds=(2.0,))
        assert stats.get(0, "x").exceedance == ((2.0, 0.5),)


class TestEmitCsv:
    def test_header_only_and_re_emission(self, tmp_path):
        path = tmp_path / "empty.csv"
        emit_csv("step,stat\n", path)
        assert path.read_text() == "step,stat\n"
        emit_csv("step,stat\n", path)
        assert path.read_text() == "step,stat\n"

    def test_two_line_file(self, tmp_path):
        path = tmp_path / "one.csv"
        emit_csv("step,value\n0,1.5\n", path)
        assert path.read_text().splitlines() == ["step,value", "0,1.5"]


class TestVerifyDispatch:
    def test_degenerate_flow_trivially_passes(self):
        # unit potentials and rank-one kernels: every deviation is zero
        flow = FlowSpec(
            FiniteDistribution.uniform(3),
            ((PotentialVector.constant(3), KernelMatrix.uniform(3)),) * 3,
        )
        report = check_uniform_regime(flow, 0.5, 1.0, 50, 20, seed=3)
        assert report.hypothesis_ok and report.all_pass

    def test_hypothesis_unmet_is_not_a_failure(self):
        # identity kernels break the mixing cap: rows must say so
        flow = FlowSpec(
            FiniteDistribution.uniform(2),
            ((PotentialVector([1.0, 1.2]), KernelMatrix.identity(2)),) * 2,
        )
        report = check_uniform_regime(flow, 0.5, 1.2, 50, 10, seed=4)
        assert not report.hypothesis_ok
        assert all(r.status == "hypothesis-unmet" for r in report.rows)
        assert not report.failures()

    def test_oracle_identity_rows(self):
        report = check_oracle_identity(bounded_regime_flow(4, seed=50))
        assert report.all_pass

    def test_config_driven_verify(self):
        text = CLASSIC_TEXT.replace(
            "kernel = 0.8 0.2; 0.3 0.7", "kernel = 0.55 0.45; 0.45 0.55"
        )
        text += "\n[checks]\nregime = bounded\na = 0.5\ng_sup = 2.0\ny_values = 2\n"
        cfg = parse_config(text)
        report = verify_bounds(cfg)
        assert report.hypothesis_ok
        assert report.all_pass
        csv_text = report.to_csv()
        assert csv_text.splitlines()[0] == "check,scope,lhs,rhs,margin,status"

    def test_check_row_margin(self):
        row = CheckRow("x", "s", 1.0, 3.0, "pass")
        assert row.margin == 2.0


class TestCli:
    def test_usage_error_on_bad_config(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[run]\nn_particles = -1\n")
        assert cli_main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2

    def test_run_writes_deterministic_outputs(self, tmp_path):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(CLASSIC_TEXT)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert cli_main(["run", "--config", str(cfg_path), "--out", str(out1)]) == 0
        assert cli_main(
            ["run", "--config", str(cfg_path), "--out", str(out2), "--threads", "8"]
        ) == 0
        for name in ("raw.csv", "stats.csv", "oracle.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_adaptive_subcommand_enforces_kind(self, tmp_path):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(CLASSIC_TEXT)
        assert cli_main(["adaptive", "--config", str(cfg_path), "--out", str(tmp_path)]) == 2

    def test_oracle_subcommand(self, tmp_path):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(CLASSIC_TEXT)
        assert cli_main(["oracle", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
        text = (tmp_path / "oracle.csv").read_text()
        assert text.splitlines()[0].startswith("step,log_gamma1,gamma1")

    def test_tune_subcommand(self, capsys):
        assert cli_main(["tune", "--a", "0.5", "--g-sup", "1.0", "--particles", "100"]) == 0
        out = capsys.readouterr().out
        assert "r1_star=" in out and "b_max=" in out

    def test_particle_override(self, tmp_path):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(CLASSIC_TEXT)
        out = tmp_path / "o"
        assert cli_main(
            ["run", "--config", str(cfg_path), "--out", str(out), "--particles", "10"]
        ) == 0
        first_rows = (out / "raw.csv").read_text().splitlines()[1]
        assert first_rows.split(",")[5] == "10"  # initial ess equals N
