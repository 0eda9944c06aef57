import json
import os

import numpy as np
import pytest

from conftest import stub_command
from epsbo.experiment import (
    ExperimentConfig,
    TrialRecord,
    IterationRow,
    emit_results,
    iteration_rows,
    load_rows,
    non_time_fields,
    run_experiment,
    run_trial,
    sorted_quantile,
    summarize,
    summary_path_for,
    trial_streams,
    validate_config,
)
from epsbo.policies import PolicySpec

FAST_POLICY = PolicySpec("eps-ts", epsilon=0.5, n_paths=4, n_spectral=100)


def fast_config(**overrides):
    base = dict(
        policy=FAST_POLICY,
        n_init=5,
        n_iters=4,
        objective="ackley2",
        base_seed=3,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def record_signature(record):
    return (
        record.initial_x,
        record.initial_y,
        tuple(
            (r.k, r.branch, r.x, r.y, r.y_min, r.log_error) for r in record.rows
        ),
    )


class TestConfigValidation:
    def test_well_formed(self):
        assert validate_config(fast_config()) == []

    def test_bad_fields_named(self):
        with pytest.raises(ValueError, match="n_init"):
            fast_config(n_init=1)
        with pytest.raises(ValueError, match="n_trials"):
            fast_config(n_trials=0)
        with pytest.raises(ValueError, match="out_format"):
            fast_config(out_format="xml")

    def test_objective_exclusivity(self):
        with pytest.raises(ValueError, match="objective"):
            fast_config(objective=None)
        with pytest.raises(ValueError, match="external_box"):
            fast_config(
                objective=None, external_cmd=("cat",), external_box=None
            )

    def test_policy_validation_names_field(self):
        with pytest.raises(ValueError, match="epsilon"):
            PolicySpec("eps-ts", epsilon=1.5)


class TestRunTrial:
    def test_accounting_and_monotone_incumbent(self):
        record = run_trial(fast_config(), 0)
        assert record.error is None
        assert len(record.rows) == 4
        assert len(record.initial_x) == 5
        y_min = np.array([r.y_min for r in record.rows])
        assert np.all(np.diff(y_min) <= 0.0)
        assert record.rows[0].y_min <= min(record.initial_y)
        for row in record.rows:
            assert row.y_min <= row.y
            assert row.log_error is not None

    def test_rerun_reproduces_bitwise(self):
        a = run_trial(fast_config(), 1)
        b = run_trial(fast_config(), 1)
        assert record_signature(a) == record_signature(b)

    def test_eps_extremes_match_plain_policies(self):
        shared = dict(n_init=5, n_iters=3, objective="ackley2", base_seed=9)
        eps1 = run_trial(
            ExperimentConfig(policy=PolicySpec("eps-ts", epsilon=1.0, n_paths=4, n_spectral=100), **shared), 0
        )
        gen = run_trial(
            ExperimentConfig(policy=PolicySpec("generic-ts", n_spectral=100), **shared), 0
        )
        assert record_signature(eps1) == record_signature(gen)
        eps0 = run_trial(
            ExperimentConfig(policy=PolicySpec("eps-ts", epsilon=0.0, n_paths=4, n_spectral=100), **shared), 0
        )
        avg = run_trial(
            ExperimentConfig(policy=PolicySpec("averaging-ts", n_paths=4, n_spectral=100), **shared), 0
        )
        assert record_signature(eps0) == record_signature(avg)

    def test_failing_objective_aborts_with_error(self):
        cfg = ExperimentConfig(
            policy=FAST_POLICY,
            n_init=5,
            n_iters=3,
            objective=None,
            external_cmd=stub_command("nan"),
            external_box=((0.0, 1.0), (0.0, 1.0)),
        )
        record = run_trial(cfg, 0)
        assert record.error is not None and "ObjectiveError" in record.error
        assert record.rows == ()


class TestRunExperiment:
    def test_initial_designs_policy_independent(self):
        shared = dict(n_init=6, n_iters=1, objective="ackley2", base_seed=21, n_trials=2)
        recs_a, _ = run_experiment(
            ExperimentConfig(policy=PolicySpec("generic-ts", n_spectral=100), **shared)
        )
        recs_b, _ = run_experiment(
            ExperimentConfig(policy=PolicySpec("lcb"), **shared)
        )
        for a, b in zip(recs_a, recs_b):
            assert a.initial_x == b.initial_x
            assert a.initial_y == b.initial_y

    def test_trials_differ_across_ids(self):
        records, _ = run_experiment(fast_config(n_trials=2, n_iters=2))
        assert records[0].initial_x != records[1].initial_x

    def test_parallel_matches_serial(self):
        serial, _ = run_experiment(fast_config(n_trials=3, n_iters=2))
        parallel, _ = run_experiment(fast_config(n_trials=3, n_iters=2, n_workers=3))
        assert [r.trial_id for r in parallel] == [0, 1, 2]
        for a, b in zip(serial, parallel):
            assert record_signature(a) == record_signature(b)

    def test_thread_cap_env(self, monkeypatch):
        monkeypatch.setenv("EPS_TS_BO_THREADS", "1")
        records, stats = run_experiment(fast_config(n_trials=2, n_iters=2, n_workers=8))
        assert stats.n_failed == 0 and len(records) == 2

    def test_failed_trials_counted_not_fatal(self):
        cfg = ExperimentConfig(
            policy=FAST_POLICY,
            n_init=5,
            n_iters=2,
            objective=None,
            external_cmd=stub_command("nan"),
            external_box=((0.0, 1.0), (0.0, 1.0)),
            n_trials=2,
        )
        records, stats = run_experiment(cfg)
        assert stats.n_failed == 2 and stats.n_trials == 2
        assert stats.iterations == ()


class TestSummaries:
    def test_single_trial_degenerate_quartiles(self):
        records, stats = run_experiment(fast_config(n_trials=1))
        assert stats.metric == "log_error"
        for i in range(len(stats.iterations)):
            assert stats.q1[i] == stats.median[i] == stats.q3[i]

    def test_quantiles_match_sort_oracle(self, rng):
        # independent sort-based oracle, same linear-interpolation rule
        for n in (1, 2, 5, 20, 101):
            values = list(rng.standard_normal(n))
            for q in (0.25, 0.5, 0.75):
                v = np.sort(np.asarray(values))
                h = (n - 1) * q
                lo, hi = int(np.floor(h)), int(np.ceil(h))
                oracle = float(v[lo] + (v[hi] - v[lo]) * (h - lo))
                assert sorted_quantile(values, q) == oracle

    def test_quartiles_ordered(self):
        _, stats = run_experiment(fast_config(n_trials=3, n_iters=3))
        for i in range(len(stats.iterations)):
            assert stats.q1[i] <= stats.median[i] <= stats.q3[i]

    def test_branch_times_present(self):
        _, stats = run_experiment(fast_config(n_trials=2, n_iters=4))
        assert set(stats.branch_mean_proposal_s) <= {"explore", "exploit"}
        assert stats.branch_mean_proposal_s


class TestEmission:
    @pytest.mark.parametrize("fmt", ["csv", "jsonl"])
    def test_round_trip_exact(self, fmt, tmp_path):
        records, stats = run_experiment(fast_config(n_trials=2, n_iters=3))
        out = tmp_path / f"results.{fmt}"
        files = emit_results(records, stats, fmt, out)
        assert files[0] == out and files[1] == summary_path_for(out)
        parsed = load_rows(out)
        original = iteration_rows(records)
        assert len(parsed) == len(original)
        for a, b in zip(parsed, original):
            assert a == b

    def test_log_error_empty_when_no_known_optimum(self, tmp_path):
        cfg = ExperimentConfig(
            policy=PolicySpec("generic-ts", n_spectral=100),
            n_init=4,
            n_iters=2,
            objective=None,
            external_cmd=stub_command("sum"),
            external_box=((0.0, 1.0), (0.0, 1.0)),
        )
        records, stats = run_experiment(cfg)
        assert stats.metric == "y_min"
        out = tmp_path / "r.csv"
        emit_results(records, stats, "csv", out)
        header, first = out.read_text().splitlines()[:2]
        idx = header.split(",").index("log_error")
        assert first.split(",")[idx] == ""
        assert load_rows(out)[0]["log_error"] is None

    def test_unwritable_path_raises_before_discarding(self):
        records, stats = run_experiment(fast_config(n_trials=1, n_iters=2))
        with pytest.raises(OSError):
            emit_results(records, stats, "csv", "/no-such-dir/results.csv")
        assert records[0].rows  # still in memory

    def test_seventeen_digit_round_trip(self, tmp_path):
        row = IterationRow(1, "explore", (1.0 / 3.0,), 0.1 + 0.2, 0.3, -0.123456789012345678, 0.0, 0.0)
        record = TrialRecord(0, 2, (row,))
        out = tmp_path / "r.csv"
        emit_results(record and [record], summarize([record]), "csv", out)
        parsed = load_rows(out)[0]
        assert parsed["x_1"] == 1.0 / 3.0
        assert parsed["y"] == 0.1 + 0.2

    def test_non_time_fields_strips_clock_columns(self):
        records, _ = run_experiment(fast_config(n_trials=1, n_iters=2))
        rows = non_time_fields(iteration_rows(records))
        assert all("proposal_s" not in r and "iter_s" not in r for r in rows)


class TestStreams:
    def test_streams_are_named_and_independent(self):
        streams = trial_streams(5, 2)
        assert set(streams) == {"design", "switch", "feature", "weight", "fit", "noise", "dedup"}
        a = streams["design"].random(4)
        b = trial_streams(5, 2)["design"].random(4)
        assert np.array_equal(a, b)
        c = trial_streams(5, 3)["design"].random(4)
        assert not np.array_equal(a, c)
