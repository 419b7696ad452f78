import csv
import logging

import numpy as np
import pandas as pd
import pytest
from scipy.stats import spearmanr

from mixopt.bench import (
    AGGREGATE_COLUMNS,
    TRACE_COLUMNS,
    SyntheticSpec,
    TableError,
    aggregate_series,
    cost_to_best,
    cost_to_optimum,
    curve_from_frame,
    export_results,
    load_results,
    load_run_table,
    lowest_fidelity_share,
    make_synthetic_table,
    simulate,
    step_values,
    sub_seed,
    write_run_table,
)
from mixopt.types import Budget

from . import oracles

FIDS = {"small": {"parameters": 1_000_000, "cost": 1}, "big": {"parameters": 1_000_000_000, "cost": 10}}


def toy_manifest(**extra):
    m = {
        "mixture_columns": ["web", "code"],
        "fidelity_column": "model",
        "fidelities": FIDS,
        "metric_columns": {"ppl": "lower", "acc": "higher"},
    }
    m.update(extra)
    return m


def write_toy(tmp_path, rows=None):
    rows = rows or [
        {"web": 0.3, "code": 0.7001, "model": "small", "ppl": 10.0, "acc": 0.5, "minutes": 3.0},
        {"web": 0.6, "code": 0.4, "model": "small", "ppl": 12.0, "acc": 0.4, "minutes": 5.0},
        {"web": 0.5, "code": 0.5, "model": "big", "ppl": 8.0, "acc": 0.7, "minutes": 40.0},
    ]
    path = tmp_path / "runs.csv"
    pd.DataFrame(rows).to_csv(path, index=False)
    return path


class TestIngestion:
    def test_renormalizes(self, tmp_path):
        t = load_run_table(write_toy(tmp_path), toy_manifest())
        assert t.mixtures[0].sum() == pytest.approx(1.0, abs=1e-15)
        assert t.mixtures[0][0] == pytest.approx(0.3 / 1.0001)

    def test_lower_is_better_negated(self, tmp_path):
        t = load_run_table(write_toy(tmp_path), toy_manifest())
        np.testing.assert_array_equal(t.target_values("ppl"), [-10.0, -12.0, -8.0])
        np.testing.assert_array_equal(t.target_values("acc"), [0.5, 0.4, 0.7])

    def test_target_is_unweighted_mean(self, tmp_path):
        man = toy_manifest(metric_columns={"ppl": "higher", "acc": "higher"}, targets={"both": ["ppl", "acc"]})
        t = load_run_table(write_toy(tmp_path), man)
        np.testing.assert_allclose(t.target_values("both"), [5.25, 6.2, 4.35])

    def test_three_targets_from_one_table(self, tmp_path):
        man = toy_manifest(
            metric_columns={"id1": "higher", "id2": "higher", "ood1": "higher"},
            targets={"ID": ["id1", "id2"], "OOD": ["ood1"], "ID+OOD": ["id1", "id2", "ood1"]},
        )
        rows = [{"web": 1, "code": 1, "model": "big", "id1": 1.0, "id2": 2.0, "ood1": 6.0}]
        t = load_run_table(write_toy(tmp_path, rows), man)
        assert t.target_values("ID")[0] == 1.5
        assert t.target_values("OOD")[0] == 6.0
        assert t.target_values("ID+OOD")[0] == 3.0

    def test_missing_column_named(self, tmp_path):
        with pytest.raises(TableError, match="nope"):
            load_run_table(write_toy(tmp_path), toy_manifest(metric_columns={"nope": "higher"}))

    def test_unknown_fidelity_label(self, tmp_path):
        man = toy_manifest(fidelities={"small": FIDS["small"]})
        with pytest.raises(TableError, match="big"):
            load_run_table(write_toy(tmp_path), man)

    def test_nan_metric_rejected_or_dropped(self, tmp_path):
        rows = [
            {"web": 1, "code": 1, "model": "big", "ppl": np.nan, "acc": 1.0},
            {"web": 1, "code": 2, "model": "big", "ppl": 3.0, "acc": 1.0},
            {"web": 2, "code": 1, "model": "small", "ppl": 3.0, "acc": 1.0},
        ]
        path = write_toy(tmp_path, rows)
        with pytest.raises(TableError, match="ppl"):
            load_run_table(path, toy_manifest())
        t = load_run_table(path, toy_manifest(drop_missing=True))
        assert t.problem("ppl").count("big") == 1

    def test_count_mismatch_only_warns(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING):
            t = load_run_table(write_toy(tmp_path), toy_manifest(expected_counts={"small": 256, "big": 1}))
        assert t.counts() == {"small": 2, "big": 1}
        assert "expected 256" in caplog.text

    def test_cost_sources(self, tmp_path):
        path = write_toy(tmp_path)
        t = load_run_table(path, toy_manifest(cost_source="parameters"))
        assert [f.cost for f in t.fidelities] == [1e-3, 1.0]
        t = load_run_table(path, toy_manifest(cost_source="time", time_column="minutes"))
        assert [f.cost for f in t.fidelities] == [4.0, 40.0]

    def test_manifest_file(self, tmp_path):
        import yaml

        mpath = tmp_path / "m.yaml"
        mpath.write_text(yaml.safe_dump(toy_manifest()))
        assert load_run_table(write_toy(tmp_path), mpath).d == 2

    def test_write_round_trip(self, tmp_path):
        t = make_synthetic_table(SyntheticSpec(counts=(10, 6, 4)), 1)
        csv_path, man_path = write_run_table(t, tmp_path)
        t2 = load_run_table(csv_path, man_path)
        # renormalization on ingest may move the last ulp
        np.testing.assert_allclose(t2.mixtures, t.mixtures, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(t2.target_values("score"), t.target_values("score"))
        assert t2.fidelities == t.fidelities


class TestSynthetic:
    def test_deterministic(self):
        a, b = make_synthetic_table(SyntheticSpec(), 3), make_synthetic_table(SyntheticSpec(), 3)
        np.testing.assert_array_equal(a.mixtures, b.mixtures)
        np.testing.assert_array_equal(a.metrics.to_numpy(), b.metrics.to_numpy())

    def test_perfect_correlation(self):
        p = make_synthetic_table(SyntheticSpec(rho=1.0, noise=0.0), 4).problem("score")
        k = p.count("f2")
        for fid in ("f0", "f1"):
            np.testing.assert_allclose(p.scores[fid][:k], p.scores["f2"], atol=1e-14)
            np.testing.assert_array_equal(p.mixtures[fid][:k], p.mixtures["f2"])
        assert np.argmax(p.scores["f0"][:k]) == p.target_optimum()[0]

    def test_zero_correlation(self):
        rs = []
        for seed in range(100):
            p = make_synthetic_table(SyntheticSpec(rho=0.0), seed).problem("score")
            k = p.count("f2")
            rs.append(spearmanr(p.scores["f0"][:k], p.scores["f2"]).statistic)
        assert abs(np.mean(rs)) < 0.3

    @pytest.mark.parametrize(
        "bad",
        [
            dict(d=1),
            dict(counts=(4, 8, 2)),
            dict(rho=1.5),
            dict(noise=-1.0),
            dict(costs=(1.0, 2.0)),
            dict(counts=(0, 0, 0)),
        ],
    )
    def test_invalid_spec(self, bad):
        with pytest.raises(TableError):
            make_synthetic_table(SyntheticSpec(**bad), 0)


class TestAggregation:
    def test_step_values(self):
        out = step_values([1.0, 3.0], [5.0, 7.0], np.array([0.5, 1.0, 2.0, 3.0, 9.0]))
        np.testing.assert_array_equal(out[1:], [5.0, 5.0, 7.0, 7.0])
        assert np.isnan(out[0])

    def test_union_grid_carry_forward(self):
        c = aggregate_series([([1.0, 2.0], [0.0, 1.0]), ([1.0, 3.0], [2.0, 4.0])])
        np.testing.assert_array_equal(c.cost, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(c.mean, [1.0, 1.5, 2.5])
        np.testing.assert_allclose(c.std, [1.0, 0.5, 1.5])
        np.testing.assert_array_equal(c.n_seeds, [2, 2, 2])

    def test_seed_entering_late(self):
        c = aggregate_series([([1.0], [0.0]), ([2.0], [4.0])])
        np.testing.assert_array_equal(c.n_seeds, [1, 2])
        np.testing.assert_allclose(c.mean, [0.0, 2.0])

    def test_cost_helpers(self):
        p = make_synthetic_table(SyntheticSpec(counts=(12,), parameter_counts=(1e9,), costs=(2.0,)), 0).problem("score")
        ts = simulate(["random"], p, seeds=1)
        tr = ts[("random", "score")][0]
        _, opt = p.target_optimum()
        c = cost_to_optimum(tr, opt)
        assert np.isfinite(c) and c % 2.0 == 0.0
        assert cost_to_best(tr) == c
        assert cost_to_optimum(tr, opt + 1.0) == float("inf")
        assert lowest_fidelity_share(tr, "f0", 0.5) == 1.0


class TestSimulate:
    @pytest.fixture(scope="class")
    @classmethod
    def problem(cls):
        return make_synthetic_table(SyntheticSpec(counts=(16, 8, 6)), 2).problem("score")

    def test_shapes(self, problem):
        ts = simulate(["bo"], problem, seeds=5, budget=Budget(float("inf"), 4))
        assert len(ts[("bo", "score")]) == 5
        assert list(ts.curves) == [("bo", "score")]

    def test_curve_non_decreasing(self, problem):
        ts = simulate(["bo", "random"], problem, seeds=3, budget=Budget(float("inf"), 6))
        for c in ts.curves.values():
            assert np.all(np.diff(c.mean) >= -1e-12)

    def test_costs_sum_exactly(self, problem):
        ts = simulate(["mfbo", "regmix"], problem, seeds=2, budget=Budget(60.0, 10), query_fidelity="f0")
        costs = {f.id: f.cost for f in problem.fidelities}
        for traces in ts.traces.values():
            for t in traces:
                assert t.total_cost == sum(costs[r.fidelity] for r in t.records)
                assert t.total_cost <= 60.0

    def test_only_table_candidates(self, problem):
        ts = simulate(["mfbo", "zeroshot"], problem, seeds=2, budget=Budget(float("inf"), 8), query_fidelity="f1")
        for traces in ts.traces.values():
            for t in traces:
                for r in t.records:
                    problem.index_of(r.fidelity, r.mixture)

    def test_sub_seed_independent_of_methods(self, problem):
        a = simulate(["random"], problem, seeds=2, global_seed=4, budget=Budget(float("inf"), 3))
        b = simulate(["regmix", "random"], problem, seeds=2, global_seed=4, budget=Budget(float("inf"), 3))
        assert a[("random", "score")] == b[("random", "score")]
        assert sub_seed(4, 0) != sub_seed(4, 1) and sub_seed(4, 0) == sub_seed(4, 0)

    def test_random_cost_to_optimum(self):
        k = 20
        p = make_synthetic_table(SyntheticSpec(counts=(k,), parameter_counts=(1e9,), costs=(3.0,)), 7).problem("score")
        _, opt = p.target_optimum()
        ts = simulate(["random"], p, seeds=200, global_seed=11)
        c = np.mean([cost_to_optimum(t, opt) for t in ts[("random", "score")]])
        expected = oracles.expected_random_cost_to_optimum(k, 3.0)
        assert abs(c - expected) <= 0.15 * expected

    def test_rejects_empty(self, problem):
        with pytest.raises(ValueError):
            simulate([], problem)
        with pytest.raises(ValueError):
            simulate(["bo"], problem, seeds=0)
        with pytest.raises(ValueError):
            simulate(["nope"], problem, seeds=1)


class TestExport:
    @pytest.fixture(scope="class")
    @classmethod
    def results(cls):
        p = make_synthetic_table(SyntheticSpec(counts=(12, 8, 5)), 5).problem("score")
        return simulate(["bo", "mfbo", "random"], p, seeds=2, budget=Budget(float("inf"), 5), query_fidelity="f0")

    def test_layout_and_headers(self, results, tmp_path):
        paths = export_results(results, tmp_path)
        names = sorted(p.name for p in paths)
        assert names == ["aggregate.csv", "trace__bo__score.csv", "trace__mfbo__score.csv", "trace__random__score.csv"]
        with open(tmp_path / "trace__bo__score.csv") as fh:
            assert tuple(next(csv.reader(fh))) == TRACE_COLUMNS
        with open(tmp_path / "aggregate.csv") as fh:
            assert tuple(next(csv.reader(fh))) == AGGREGATE_COLUMNS

    def test_round_trip(self, results, tmp_path):
        export_results(results, tmp_path)
        loaded = load_results(tmp_path)
        assert set(loaded.curves) == set(results.curves)
        for key, c in results.curves.items():
            l = loaded.curves[key]
            np.testing.assert_allclose(l.cost, c.cost, rtol=0, atol=1e-12)
            np.testing.assert_allclose(l.mean, c.mean, rtol=0, atol=1e-12)
            np.testing.assert_allclose(l.std, c.std, rtol=0, atol=1e-12)
            np.testing.assert_array_equal(l.n_seeds, c.n_seeds)
            again = curve_from_frame(loaded.traces[key], *key)
            np.testing.assert_allclose(again.mean, c.mean, rtol=0, atol=1e-12)

    def test_mixture_column_parses(self, results, tmp_path):
        export_results(results, tmp_path)
        df = load_results(tmp_path).traces[("bo", "score")]
        first = results[("bo", "score")][0].records[0].recommended.weights
        assert tuple(float(x) for x in df["recommended_mixture"].iloc[0].split(";")) == first

    def test_empty_rejected(self, tmp_path):
        from mixopt.bench import TraceSet

        with pytest.raises(ValueError):
            export_results(TraceSet(), tmp_path)

    def test_unwritable_path(self, results, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            export_results(results, blocker / "sub")
