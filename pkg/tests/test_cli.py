import hashlib

import numpy as np
import pandas as pd
import pytest
import yaml

from mixopt.bench import load_run_table
from mixopt.cli import main


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def synth(tmp_path):
    out = tmp_path / "syn"
    assert main(["synth", "--d", "3", "--counts", "12,8,5", "--costs", "1,4,16",
                 "--parameter-counts", "1e6,1e8,1e9", "--seed", "1", "--out", str(out)]) == 0
    return out / "table.csv", out / "table.manifest.yaml"


@pytest.fixture
def single(tmp_path):
    out = tmp_path / "single"
    assert main(["synth", "--d", "3", "--counts", "20", "--costs", "1", "--parameter-counts", "1e9",
                 "--seed", "3", "--out", str(out)]) == 0
    return out / "table.csv", out / "table.manifest.yaml"


class TestIngest:
    def test_ok(self, synth, capsys):
        assert main(["ingest", "--table", str(synth[0]), "--manifest", str(synth[1])]) == 0
        out = capsys.readouterr().out
        assert "fidelities (3)" in out and "rows=12" in out

    def test_missing_column(self, synth, tmp_path, capsys):
        man = yaml.safe_load(synth[1].read_text())
        man["metric_columns"] = {"absent_metric": "higher"}
        bad = tmp_path / "bad.yaml"
        bad.write_text(yaml.safe_dump(man))
        assert main(["ingest", "--table", str(synth[0]), "--manifest", str(bad)]) != 0
        assert "absent_metric" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["ingest", "--table", str(tmp_path / "no.csv"), "--manifest", str(tmp_path / "no.yaml")]) != 0


class TestRun:
    def test_bo_finds_argmax(self, single, tmp_path, capsys):
        out = tmp_path / "res"
        code = main(["run", "--table", str(single[0]), "--manifest", str(single[1]), "--mode", "bo",
                     "--seeds", "1", "--restarts", "3", "--out", str(out)])
        assert code == 0
        p = load_run_table(*single).problem("score")
        _, opt = p.target_optimum()
        df = pd.read_csv(out / "trace__bo__score.csv")
        assert df["cumulative_best_target_score"].iloc[-1] == opt
        assert "bo / score" in capsys.readouterr().out

    def test_mfbo_needs_two_fidelities(self, single, tmp_path, capsys):
        code = main(["run", "--table", str(single[0]), "--manifest", str(single[1]), "--mode", "mfbo",
                     "--out", str(tmp_path / "r")])
        assert code != 0
        assert "2 fidelities" in capsys.readouterr().err
        assert not (tmp_path / "r").exists()

    def test_unknown_query_fidelity(self, synth, tmp_path, capsys):
        code = main(["run", "--table", str(synth[0]), "--manifest", str(synth[1]), "--query-fidelity", "zz",
                     "--out", str(tmp_path / "r")])
        assert code != 0 and "zz" in capsys.readouterr().err

    def test_rerun_is_byte_identical(self, synth, tmp_path):
        args = ["run", "--table", str(synth[0]), "--manifest", str(synth[1]), "--methods", "mfbo,random",
                "--steps", "6", "--seeds", "2", "--seed", "5", "--restarts", "2"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
        for name in files:
            assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)

    def test_inputs_not_mutated(self, synth, tmp_path):
        before = [digest(p) for p in synth]
        main(["run", "--table", str(synth[0]), "--manifest", str(synth[1]), "--steps", "3", "--seeds", "1",
              "--restarts", "2", "--out", str(tmp_path / "r")])
        assert [digest(p) for p in synth] == before

    def test_config_file_and_override(self, synth, tmp_path):
        cfg = tmp_path / "campaign.yaml"
        cfg.write_text(yaml.safe_dump({
            "table": str(synth[0]), "manifest": str(synth[1]), "methods": "random",
            "steps": 3, "seeds": 2, "out": str(tmp_path / "cfg"),
        }))
        assert main(["run", "--config", str(cfg)]) == 0
        assert pd.read_csv(tmp_path / "cfg" / "trace__random__score.csv")["seed"].nunique() == 2
        assert main(["run", "--config", str(cfg), "--seeds", "3"]) == 0
        assert pd.read_csv(tmp_path / "cfg" / "trace__random__score.csv")["seed"].nunique() == 3


class TestCompareAndImportance:
    def test_compare(self, synth, tmp_path, capsys):
        out = tmp_path / "r"
        main(["run", "--table", str(synth[0]), "--manifest", str(synth[1]), "--methods", "random,regmix",
              "--steps", "4", "--seeds", "2", "--out", str(out)])
        traces = sorted(str(p) for p in out.glob("trace__*.csv"))
        assert main(["compare", *traces, "--out", str(tmp_path / "cmp")]) == 0
        agg = pd.read_csv(tmp_path / "cmp" / "aggregate.csv")
        assert set(agg["method"]) == {"random", "regmix"}
        ref = pd.read_csv(out / "aggregate.csv")
        np.testing.assert_allclose(agg.sort_values(["method", "cost"])["mean_score"].to_numpy(),
                                   ref.sort_values(["method", "cost"])["mean_score"].to_numpy(), atol=1e-12)
        assert main(["compare", str(tmp_path / "nothing.csv")]) != 0

    def test_importance(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        X = rng.dirichlet(np.ones(3), 40)
        df = pd.DataFrame(X, columns=["x", "y", "z"])
        df["model"] = "m"
        df["bench"] = np.sin(12 * X[:, 1])
        df.to_csv(tmp_path / "t.csv", index=False)
        (tmp_path / "m.yaml").write_text(yaml.safe_dump({
            "mixture_columns": ["x", "y", "z"], "fidelity_column": "model",
            "fidelities": {"m": {"parameters": 1e9, "cost": 1.0}}, "metric_columns": {"bench": "higher"},
        }))
        base = ["importance", "--table", str(tmp_path / "t.csv"), "--manifest", str(tmp_path / "m.yaml")]
        assert main(base + ["--fidelity", "m", "--out", str(tmp_path / "imp.csv")]) == 0
        imp = pd.read_csv(tmp_path / "imp.csv")
        assert list(imp.columns) == ["domain", "bench"]
        assert imp.loc[imp["bench"].idxmax(), "domain"] == "y"
        assert main(base + ["--fidelity", "nope"]) != 0
        assert "nope" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "mixopt", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "synth" in r.stdout
