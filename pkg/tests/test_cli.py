import csv
import json

import pytest

from glmpricing.cli import main
from glmpricing.config import ExperimentConfig


def files_under(path):
    return sorted(p.relative_to(path).as_posix() for p in path.rglob("*") if p.is_file())


@pytest.fixture(scope="module")
def bundled_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", "expA_d6", "--out", str(out), "--trials", "2"]) == 0
    return out


class TestRun:
    def test_bundled_outputs(self, bundled_run):
        assert files_under(bundled_run) == ["expA_d6/aggregate.json", "expA_d6/trial_000.csv",
                                            "expA_d6/trial_001.csv"]
        data = json.loads((bundled_run / "expA_d6" / "aggregate.json").read_text())
        assert len(data["per_t"]) == 1500
        with open(bundled_run / "expA_d6" / "trial_000.csv") as fh:
            assert sum(1 for _ in fh) == 1501

    def test_config_echo_round_trip(self, bundled_run):
        data = json.loads((bundled_run / "expA_d6" / "aggregate.json").read_text())
        cfg = ExperimentConfig.from_dict(data["config_echo"])
        assert cfg.name == "expA_d6" and cfg.trials == 2 and cfg.seed == 2022

    def test_rerun_byte_identical(self, bundled_run, tmp_path):
        assert main(["run", "expA_d6", "--out", str(tmp_path), "--trials", "2"]) == 0
        for rel in files_under(bundled_run):
            assert (tmp_path / rel).read_bytes() == (bundled_run / rel).read_bytes()

    def test_bad_config_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[experiment]\nT = 0\n")
        assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 2
        assert "T" in capsys.readouterr().err
        assert not (tmp_path / "out").exists()

    def test_runtime_failure_exit_1(self, tmp_path, capsys):
        cfg = tmp_path / "fail.toml"
        cfg.write_text("[experiment]\nd = 1\nT = 50\ntrials = 1\n[demand]\nnoise = 'bernoulli'\n"
                       "beta_gen = [2.0]\ngamma_gen = [0.0]\n[policy]\nkind = 'oracle'\n")
        assert main(["run", str(cfg), "--out", str(tmp_path)]) == 1
        assert "trial 0" in capsys.readouterr().err


class TestAudit:
    def test_coverage_audit_file(self, tmp_path):
        cfg = tmp_path / "cov.toml"
        cfg.write_text("[experiment]\nd = 2\nT = 30\ntrials = 3\n[policy]\nkind = 'ts'\n"
                       "radius_mode = 'corollary1'\nts_scale_mode = 'corollary1'\n")
        assert main(["audit", str(cfg), "--kind", "coverage", "--out", str(tmp_path / "o")]) == 0
        data = json.loads((tmp_path / "o" / "cov" / "audit_coverage.json").read_text())
        assert 0.0 <= data["fraction"] <= 1.0 and len(data["trials"]) == 3

    def test_potential_audit_file(self, tmp_path):
        cfg = tmp_path / "pot.toml"
        cfg.write_text("[experiment]\nd = 2\nT = 30\ntrials = 2\n[covariates]\nnormalize = 'feature'\n"
                       "[policy]\nkind = 'cils'\n")
        assert main(["audit", str(cfg), "--kind", "potential", "--out", str(tmp_path / "o")]) == 0
        data = json.loads((tmp_path / "o" / "pot" / "audit_potential.json").read_text())
        assert data["all_ok"] is True


class TestPlotData:
    def test_aggregate_three_points(self, tmp_path):
        values = [0.1, 0.30000000000000004, 1e-17]
        agg = tmp_path / "agg.json"
        agg.write_text(json.dumps({"config_echo": {}, "audits": {},
                                   "per_t": [{"t": i + 1, "mean_cum_regret": v, "stderr": 0.0}
                                             for i, v in enumerate(values)]}))
        out = tmp_path / "plot.csv"
        assert main(["plot-data", str(agg), "--out", str(out)]) == 0
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["t", "mean_cum_regret"]
        assert [int(r[0]) for r in rows[1:]] == [1, 2, 3]
        assert [float(r[1]) for r in rows[1:]] == values

    def test_ledger_input(self, bundled_run, tmp_path):
        out = tmp_path / "plot.csv"
        assert main(["plot-data", str(bundled_run / "expA_d6" / "trial_001.csv"), "--out", str(out)]) == 0
        rows = list(csv.reader(out.open()))[1:]
        ledger = list(csv.DictReader((bundled_run / "expA_d6" / "trial_001.csv").open()))
        assert len(rows) == 1500
        assert all(float(r[1]) == float(l["cum_regret"]) for r, l in zip(rows, ledger))

    def test_empty_ledger(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        assert main(["plot-data", str(empty), "--out", str(tmp_path / "o.csv")]) == 1

    def test_parse_error_names_row(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,cum_regret\n1,0.5\n2,oops\n")
        assert main(["plot-data", str(bad), "--out", str(tmp_path / "o.csv")]) == 1
        assert "row 3" in capsys.readouterr().err
