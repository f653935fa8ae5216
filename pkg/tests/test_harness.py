import json
import math

import numpy as np
import pytest

from glmpricing.config import ExperimentConfig
from glmpricing.demand import ParamVector
from glmpricing.harness import (LEDGER_COLUMNS, TrialError, coverage_audit, potential_audit,
                                run_experiment, run_trial, run_trials, write_aggregate,
                                write_ledger)

SMALL = ExperimentConfig(name="small", d=2, T=60, trials=3, seed=5, policy="ucb", K=10)


def small(**kw):
    return SMALL.replace(**kw)


class TestRunTrial:
    def test_oracle_has_no_regret(self):
        tr = run_trial(small(policy="oracle"), 0)
        assert np.abs(tr.cum_regret).max() <= 60 * 1e-8

    @pytest.mark.parametrize("policy", ["ucb", "ucb_approx", "ts", "ts_approx", "ce", "cils"])
    def test_regret_nonnegative(self, policy):
        tr = run_trial(small(policy=policy), 1)
        assert tr.inst_regret.min() >= -1e-8
        assert np.all(np.diff(tr.cum_regret) >= -1e-8)
        assert tr.prices.min() >= 0.1 and tr.prices.max() <= 5.0

    def test_deterministic(self, tmp_path):
        a, b = run_trial(small(policy="ts"), 2), run_trial(small(policy="ts"), 2)
        write_ledger(a, tmp_path / "a.csv")
        write_ledger(b, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_ledger_regret_identity(self, tmp_path):
        tr = run_trial(small(), 0)
        path = tmp_path / "ledger.csv"
        write_ledger(tr, path)
        rows = np.genfromtxt(path, delimiter=",", names=True)
        assert tuple(rows.dtype.names) == LEDGER_COLUMNS
        assert len(rows) == 60
        recomputed = np.cumsum(rows["oracle_revenue"] - rows["expected_revenue"])
        np.testing.assert_allclose(recomputed, rows["cum_regret"], atol=1e-8)

    def test_expected_revenue_accounting(self):
        tr = run_trial(small(), 0)
        d = 2
        beta, gamma = tr.theta_star[:d], tr.theta_star[d:]
        mean = tr.x @ beta + (tr.x @ gamma) * tr.prices
        np.testing.assert_allclose(tr.expected_revenue, tr.prices * mean, atol=1e-14)

    def test_seed_pairing(self):
        a = run_trial(small(policy="ucb", cov_mode="phased"), 4)
        b = run_trial(small(policy="cils", cov_mode="phased"), 4)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.theta_star, b.theta_star)

    def test_theta_star_draw(self):
        d = 6
        tr = run_trial(small(d=d, policy="oracle", T=5), 0)
        beta, gamma = tr.theta_star[:d], tr.theta_star[d:]
        s = 1 / math.sqrt(d)
        assert np.all((s <= beta) & (beta <= 2 * s))
        assert np.all((-s <= gamma) & (gamma <= 0))

    def test_pinned_theta(self):
        pinned = ParamVector([0.7, 0.6], [-0.2, -0.1])
        tr = run_trial(small(policy="oracle"), 3, theta_star=pinned)
        np.testing.assert_array_equal(tr.theta_star, pinned.theta)

    def test_ce_two_period_hand_simulation(self):
        cfg = ExperimentConfig(d=1, T=2, trials=1, sigma=0.0, policy="ce", beta_gen=(1.5,), gamma_gen=(-0.5,))
        tr = run_trial(cfg, 0)
        (x1,), (x2,) = tr.x
        p1 = tr.prices[0]
        # first price from beta_hat = 0: a = 0, so the plug-in optimum clips to p_min
        assert p1 == 0.1
        # noise-free ridge update with lambda = 1 on the gamma-adjusted response
        beta_hat = x1 * (tr.demand[0] - x1 * -0.5 * p1) / (2 + x1 ** 2)
        assert tr.prices[1] == pytest.approx(min(max(beta_hat / (2 * 0.5), 0.1), 5.0), abs=1e-9)
        a, b = x2 * 1.5, x2 * -0.5
        assert tr.inst_regret[1] == pytest.approx(-(x2 * (beta_hat - 1.5)) ** 2 / (4 * b), abs=1e-9)
        assert tr.inst_regret[1] < tr.inst_regret[0]

    def test_failure_reports_trial_and_period(self):
        cfg = ExperimentConfig(d=1, T=5, trials=1, noise="bernoulli", beta_gen=(2.0,), gamma_gen=(0.0,),
                               cov_file=None, policy="oracle", seed=1)
        with pytest.raises(TrialError, match=r"trial 0 failed at t = \d+") as info:
            run_trial(cfg, 0)
        # the first period whose mean demand 2 x_t leaves [0, 1]
        X = run_trial(cfg.replace(noise="gaussian"), 0).x[:, 0]
        assert info.value.t == int(np.argmax(2 * X > 1)) + 1


class TestAggregate:
    def test_single_trial(self):
        res = run_experiment(small(trials=1))
        np.testing.assert_array_equal(res.mean_cum_regret, res.trials[0].cum_regret)
        np.testing.assert_array_equal(res.stderr, 0.0)

    def test_mean_and_stderr(self):
        res = run_experiment(small(policy="cils"))
        curves = np.array([tr.cum_regret for tr in res.trials])
        np.testing.assert_allclose(res.mean_cum_regret, curves.mean(axis=0), atol=1e-14)
        np.testing.assert_allclose(res.stderr, curves.std(axis=0, ddof=1) / math.sqrt(3), atol=1e-14)

    def test_trial_seeds(self):
        res = run_experiment(small(policy="cils"))
        assert [tr.seed for tr in res.trials] == [5 ^ i for i in range(3)]

    def test_json_layout(self, tmp_path):
        res = run_experiment(small(policy="cils"))
        path = tmp_path / "agg.json"
        write_aggregate(res, path)
        data = json.loads(path.read_text())
        assert set(data) == {"config_echo", "per_t", "audits"}
        assert len(data["per_t"]) == 60
        assert set(data["per_t"][0]) == {"t", "mean_cum_regret", "stderr"}
        assert [r["t"] for r in data["per_t"]] == list(range(1, 61))
        assert ExperimentConfig.from_dict(data["config_echo"]) == res.config

    def test_parallel_matches_serial(self):
        cfg = small(policy="ts", trials=3)
        serial = run_experiment(cfg, jobs=1)
        parallel = run_experiment(cfg, jobs=2)
        np.testing.assert_array_equal(serial.curves, parallel.curves)


AUDIT_CFG = ExperimentConfig(d=2, T=50, trials=10, seed=3, policy="ts", radius_mode="corollary1",
                             ts_scale_mode="corollary1")


@pytest.fixture(scope="module")
def trials():
    return run_trials(AUDIT_CFG, track_coverage=True)


class TestAudits:
    cfg = AUDIT_CFG

    def test_inflated_radius_covers(self, trials):
        fraction, _ = coverage_audit(self.cfg, radius_scale=10.0, trials=trials)
        assert fraction == 1.0

    def test_zero_radius_never_covers(self, trials):
        fraction, reports = coverage_audit(self.cfg, radius_scale=0.0, trials=trials)
        assert fraction == 0.0
        assert all(not r["coverage_ok"] for r in reports)

    def test_report_schema(self, trials):
        _, reports = coverage_audit(self.cfg, trials=trials)
        assert set(reports[0]) == {"trial", "t", "alpha", "log_det", "coverage_ok",
                                   "potential_lhs", "potential_bound"}

    def test_coverage_needs_estimator(self):
        with pytest.raises(ValueError):
            coverage_audit(self.cfg.replace(policy="cils", trials=1))

    def test_potential_refuses_unnormalized(self, trials):
        with pytest.raises(ValueError):
            potential_audit(trials[0], 1.0)

    def test_potential_with_feature_normalization(self):
        tr = run_trial(self.cfg.replace(normalize="feature"), 0)
        report = potential_audit(tr, 1.0)
        assert report["ok"] and report["potential_lhs"] <= report["potential_bound"]
