"""Trial orchestration, regret accounting, aggregation and bound audits."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .covariates import CovariateStreamSpec, covariate_sequence
from .demand import (DemandModel, ParamVector, PriceRange, ShockSpec, make_link,
                     optimal_price_ab, sample_demand)
from .estimation import confidence_radius, elliptical_potential_audit
from .policies import (CertaintyEquivalentPolicy, CILSPolicy, OraclePolicy, Policy,
                       ThompsonPolicy, UCBPolicy)

LEDGER_COLUMNS = ("trial", "t", "price", "demand", "oracle_revenue", "expected_revenue",
                  "inst_regret", "cum_regret")


class TrialError(RuntimeError):
    def __init__(self, trial: int, t: int, cause: Exception):
        self.trial, self.t, self.cause = trial, t, cause
        super().__init__(f"trial {trial} failed at t = {t}: {type(cause).__name__}: {cause}")


@dataclass
class TrialResult:
    trial: int
    seed: int
    theta_star: np.ndarray
    x: np.ndarray
    prices: np.ndarray
    demand: np.ndarray
    oracle_revenue: np.ndarray
    expected_revenue: np.ndarray
    # ||theta_hat_t - theta*||_{M_t} / alpha(M_t) per period; None without an estimator
    coverage_ratio: Optional[np.ndarray] = None
    log_det: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None

    @property
    def inst_regret(self) -> np.ndarray:
        return self.oracle_revenue - self.expected_revenue

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.inst_regret)

    @property
    def features(self) -> np.ndarray:
        return np.hstack([self.x, self.prices[:, None] * self.x])

    def ledger_rows(self):
        cum = self.cum_regret
        inst = self.inst_regret
        for i in range(len(self.prices)):
            yield (self.trial, i + 1, self.prices[i], self.demand[i], self.oracle_revenue[i],
                   self.expected_revenue[i], inst[i], cum[i])


@dataclass
class AggregateResult:
    config: ExperimentConfig
    trials: list = field(default_factory=list)

    @property
    def curves(self) -> np.ndarray:
        return np.array([tr.cum_regret for tr in self.trials])

    @property
    def mean_cum_regret(self) -> np.ndarray:
        return self.curves.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        curves = self.curves
        if len(curves) < 2:
            return np.zeros(curves.shape[1])
        return curves.std(axis=0, ddof=1) / math.sqrt(len(curves))

    def to_json_dict(self, audits: Optional[dict] = None) -> dict:
        mean, se = self.mean_cum_regret, self.stderr
        return {
            "config_echo": self.config.to_dict(),
            "per_t": [{"t": i + 1, "mean_cum_regret": float(m), "stderr": float(s)}
                      for i, (m, s) in enumerate(zip(mean, se))],
            "audits": audits or {},
        }


def trial_streams(seed: int, trial_index: int):
    """Independent generators for (theta*, covariates, shocks, policy)."""
    ss = np.random.SeedSequence(seed ^ trial_index)
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def draw_theta_star(config: ExperimentConfig, rng: np.random.Generator) -> ParamVector:
    d = config.d
    s = 1.0 / math.sqrt(d)
    # both draws always happen so explicit values never shift the stream
    beta = rng.uniform(s, 2 * s, d)
    gamma = -rng.uniform(0.0, s, d)
    if config.beta_gen != "uniform":
        beta = np.array(config.beta_gen, dtype=float)
    if config.gamma_gen != "uniform":
        gamma = np.array(config.gamma_gen, dtype=float)
    return ParamVector(beta, gamma, config.theta_bar)


def covariate_spec(config: ExperimentConfig) -> CovariateStreamSpec:
    return CovariateStreamSpec(mode=config.cov_mode, d=config.d, n_phases=config.phases,
                               n_blocks=config.blocks, path=config.cov_file,
                               normalize=config.normalize, scale=config.scale, p_max=config.p_max)


def build_policy(config: ExperimentConfig, theta_star: ParamVector, rng: np.random.Generator) -> Policy:
    link = make_link(config.link, config.theta_bar)
    prices = PriceRange(config.p_min, config.p_max)
    kind = config.policy
    if kind == "oracle":
        return OraclePolicy(link, theta_star.theta, prices)
    if kind == "cils":
        return CILSPolicy(prices, config.d, config.kappa_value, config.lam)
    common = dict(lam=config.lam, theta_bar=config.theta_bar, sigma_bar=config.sigma_bar_value,
                  tol=config.tol, refit_every=config.refit_every, rng=rng)
    if kind in ("ucb", "ucb_approx"):
        return UCBPolicy(link, prices, config.d, config.T, K=config.K, radius_mode=config.radius_mode,
                         radius_value=config.radius_sq, approx=kind == "ucb_approx", **common)
    if kind in ("ts", "ts_approx"):
        return ThompsonPolicy(link, prices, config.d, config.T, scale_mode=config.ts_scale_mode,
                              scale_value=config.ts_scale, approx=kind == "ts_approx", **common)
    return CertaintyEquivalentPolicy(link, prices, config.d, config.T, theta_star.gamma, **common)


def run_trial(config: ExperimentConfig, trial_index: int, theta_star: Optional[ParamVector] = None,
              track_coverage: bool = False) -> TrialResult:
    """Simulate one trial and account regret with expected (not realized) revenue."""
    T, d = config.T, config.d
    theta_rng, cov_rng, shock_rng, policy_rng = trial_streams(config.seed, trial_index)
    drawn = draw_theta_star(config, theta_rng)
    theta_star = drawn if theta_star is None else theta_star
    link = make_link(config.link, config.theta_bar)
    model = DemandModel(link, theta_star, ShockSpec(config.noise, config.sigma), config.sigma_bar_value)
    prices_range = PriceRange(config.p_min, config.p_max)
    X = covariate_sequence(covariate_spec(config), T, cov_rng)
    policy = build_policy(config, theta_star, policy_rng)

    theta = theta_star.theta
    a_star, b_star = X @ theta_star.beta, X @ theta_star.gamma
    _, oracle_rev = optimal_price_ab(link, a_star, b_star, prices_range)
    prices = np.empty(T)
    demand = np.empty(T)
    est = policy.estimator if track_coverage else None
    ratio = np.empty(T) if est is not None else None
    log_det = np.empty(T) if est is not None else None
    alpha = np.empty(T) if est is not None else None
    target = None
    if est is not None:
        target = theta_star.beta if est.known_gamma is not None else theta
    for i in range(T):
        x = X[i]
        try:
            p = float(policy.choose_price(x))
            D = sample_demand(model, x, p, shock_rng)
            policy.observe(x, p, D)
        except Exception as exc:
            raise TrialError(trial_index, i + 1, exc) from exc
        prices[i] = p
        demand[i] = D
        if est is not None:
            a = confidence_radius(est.design, T, est.lam, est.theta_bar, config.sigma_bar_value,
                                  link.g_lower)
            alpha[i] = a
            log_det[i] = est.design.log_det
            ratio[i] = est.design.norm(est.estimate - target) / a
    expected = prices * link.g(a_star + b_star * prices)
    return TrialResult(trial_index, config.seed ^ trial_index, theta, X, prices, demand,
                       np.asarray(oracle_rev, dtype=float), expected, ratio, log_det, alpha)


def _run_trial_star(args):
    return run_trial(*args)


def run_trials(config: ExperimentConfig, jobs: int = 1, track_coverage: bool = False,
               theta_star: Optional[ParamVector] = None) -> list:
    args = [(config, i, theta_star, track_coverage) for i in range(config.trials)]
    if jobs <= 1 or config.trials == 1:
        return [run_trial(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map keeps trial order, so the reduction matches a serial run
        return list(pool.map(_run_trial_star, args))


def run_experiment(config: ExperimentConfig, jobs: int = 1,
                   theta_star: Optional[ParamVector] = None) -> AggregateResult:
    return AggregateResult(config, run_trials(config, jobs, theta_star=theta_star))


def coverage_audit(config: ExperimentConfig, radius_scale: float = 1.0, jobs: int = 1,
                   trials: Optional[list] = None):
    """Fraction of trials whose estimate stays within ``radius_scale * alpha(M_t)`` of theta* for all t.

    Returns ``(fraction, reports)``; each report follows the audit JSON schema.
    """
    if trials is None:
        trials = run_trials(config, jobs, track_coverage=True)
    reports = []
    hits = 0
    for tr in trials:
        if tr.coverage_ratio is None:
            raise ValueError(f"policy {config.policy!r} keeps no quasi-MLE estimate to audit")
        covered = tr.coverage_ratio <= radius_scale
        ok = bool(covered.all())
        hits += ok
        t_report = len(covered) if ok else int(np.argmin(covered)) + 1
        report = {"trial": tr.trial, "t": t_report, "alpha": float(tr.alpha[t_report - 1]),
                  "log_det": float(tr.log_det[t_report - 1]), "coverage_ok": ok,
                  "potential_lhs": None, "potential_bound": None}
        try:
            pot = potential_audit(tr, config.lam)
            report["potential_lhs"] = pot["potential_lhs"]
            report["potential_bound"] = pot["potential_bound"]
        except ValueError:
            pass
        reports.append(report)
    return hits / len(trials), reports


def potential_audit(trial: TrialResult, lam: float) -> dict:
    """Elliptical potential check on a trial's feature sequence (needs ||z_t|| <= 1, lam >= 1)."""
    lhs, bound, ok = elliptical_potential_audit(trial.features, lam)
    return {"trial": trial.trial, "t": len(trial.prices), "potential_lhs": lhs,
            "potential_bound": bound, "ok": bool(ok)}


def write_ledger(trial: TrialResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEDGER_COLUMNS)
        for row in trial.ledger_rows():
            w.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])


def write_aggregate(result: AggregateResult, path, audits: Optional[dict] = None) -> None:
    Path(path).write_text(json.dumps(result.to_json_dict(audits), indent=1, sort_keys=True) + "\n")
