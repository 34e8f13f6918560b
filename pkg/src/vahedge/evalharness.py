"""Frozen-policy evaluation, pathwise comparison, and sensitivity sweeps.

Scenarios are rolled in lockstep as numpy arrays: the per-scenario market
and mortality draws come from the same keyed streams the sequential
environment would use, so a batched evaluation is reproducible and agrees
with stepping :class:`vahedge.env.HedgingEnv` scenario by scenario.  Tail
statistics follow a left-tail P&L convention: VaR_a is the empirical
(1-a)-quantile (lower order statistic) and TVaR_a the mean of outcomes at
or below it.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .delta import CfmBsDeltaHedger
from .env import EnvConfig
from .market import Cfm, simulate_bs_path, simulate_deaths


def _seed_path(seed) -> tuple:
    return tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)


@dataclass(frozen=True)
class EvalReport:
    """Terminal P&L sample and its summary statistics."""

    pnls: np.ndarray
    mean: float
    median: float
    std_dev: float
    var90: float
    var95: float
    tvar90: float
    tvar95: float
    rmse_hat: float

    @classmethod
    def from_pnls(cls, pnls: np.ndarray) -> "EvalReport":
        pnls = np.asarray(pnls, dtype=float)
        return cls(
            pnls=pnls,
            mean=float(pnls.mean()),
            median=float(np.median(pnls)),
            std_dev=float(pnls.std(ddof=1)) if pnls.size > 1 else 0.0,
            var90=empirical_var(pnls, 0.90),
            var95=empirical_var(pnls, 0.95),
            tvar90=empirical_tvar(pnls, 0.90),
            tvar95=empirical_tvar(pnls, 0.95),
            rmse_hat=float(np.sqrt(np.mean(pnls**2))),
        )

    def row(self) -> list:
        return [
            self.mean, self.median, self.std_dev, self.var90, self.var95,
            self.tvar90, self.tvar95, self.rmse_hat,
        ]


STAT_COLUMNS = ["mean", "median", "std_dev", "var90", "var95", "tvar90", "tvar95", "rmse_hat"]


def empirical_var(pnls: np.ndarray, alpha: float) -> float:
    """Lower empirical (1-alpha)-quantile: order statistic ceil(q*n) of the
    ascending sample, q = 1 - alpha."""
    pnls = np.sort(np.asarray(pnls, dtype=float))
    n = pnls.size
    idx = max(1, math.ceil((1.0 - alpha) * n))
    return float(pnls[idx - 1])

def empirical_tvar(pnls: np.ndarray, alpha: float) -> float:
    """Mean of outcomes at or below VaR_alpha."""
    pnls = np.asarray(pnls, dtype=float)
    var = empirical_var(pnls, alpha)
    return float(pnls[pnls <= var].mean())


@dataclass(frozen=True)
class PairwiseReport:
    """Per-scenario P&L differences (A - B) under common scenario draws."""

    diffs: np.ndarray
    mean: float
    median: float
    std_dev: float
    prob_non_negative: float

    @classmethod
    def from_diffs(cls, diffs: np.ndarray) -> "PairwiseReport":
        diffs = np.asarray(diffs, dtype=float)
        return cls(
            diffs=diffs,
            mean=float(diffs.mean()),
            median=float(np.median(diffs)),
            std_dev=float(diffs.std(ddof=1)) if diffs.size > 1 else 0.0,
            prob_non_negative=float(np.mean(diffs >= 0.0)),
        )


# ---------------------------------------------------------------------------
# batched scenario rolling


def scenario_paths(config: EnvConfig, seed, scenarios: int, start: int = 0):
    """Price and survivor-count paths for scenarios [start, start+scenarios),
    each from its own keyed stream (identical to sequential-env draws)."""
    grid, terms = config.grid, config.terms
    prices = np.empty((scenarios, grid.n + 1))
    alive = np.empty((scenarios, grid.n + 1), dtype=np.int64)
    base = _seed_path(seed)
    for i in range(scenarios):
        gen = rngmod.stream(*base, rngmod.SCENARIO, start + i)
        prices[i] = simulate_bs_path(config.market, grid, gen)
        alive[i] = simulate_deaths(config.mortality, terms.N, grid, gen)
    return prices, alive


def rollout_pnls(config: EnvConfig, policy, prices: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """Terminal P&L per scenario for ``policy(k, obs) -> shares`` over
    precomputed paths; matches the sequential environment's accounting."""
    grid, terms, market = config.grid, config.terms, config.market
    n, dt = grid.n, grid.dt
    B = prices.shape[0]
    growth = math.exp(market.r * dt)
    P = np.zeros(B)
    deaths_prev = np.zeros(B)
    f_decay0 = 1.0
    F = (terms.rho * prices[:, 0]) * f_decay0
    for k in range(n):
        active = alive[:, k] > 0
        t = k * dt
        alive_frac = alive[:, k] / terms.N
        obs = np.column_stack(
            [F / terms.G, prices[:, k] / terms.G, P, alive_frac, deaths_prev / terms.N,
             np.full(B, terms.T - t)]
        )
        h = np.asarray(policy(k, obs), dtype=float).reshape(-1)
        p_next = (P - h * prices[:, k]) * growth + h * prices[:, k + 1] \
            + terms.m_e * F * alive_frac * dt * growth
        P = np.where(active, p_next, P)
        t_next = (k + 1) * dt
        F = (terms.rho * prices[:, k + 1]) * math.exp(-terms.m * t_next)
        deaths_prev = alive[:, k] - alive[:, k + 1]
    reached_maturity = alive[:, :-1].min(axis=1) > 0
    liab_T = np.maximum(terms.G - F, 0.0) * (alive[:, n] / terms.N)
    return P - np.where(reached_maturity, liab_T, 0.0)


def evaluate_policy(policy, config: EnvConfig, scenarios: int, seed, threads: int = 1) -> EvalReport:
    """Terminal-P&L statistics of a frozen policy over independent scenarios."""
    if scenarios < 1:
        raise ValueError("need at least one scenario")
    pnls = _pnls_threaded(policy, config, scenarios, seed, threads)
    return EvalReport.from_pnls(pnls)


def _pnls_threaded(policy, config, scenarios, seed, threads) -> np.ndarray:
    def run_chunk(start: int, count: int) -> np.ndarray:
        prices, alive = scenario_paths(config, seed, count, start=start)
        return rollout_pnls(config, policy, prices, alive)

    threads = max(1, int(threads))
    if threads == 1 or scenarios < 2 * threads:
        return run_chunk(0, scenarios)
    bounds = np.linspace(0, scenarios, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(run_chunk, bounds[:-1], np.diff(bounds))
    return np.concatenate(list(parts))


def compare_policies(
    policy_a, policy_b, config: EnvConfig, scenarios: int, seed, threads: int = 1
) -> PairwiseReport:
    """Pathwise P&L difference (A - B) over identical scenario streams."""
    prices, alive = scenario_paths(config, seed, scenarios)
    pnl_a = rollout_pnls(config, policy_a, prices, alive)
    pnl_b = rollout_pnls(config, policy_b, prices, alive)
    return PairwiseReport.from_diffs(pnl_a - pnl_b)


# ---------------------------------------------------------------------------
# sensitivity sweep


@dataclass(frozen=True)
class SweepRow:
    label: str
    overrides: dict
    rl: EvalReport
    delta: EvalReport


def with_policyholders(config: EnvConfig, N: int) -> EnvConfig:
    return replace(config, terms=replace(config.terms, N=N))


def apply_override(config: EnvConfig, overrides: dict) -> EnvConfig:
    """New config with market (mu, sigma) or mortality (nu) fields replaced."""
    cfg = config
    for key, value in overrides.items():
        if key in ("mu", "sigma"):
            cfg = replace(cfg, market=replace(cfg.market, **{key: value}))
        elif key == "nu":
            if not isinstance(cfg.mortality, Cfm):
                raise ValueError("nu override requires constant-force mortality")
            cfg = replace(cfg, mortality=Cfm(nu=value))
        else:
            raise ValueError(f"unknown override {key!r}")
    return cfg


def sensitivity_sweep(
    train_config: EnvConfig,
    overrides: list,
    trainer_cfg,
    scenarios: int,
    seed,
    eval_cohort: int = 1,
    threads: int = 1,
) -> list[SweepRow]:
    """Re-train and re-evaluate per override, against the matching true Delta.

    ``overrides`` is a list of dicts such as {"sigma": 0.3}; an empty dict
    evaluates the base configuration.  The agent re-trains from scratch in
    each overridden training environment, then both the agent and the Delta
    derived from the overridden (true) dynamics are evaluated on a
    single-policyholder cohort.
    """
    from .policygrad import NetworkPolicy, train_ppo  # late import: avoids module cycle

    rows = []
    base_seed = _seed_path(seed)
    for j, ov in enumerate(overrides):
        cfg_train = apply_override(train_config, ov)
        cfg_eval = with_policyholders(cfg_train, eval_cohort)
        params, _ = train_ppo(cfg_train, trainer_cfg, seed=hash_seed(base_seed + (j,)))
        rl_report = evaluate_policy(
            NetworkPolicy(params), cfg_eval, scenarios, base_seed + (100 + j,), threads
        )
        hedger = CfmBsDeltaHedger(
            cfg_eval.terms, cfg_eval.grid, cfg_eval.market.r, cfg_eval.market.sigma,
            cfg_eval.mortality.nu,
        )
        delta_report = evaluate_policy(hedger, cfg_eval, scenarios, base_seed + (100 + j,), threads)
        label = ",".join(f"{k}={v:g}" for k, v in ov.items()) or "base"
        rows.append(SweepRow(label, dict(ov), rl_report, delta_report))
    return rows


def hash_seed(path: tuple) -> int:
    """Collapse a seed path into one non-negative integer key."""
    out = 0
    for p in path:
        out = (out * 1_000_003 + int(p)) % (2**63)
    return out


# ---------------------------------------------------------------------------
# CSV emission


def write_pnls_csv(path, pnls: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "pnl"])
        for i, p in enumerate(np.asarray(pnls, dtype=float)):
            writer.writerow([i, repr(p)])


def write_stats_csv(path, rows: dict) -> None:
    """``rows`` maps a label to an EvalReport; column order follows the
    summary-statistics table layout."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hedger"] + STAT_COLUMNS)
        for label, report in rows.items():
            writer.writerow([label] + [f"{x:.6f}" for x in report.row()])


def write_pairwise_csv(path, rows: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["comparison", "mean", "median", "std_dev", "prob_non_negative"])
        for label, rep in rows.items():
            writer.writerow(
                [label, f"{rep.mean:.6f}", f"{rep.median:.6f}", f"{rep.std_dev:.6f}",
                 f"{rep.prob_non_negative:.6f}"]
            )


def write_ecdf_csv(path, pnls: np.ndarray) -> None:
    """Empirical CDF points (pnl, probability) for plotting."""
    pnls = np.sort(np.asarray(pnls, dtype=float))
    probs = np.arange(1, pnls.size + 1) / pnls.size
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pnl", "cdf"])
        for p, q in zip(pnls, probs):
            writer.writerow([repr(float(p)), f"{q:.6f}"])
