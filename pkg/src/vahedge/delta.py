"""Benchmark Delta hedgers.

Analytic Deltas of the net liability under (constant | uniform-lifetime)
mortality with Black-Scholes dynamics, a Monte-Carlo finite-difference
Delta for Heston dynamics (common random numbers on both bumps), and
policy adapters that turn each Delta into a hedging policy over the
environment's observation vector.

Every Delta is the sensitivity of the net liability to the risky-asset
price and is therefore negative in the put region; all hedgers return 0
once no policyholder survives or the contract has matured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from . import rng as rngmod
from .liability import ContractTerms, ifm_rc_annuity, mc_net_liability_oracle
from .market import Cfm, HestonParams, Ifm, MortalityModel, PathGrid


def _put_dF(F, G: float, tau: float, r: float, m: float, sigma: float):
    """d/dF of [G e^{-r tau} Phi(-d2) - F e^{-m tau} Phi(-d1)] = -e^{-m tau} Phi(-d1)."""
    F = np.asarray(F, dtype=float)
    sig_sq_t = sigma * math.sqrt(tau)
    with np.errstate(divide="ignore"):
        d1 = (np.log(F / G) + (r - m + 0.5 * sigma**2) * tau) / sig_sq_t
    return -math.exp(-m * tau) * ndtr(-d1)


def cfm_bs_delta(
    t: float, S, survivors, terms: ContractTerms, r: float, sigma: float, nu: float
):
    """dL/dS under constant force of mortality and Black-Scholes dynamics.

    With F = rho S e^{-mt},
    dL/dS = [-e^{-(nu+m)(T-t)} Phi(-d1) - m_e (1-e^{-(m+nu)(T-t)})/(m+nu)]
            * rho e^{-mt} * survivors.
    Vectorized over S and survivors; 0 at/after maturity or with no survivors.
    """
    S = np.asarray(S, dtype=float)
    survivors = np.asarray(survivors, dtype=float)
    tau = terms.T - t
    if tau <= 0:
        out = np.zeros(np.broadcast_shapes(S.shape, survivors.shape))
        return out if out.ndim else 0.0
    dF_dS = terms.rho * math.exp(-terms.m * t)
    F = dF_dS * S
    dgl_dF = math.exp(-nu * tau) * _put_dF(F, terms.G, tau, r, terms.m, sigma)
    drc_dF = terms.m_e * (-math.expm1(-(terms.m + nu) * tau)) / (terms.m + nu)
    out = (dgl_dF - drc_dF) * dF_dS * survivors
    return out if out.ndim else float(out)


def ifm_bs_delta(
    t: float, S, survivors, terms: ContractTerms, r: float, sigma: float, b_up: float
):
    """dL/dS under a uniform lifetime on [0, b_up] and Black-Scholes dynamics."""
    if terms.T >= b_up:
        raise ValueError("term must end before the lifetime upper bound")
    S = np.asarray(S, dtype=float)
    survivors = np.asarray(survivors, dtype=float)
    tau = terms.T - t
    if tau <= 0:
        out = np.zeros(np.broadcast_shapes(S.shape, survivors.shape))
        return out if out.ndim else 0.0
    dF_dS = terms.rho * math.exp(-terms.m * t)
    F = dF_dS * S
    surv_to_T = (b_up - terms.T) / (b_up - t)
    dgl_dF = surv_to_T * _put_dF(F, terms.G, tau, r, terms.m, sigma)
    drc_dF = terms.m_e * ifm_rc_annuity(t, terms.T, terms.m, b_up)
    out = (dgl_dF - drc_dF) * dF_dS * survivors
    return out if out.ndim else float(out)


def heston_mc_delta(
    t: float,
    S: float,
    Sigma: float,
    survivors: int,
    terms: ContractTerms,
    heston: HestonParams,
    mortality: MortalityModel,
    paths: int = 10_000,
    seed: int = 0,
    bump: float = 1e-2,
) -> float:
    """Finite-difference Delta under Heston dynamics with common random numbers.

    (L(S(1+h)) - L(S(1-h))) / (2 h S) with h = 1e-2; both bumps re-run the
    Monte-Carlo liability oracle from identical streams, so the market and
    mortality draws cancel pathwise and only the payoff slope remains.
    """
    if survivors == 0 or t >= terms.T:
        return 0.0
    if paths < 10_000:
        raise ValueError("need at least 1e4 paths")
    dF_dS = terms.rho * math.exp(-terms.m * t)
    F = dF_dS * S
    model = replace(heston, Sigma0=Sigma)
    up = mc_net_liability_oracle(
        t, F * (1.0 + bump), survivors, terms, model, mortality, paths,
        rngmod.stream(seed, rngmod.PRICER),
    )
    dn = mc_net_liability_oracle(
        t, F * (1.0 - bump), survivors, terms, model, mortality, paths,
        rngmod.stream(seed, rngmod.PRICER),
    )
    return (up.net - dn.net) / (2.0 * bump * S)


# ---------------------------------------------------------------------------
# hedging policies over the environment observation
#
# A policy maps (step index k, observation rows) to shares of the risky asset
# per initial policyholder.  Observation layout: (F/G, S/G, P/N, survivors/N,
# deaths/N, T - t).


class ZeroHedge:
    """Holds no risky asset; the unhedged baseline."""

    def __call__(self, k: int, obs: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        return np.zeros(obs.shape[0])


@dataclass
class CfmBsDeltaHedger:
    """Delta policy assuming constant force of mortality and Black-Scholes dynamics."""

    terms: ContractTerms
    grid: PathGrid
    r: float
    sigma: float
    nu: float

    def __call__(self, k: int, obs: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        t = k * self.grid.dt
        S = obs[:, 1] * self.terms.G
        surv_frac = obs[:, 3]
        return np.asarray(
            cfm_bs_delta(t, S, surv_frac, self.terms, self.r, self.sigma, self.nu), dtype=float
        ).reshape(-1)


@dataclass
class IfmBsDeltaHedger:
    """Delta policy assuming a uniform lifetime on [0, b_up] and Black-Scholes dynamics."""

    terms: ContractTerms
    grid: PathGrid
    r: float
    sigma: float
    b_up: float

    def __call__(self, k: int, obs: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        t = k * self.grid.dt
        S = obs[:, 1] * self.terms.G
        surv_frac = obs[:, 3]
        return np.asarray(
            ifm_bs_delta(t, S, surv_frac, self.terms, self.r, self.sigma, self.b_up), dtype=float
        ).reshape(-1)


class HestonDeltaHedger:
    """Tabulated Heston Monte-Carlo Delta policy.

    Evaluating the finite-difference Delta path-by-path during a 5000-scenario
    backtest would re-run the Monte-Carlo pricer millions of times, so this
    hedger precomputes the same common-random-number estimator once per grid
    time on a log-spaced account-value grid and interpolates.

    One set of risk-neutral log-return paths, started from the hedger's
    filtered variance (the long-run level by default), prices every horizon:
    the account log-return over a horizon depends on the start variance but
    not on the start price, so the gross-liability value at account value F
    is the discounted mean of (G - F e^X)+ over the shared sample of X.  The
    mortality factor enters analytically (its draws would cancel between the
    two bumps anyway) and the rider-charge slope is linear in F, hence exact.
    Outside the tabulated range the Delta saturates, which is well past any
    price reachable in the evaluation environments.
    """

    def __init__(
        self,
        terms: ContractTerms,
        grid: PathGrid,
        heston: HestonParams,
        mortality: MortalityModel,
        filtered_variance: float | None = None,
        paths: int = 100_000,
        seed: int = 0,
        bump: float = 1e-2,
        grid_points: int = 385,
        f_over_g_range: tuple[float, float] = (0.15, 5.0),
    ):
        self.terms = terms
        self.grid = grid
        self.heston = heston
        self.mortality = mortality
        self.v0 = heston.SigmaBar if filtered_variance is None else filtered_variance
        self.bump = bump
        G = terms.G
        self._log_f_grid = np.linspace(
            math.log(f_over_g_range[0] * G), math.log(f_over_g_range[1] * G), grid_points
        )
        self._dgl_dF = self._build_table(paths, seed)

    def _build_table(self, paths: int, seed: int) -> np.ndarray:
        terms, grid = self.terms, self.grid
        r, m, h = self.heston.r, terms.m, self.bump
        gen = rngmod.stream(seed, rngmod.PRICER)
        n = grid.n
        dt, sqdt = grid.dt, math.sqrt(grid.dt)

        f_grid = np.exp(self._log_f_grid)
        f_bumped = np.concatenate([f_grid * (1.0 + h), f_grid * (1.0 - h)])

        table = np.zeros((n, f_grid.size))
        log_ret = np.zeros(paths)
        v = np.full(paths, self.v0)
        kappa, vbar, eta, phi = (
            self.heston.kappa,
            self.heston.SigmaBar,
            self.heston.eta,
            self.heston.phi,
        )
        for horizon in range(1, n + 1):
            z = gen.standard_normal((paths, 2))
            z2 = phi * z[:, 0] + math.sqrt(1.0 - phi**2) * z[:, 1]
            v_pos = np.maximum(v, 0.0)
            log_ret += (r - m - 0.5 * v_pos) * dt + np.sqrt(v_pos) * sqdt * z[:, 0]
            v = v + kappa * (vbar - v_pos) * dt + eta * np.sqrt(v_pos) * sqdt * z2

            # mean of (G - F e^X)+ for every bumped F at once via sorted prefix sums
            y = np.sort(np.exp(log_ret))
            csum = np.concatenate([[0.0], np.cumsum(y)])
            idx = np.searchsorted(y, terms.G / f_bumped, side="left")
            mean_payoff = (terms.G * idx - f_bumped * csum[idx]) / paths

            tau = horizon * dt
            t = terms.T - tau
            sf = self._survival_factor(t, tau)
            pv = sf * math.exp(-r * tau) * mean_payoff
            up, dn = pv[: f_grid.size], pv[f_grid.size :]
            table[n - horizon] = (up - dn) / (2.0 * h * f_grid)
        return table

    def _survival_factor(self, t: float, tau: float) -> float:
        if isinstance(self.mortality, Cfm):
            return math.exp(-self.mortality.nu * tau)
        return float(self.mortality.survival(t, t + tau))

    def _drc_dF(self, t: float, tau: float) -> float:
        if isinstance(self.mortality, Cfm):
            mn = self.terms.m + self.mortality.nu
            return self.terms.m_e * (-math.expm1(-mn * tau)) / mn
        return self.terms.m_e * ifm_rc_annuity(t, self.terms.T, self.terms.m, self.mortality.b_up)

    def delta(self, k: int, S, survivors) -> np.ndarray:
        """dL/dS at grid time k, vectorized over S and survivors."""
        S = np.asarray(S, dtype=float)
        survivors = np.asarray(survivors, dtype=float)
        t = k * self.grid.dt
        tau = self.terms.T - t
        if tau <= 0 or k >= self.grid.n:
            out = np.zeros(np.broadcast_shapes(S.shape, survivors.shape))
            return out if out.ndim else 0.0
        dF_dS = self.terms.rho * math.exp(-self.terms.m * t)
        with np.errstate(divide="ignore"):
            log_f = np.log(dF_dS * S)
        dgl_dF = np.interp(log_f, self._log_f_grid, self._dgl_dF[k])
        out = (dgl_dF - self._drc_dF(t, tau)) * dF_dS * survivors
        return out if out.ndim else float(out)

    def __call__(self, k: int, obs: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        S = obs[:, 1] * self.terms.G
        surv_frac = obs[:, 3]
        return np.asarray(self.delta(k, S, surv_frac), dtype=float).reshape(-1)


def make_ifm(b_up: float, b_low: float = 0.0) -> Ifm:
    return Ifm(b_low=b_low, b_up=b_up)
