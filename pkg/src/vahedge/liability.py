"""GMMB net-liability valuation.

Closed forms for the insurer's gross liability, rider-charge value and net
liability under (constant | uniform-lifetime) mortality with Black-Scholes
account dynamics, a Monte-Carlo oracle that prices the same quantities by
risk-neutral simulation under any supported market/mortality pair, and the
calibration of the rider-charge rate from a zero time-0 net liability.

Monetary results scale linearly in ``survivors``, which may therefore be a
fractional exposure as well as an integer count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .market import BsParams, Cfm, HestonParams, Ifm, MarketParams, MortalityModel


@dataclass(frozen=True)
class ContractTerms:
    """GMMB contract block: guarantee G, shares-per-policyholder rho, total fee
    rate m, rider-charge rate m_e, term T (years), cohort size N, issue age x."""

    G: float
    rho: float
    m: float
    m_e: float
    T: float
    N: int = 1
    x: float = 20.0

    def __post_init__(self):
        if self.G <= 0 or self.rho <= 0 or self.T <= 0:
            raise ValueError("G, rho, T must be positive")
        if not 0 < self.m < 1:
            raise ValueError("m must lie in (0, 1)")
        if not 0 < self.m_e <= self.m:
            raise ValueError("m_e must lie in (0, m]")
        if self.N < 1:
            raise ValueError("N must be at least 1")


@dataclass(frozen=True)
class LiabilityDecomposition:
    """Gross-liability value, rider-charge value, and their difference."""

    v_gl: float
    v_rc: float

    @property
    def net(self) -> float:
        return self.v_gl - self.v_rc


@dataclass(frozen=True)
class McLiabilityEstimate:
    """Monte-Carlo liability estimate with standard errors of each component."""

    v_gl: float
    v_rc: float
    net: float
    se_gl: float
    se_rc: float
    se_net: float

    def decomposition(self) -> LiabilityDecomposition:
        return LiabilityDecomposition(self.v_gl, self.v_rc)


def _put_part(F, G: float, tau, r: float, m: float, sigma: float):
    """G e^{-r tau} Phi(-d2) - F e^{-m tau} Phi(-d1) for tau > 0, elementwise."""
    F = np.asarray(F, dtype=float)
    sig_sq_t = sigma * np.sqrt(tau)
    with np.errstate(divide="ignore"):
        d1 = (np.log(F / G) + (r - m + 0.5 * sigma**2) * tau) / sig_sq_t
    d2 = d1 - sig_sq_t
    return G * np.exp(-r * tau) * ndtr(-d2) - F * np.exp(-m * tau) * ndtr(-d1)


def bs_cfm_net_liability(
    t: float,
    F,
    survivors,
    terms: ContractTerms,
    r: float,
    sigma: float,
    nu: float,
) -> LiabilityDecomposition:
    """Net liability under Black-Scholes dynamics and constant force of mortality.

    Vectorized over ``F`` and ``survivors``.  Raises if t > T.
    """
    tau = terms.T - t
    if tau < 0:
        raise ValueError("valuation time beyond maturity")
    F = np.asarray(F, dtype=float)
    survivors = np.asarray(survivors, dtype=float)
    if tau == 0.0:
        v_gl = np.maximum(terms.G - F, 0.0) * survivors
        v_rc = np.zeros_like(v_gl)
    else:
        v_gl = math.exp(-nu * tau) * _put_part(F, terms.G, tau, r, terms.m, sigma) * survivors
        v_rc = terms.m_e * F * survivors * (-math.expm1(-(terms.m + nu) * tau)) / (terms.m + nu)
    return LiabilityDecomposition(v_gl if v_gl.ndim else float(v_gl), v_rc if v_rc.ndim else float(v_rc))


def ifm_rc_annuity(t: float, T: float, m: float, b_up: float):
    """Time-t value per unit rider charge rate and unit account value under a
    uniform lifetime on [0, b_up]:  int_t^T e^{-m(s-t)} (b_up-s)/(b_up-t) ds."""
    u = T - t
    horizon = b_up - t
    one_minus = -math.expm1(-m * u)
    return ((horizon - 1.0 / m) * one_minus / m + u * math.exp(-m * u) / m) / horizon


def ifm_bs_net_liability(
    t: float,
    F,
    survivors,
    terms: ContractTerms,
    r: float,
    sigma: float,
    b_up: float,
) -> LiabilityDecomposition:
    """Net liability under Black-Scholes dynamics and a uniformly distributed
    lifetime on [0, b_up].  Requires T < b_up (the contract matures before the
    lifetime's upper bound); vectorized over ``F`` and ``survivors``.
    """
    if terms.T >= b_up:
        raise ValueError("term must end before the lifetime upper bound")
    tau = terms.T - t
    if tau < 0:
        raise ValueError("valuation time beyond maturity")
    F = np.asarray(F, dtype=float)
    survivors = np.asarray(survivors, dtype=float)
    if tau == 0.0:
        v_gl = np.maximum(terms.G - F, 0.0) * survivors
        v_rc = np.zeros_like(v_gl)
    else:
        surv_to_T = (b_up - terms.T) / (b_up - t)
        v_gl = surv_to_T * _put_part(F, terms.G, tau, r, terms.m, sigma) * survivors
        v_rc = terms.m_e * F * survivors * ifm_rc_annuity(t, terms.T, terms.m, b_up)
    return LiabilityDecomposition(v_gl if v_gl.ndim else float(v_gl), v_rc if v_rc.ndim else float(v_rc))


def mc_net_liability_oracle(
    t: float,
    F: float,
    survivors: int,
    terms: ContractTerms,
    model: MarketParams,
    mortality: MortalityModel,
    paths: int,
    rng: np.random.Generator,
    steps_per_year: int = 252,
) -> McLiabilityEstimate:
    """Risk-neutral Monte-Carlo valuation of the net liability from time t.

    Simulates the account value with drift r - m (Black-Scholes exactly,
    Heston by full-truncation Euler) and the survivor process on a daily
    grid; the rider-charge integral uses the left-endpoint rule.  Serves as
    the independent oracle for every closed form and as the pricer behind
    the Heston finite-difference Delta.
    """
    if paths < 1000:
        raise ValueError("need at least 1000 paths")
    tau = terms.T - t
    if tau < 0:
        raise ValueError("valuation time beyond maturity")
    if survivors == 0 or tau == 0.0:
        pay = max(terms.G - F, 0.0) * survivors if tau == 0.0 else 0.0
        return McLiabilityEstimate(pay, 0.0, pay, 0.0, 0.0, 0.0)

    ns = max(1, round(tau * steps_per_year))
    dt = tau / ns
    sqdt = math.sqrt(dt)
    r, m = model.r, terms.m

    acct = np.full(paths, float(F))
    alive = np.full(paths, int(survivors), dtype=np.int64)
    rc = np.zeros(paths)
    if isinstance(model, HestonParams):
        v = np.full(paths, model.Sigma0)

    disc = np.exp(-r * dt * np.arange(ns))
    for j in range(ns):
        rc += terms.m_e * acct * alive * disc[j] * dt
        if isinstance(model, BsParams):
            z = rng.standard_normal(paths)
            acct *= np.exp((r - m - 0.5 * model.sigma**2) * dt + model.sigma * sqdt * z)
        else:
            z = rng.standard_normal((paths, 2))
            z2 = model.phi * z[:, 0] + math.sqrt(1.0 - model.phi**2) * z[:, 1]
            v_pos = np.maximum(v, 0.0)
            acct *= np.exp((r - m - 0.5 * v_pos) * dt + np.sqrt(v_pos) * sqdt * z[:, 0])
            v = v + model.kappa * (model.SigmaBar - v_pos) * dt + model.eta * np.sqrt(v_pos) * sqdt * z2
        p = mortality.step_death_prob(t + j * dt, dt)
        alive = alive - rng.binomial(alive, p)

    gl = math.exp(-r * tau) * np.maximum(terms.G - acct, 0.0) * alive
    net = gl - rc
    sqrt_n = math.sqrt(paths)
    return McLiabilityEstimate(
        float(gl.mean()),
        float(rc.mean()),
        float(net.mean()),
        float(gl.std(ddof=1) / sqrt_n),
        float(rc.std(ddof=1) / sqrt_n),
        float(net.std(ddof=1) / sqrt_n),
    )


class NoAdmissibleRiderCharge(ValueError):
    """The guarantee cannot be funded by any rider charge rate in (0, m]."""


def calibrate_rider_charge(
    terms: ContractTerms,
    market: BsParams,
    mortality: MortalityModel,
    tol_scale: float = 1e-8,
) -> float:
    """Rider-charge rate m_e in (0, m] solving L_0 = 0 for the given contract.

    The time-0 net liability is strictly decreasing in m_e, so bisection on
    (0, m] converges to the unique root; stops when |L_0| < tol_scale*G*N.
    Raises :class:`NoAdmissibleRiderCharge` when even m_e = m leaves a
    positive net liability.
    """
    F0 = terms.rho * market.S0

    def net_at(me: float) -> float:
        probe = ContractTerms(terms.G, terms.rho, terms.m, me, terms.T, terms.N, terms.x)
        if isinstance(mortality, Cfm):
            dec = bs_cfm_net_liability(0.0, F0, terms.N, probe, market.r, market.sigma, mortality.nu)
        else:
            dec = ifm_bs_net_liability(0.0, F0, terms.N, probe, market.r, market.sigma, mortality.b_up)
        return dec.net

    tol = tol_scale * terms.G * terms.N
    hi = terms.m
    net_hi = net_at(hi)
    if net_hi > tol:
        raise NoAdmissibleRiderCharge(
            f"guarantee too expensive: L_0 = {net_hi:.6g} > 0 even at m_e = m = {terms.m}"
        )
    lo = 0.0  # L_0 at m_e -> 0+ equals the gross-liability value > 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= 0.0:
            mid = hi * 0.5
        net_mid = net_at(mid)
        if abs(net_mid) < tol:
            return mid
        if net_mid > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
