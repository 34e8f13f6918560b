"""Actuarial and financial market simulation.

Risky-asset paths under Black-Scholes (exact exponential scheme) and
Heston (full-truncation Euler), plus policyholder death processes under a
constant force of mortality or a uniformly distributed lifetime.  All
routines take an explicit ``numpy.random.Generator`` so paths are
reproducible and parallel-safe (see :mod:`vahedge.rng`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np


@dataclass(frozen=True)
class BsParams:
    """Black-Scholes market: risk-free rate, initial price, drift, volatility (per year)."""

    r: float
    S0: float
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.S0 <= 0:
            raise ValueError("S0 must be positive")


@dataclass(frozen=True)
class HestonParams:
    """Heston market with variance reversion kappa to SigmaBar, vol-of-vol eta,
    and price/variance Brownian correlation phi."""

    r: float
    S0: float
    mu: float
    Sigma0: float
    kappa: float
    SigmaBar: float
    eta: float
    phi: float

    def __post_init__(self):
        if self.S0 <= 0:
            raise ValueError("S0 must be positive")
        if self.Sigma0 < 0 or self.kappa < 0 or self.SigmaBar < 0 or self.eta < 0:
            raise ValueError("Sigma0, kappa, SigmaBar, eta must be non-negative")
        if abs(self.phi) > 1:
            raise ValueError("phi must lie in [-1, 1]")


@dataclass(frozen=True)
class Cfm:
    """Constant force of mortality: survival from t to s is exp(-nu*(s-t))."""

    nu: float

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be positive")

    def survival(self, t: float, s) -> np.ndarray:
        return np.exp(-self.nu * (np.asarray(s, dtype=float) - t))

    def step_death_prob(self, t: float, dt: float) -> float:
        return -math.expm1(-self.nu * dt)


@dataclass(frozen=True)
class Ifm:
    """Uniformly distributed lifetime on [b_low, b_up]: survival from t to s
    is (b_up - s) / (b_up - t) while s < b_up, zero afterwards."""

    b_low: float
    b_up: float

    def __post_init__(self):
        if not 0 <= self.b_low < self.b_up:
            raise ValueError("need 0 <= b_low < b_up")

    def survival(self, t: float, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if t >= self.b_up:
            return np.zeros_like(s)
        return np.clip((self.b_up - s) / (self.b_up - t), 0.0, 1.0)

    def step_death_prob(self, t: float, dt: float) -> float:
        if t + dt >= self.b_up:
            return 1.0
        return dt / (self.b_up - t)


MortalityModel = Union[Cfm, Ifm]
MarketParams = Union[BsParams, HestonParams]


@dataclass(frozen=True)
class PathGrid:
    """Uniform hedging grid of n steps of length dt (years); t_n = n*dt is maturity."""

    n: int
    dt: float = 1.0 / 252.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one step")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def T(self) -> float:
        return self.n * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.dt

    @classmethod
    def for_term(cls, T: float, steps_per_year: int = 252) -> "PathGrid":
        n = round(T * steps_per_year)
        return cls(n=n, dt=T / n)


def simulate_bs_path(params: BsParams, grid: PathGrid, rng: np.random.Generator) -> np.ndarray:
    """Geometric Brownian motion path S_0..S_n on the grid (exact scheme).

    S_{k+1} = S_k * exp((mu - sigma^2/2) dt + sigma sqrt(dt) Z_k).
    """
    z = rng.standard_normal(grid.n)
    incr = (params.mu - 0.5 * params.sigma**2) * grid.dt + params.sigma * math.sqrt(grid.dt) * z
    path = np.empty(grid.n + 1)
    path[0] = params.S0
    path[1:] = params.S0 * np.exp(np.cumsum(incr))
    return path


def simulate_heston_path(
    params: HestonParams, grid: PathGrid, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Heston path by full-truncation Euler; returns (prices, variances).

    The variance recursion uses max(Sigma, 0) in drift and diffusion; the
    price uses the exponential Euler update with the truncated variance.
    Price and variance shocks are correlated via phi.
    """
    z = rng.standard_normal((grid.n, 2))
    z1 = z[:, 0]  # drives the price
    z2 = params.phi * z1 + math.sqrt(1.0 - params.phi**2) * z[:, 1]  # drives the variance
    sqdt = math.sqrt(grid.dt)

    prices = np.empty(grid.n + 1)
    variances = np.empty(grid.n + 1)
    prices[0] = params.S0
    variances[0] = params.Sigma0
    v = params.Sigma0
    for k in range(grid.n):
        v_pos = max(v, 0.0)
        prices[k + 1] = prices[k] * math.exp(
            (params.mu - 0.5 * v_pos) * grid.dt + math.sqrt(v_pos) * sqdt * z1[k]
        )
        v = v + params.kappa * (params.SigmaBar - v_pos) * grid.dt + params.eta * math.sqrt(v_pos) * sqdt * z2[k]
        variances[k + 1] = max(v, 0.0)
    return prices, variances


def simulate_deaths(
    model: MortalityModel, N: int, grid: PathGrid, rng: np.random.Generator
) -> np.ndarray:
    """Survivor counts J_0..J_n starting from N policyholders.

    Each policyholder alive at t_k dies in (t_k, t_{k+1}] with the model's
    one-step death probability; deaths settle at the step's right endpoint.
    """
    if N < 1:
        raise ValueError("need at least one policyholder")
    alive = np.empty(grid.n + 1, dtype=np.int64)
    alive[0] = N
    cur = N
    times = grid.times
    for k in range(grid.n):
        if cur > 0:
            p = model.step_death_prob(times[k], grid.dt)
            cur -= int(rng.binomial(cur, p))
        alive[k + 1] = cur
    return alive
