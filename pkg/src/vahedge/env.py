"""MDP hedging environment.

One episode hedges a homogeneous GMMB cohort from issue to the earlier of
maturity and the last policyholder's death.  The market path and death
process are drawn once at reset (they do not depend on the agent), the
agent chooses a risky-asset position each day, and the reward after each
step is the decrease in squared local hedging error,

    R_{k+1} = (P_k - L_k)^2 - (P_{k+1} - L_{k+1})^2,

which telescopes over an episode to minus the squared terminal P&L
(undiscounted, so gamma = 1 throughout).

All monetary quantities (portfolio value, liability, rider income) are
kept per initial policyholder and the action is shares of the risky asset
per initial policyholder; the insurer's aggregate position is N times the
action.  This matches the observation normalization, makes policies
trained on a large cohort directly applicable to a single contract, and at
N = 1 coincides with portfolio units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .liability import ContractTerms, bs_cfm_net_liability, ifm_bs_net_liability
from .market import BsParams, Cfm, Ifm, MortalityModel, PathGrid, simulate_bs_path, simulate_deaths

OBS_DIM = 6


@dataclass(frozen=True)
class EnvConfig:
    """Market, mortality, contract and grid for one hedging environment."""

    market: BsParams
    mortality: MortalityModel
    terms: ContractTerms
    grid: PathGrid

    def __post_init__(self):
        if not math.isclose(self.grid.T, self.terms.T, rel_tol=1e-12):
            raise ValueError("grid horizon must equal the contract term")
        if isinstance(self.mortality, Ifm) and self.terms.T >= self.mortality.b_up:
            raise ValueError("term must end before the lifetime upper bound")

    def net_liability(self, t: float, F, surv_frac):
        """Per-policyholder net liability under this environment's true model."""
        if isinstance(self.mortality, Cfm):
            dec = bs_cfm_net_liability(
                t, F, surv_frac, self.terms, self.market.r, self.market.sigma, self.mortality.nu
            )
        else:
            dec = ifm_bs_net_liability(
                t, F, surv_frac, self.terms, self.market.r, self.market.sigma, self.mortality.b_up
            )
        return dec.net

    def with_market(self, **kwargs) -> "EnvConfig":
        return replace(self, market=replace(self.market, **kwargs))


@dataclass
class EpisodeState:
    """Raw bookkeeping plus the six-feature normalized observation."""

    k: int
    S: float
    F: float
    P: float
    survivors: int
    deaths_step: int
    config: EnvConfig = field(repr=False)

    @property
    def obs(self) -> np.ndarray:
        terms, grid = self.config.terms, self.config.grid
        return np.array(
            [
                self.F / terms.G,
                self.S / terms.G,
                self.P,
                self.survivors / terms.N,
                self.deaths_step / terms.N,
                terms.T - self.k * grid.dt,
            ]
        )


@dataclass(frozen=True)
class Transition:
    """One (state, action, reward, next state, terminal) record."""

    obs: np.ndarray
    action: float
    reward: float
    next_obs: np.ndarray
    terminal: bool


class HedgingEnv:
    """Sequential per-episode interface; see module docstring for conventions."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self._state: EpisodeState | None = None
        self._terminal = True

    @property
    def state(self) -> EpisodeState:
        if self._state is None:
            raise RuntimeError("reset the environment first")
        return self._state

    @property
    def terminal(self) -> bool:
        return self._terminal

    def reset(self, rng: np.random.Generator) -> EpisodeState:
        """Draw the full market and death paths for a new episode; returns the
        initial state (P = 0, F = rho*S0, all policyholders alive)."""
        cfg = self.config
        self._prices = simulate_bs_path(cfg.market, cfg.grid, rng)
        self._alive = simulate_deaths(cfg.mortality, cfg.terms.N, cfg.grid, rng)
        self._state = EpisodeState(
            k=0,
            S=float(self._prices[0]),
            F=cfg.terms.rho * float(self._prices[0]),
            P=0.0,
            survivors=cfg.terms.N,
            deaths_step=0,
            config=cfg,
        )
        self._terminal = False
        l0 = cfg.net_liability(0.0, self._state.F, 1.0)
        self._liab = float(l0)
        self._anchor = (0.0 - self._liab) ** 2
        return self._state

    def step(self, action: float) -> tuple[EpisodeState, float, bool]:
        """Advance one hedging period holding ``action`` shares per initial
        policyholder; returns (next state, reward, terminal)."""
        if self._terminal:
            raise RuntimeError("episode is over; reset the environment")
        cfg = self.config
        st = self._state
        terms, grid = cfg.terms, cfg.grid
        k, dt, r = st.k, grid.dt, cfg.market.r

        h = float(action) if st.survivors > 0 else 0.0
        s_now, s_next = float(self._prices[k]), float(self._prices[k + 1])
        alive_frac = st.survivors / terms.N
        growth = math.exp(r * dt)
        p_next = (st.P - h * s_now) * growth + h * s_next + terms.m_e * st.F * alive_frac * dt * growth

        t_next = (k + 1) * dt
        survivors_next = int(self._alive[k + 1])
        f_next = terms.rho * s_next * math.exp(-terms.m * t_next)
        liab_next = float(cfg.net_liability(t_next, f_next, survivors_next / terms.N))

        sq_next = (p_next - liab_next) ** 2
        reward = self._anchor - sq_next

        self._state = EpisodeState(
            k=k + 1,
            S=s_next,
            F=f_next,
            P=p_next,
            survivors=survivors_next,
            deaths_step=st.survivors - survivors_next,
            config=cfg,
        )
        self._liab = liab_next
        self._anchor = sq_next
        self._terminal = survivors_next == 0 or k + 1 == grid.n
        return self._state, reward, self._terminal

    @property
    def pnl(self) -> float:
        """Current P - L; the terminal P&L once the episode has ended."""
        return self.state.P - self._liab


def run_episode(config: EnvConfig, policy, rng: np.random.Generator):
    """Roll one full episode under a deterministic policy ``policy(k, obs)``.

    Returns (transitions, terminal P&L).
    """
    env = HedgingEnv(config)
    state = env.reset(rng)
    transitions = []
    while not env.terminal:
        obs = state.obs
        action = float(np.asarray(policy(state.k, obs)).reshape(-1)[0])
        state, reward, terminal = env.step(action)
        transitions.append(Transition(obs, action, reward, state.obs, terminal))
    return transitions, env.pnl
