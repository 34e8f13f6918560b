"""REINFORCE and PPO trainers over the hedging environment.

PPO collects a fixed-size batch of transitions that may span episode
boundaries, bootstraps advantages through the value branch, and takes one
adaptive-moment gradient-ascent step per batch on

    J = L_CLIP - c1 * L_VF + c2 * L_EN,

where L_CLIP is the clipped importance-weighted advantage sum, L_VF the
squared error between bootstrapped return targets and the value branch,
and L_EN the summed log standard deviation of the Gaussian policy.
REINFORCE updates once per episode from whole-episode returns against the
value baseline.  The online-learning loop continues PPO updates inside a
live evaluation market whose contracts chain in real time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import neuralnet as nn
from . import rng as rngmod
from .env import EnvConfig, HedgingEnv


@dataclass(frozen=True)
class PpoConfig:
    """Hyperparameters of one PPO run; defaults follow the training setup."""

    alpha: float = 0.002
    K: int = 60
    epsilon: float = 0.2
    c1: float = 0.25
    c2: float = 0.01
    total_timesteps: int = 100_000
    grad_clip: float = 10.0
    # precondition each batch by s = RMS(advantages): the clipped surrogate
    # uses advantages/s and the value loss uses errors/s.  Early batches
    # otherwise carry advantages and value errors orders of magnitude above
    # the entropy term, and their gradients through the shared trunk swamp
    # the policy signal.  Dividing by s bounds both while preserving signs
    # and relative weights; rewards telescope within a fragment, so the
    # action-relevant part of an advantage is a fragment-wide common term,
    # which rules out the usual mean-subtraction (it would cancel the signal
    # and is not a valid action-independent baseline here anyway).
    normalize_scale: bool = True

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.K < 1:
            raise ValueError("batch size must be at least 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("clip factor must lie in (0, 1)")
        if not (0 <= self.c1 <= 1 and 0 <= self.c2 <= 1):
            raise ValueError("loss coefficients must lie in [0, 1]")


@dataclass
class Batch:
    """K transitions in collection order, possibly spanning episodes.

    ``terminals[k]`` marks transitions that ended an episode, partitioning
    the batch into contiguous fragments.  ``bootstrap_value`` is the value
    estimate (under the collection-time weights) of the state following the
    last transition, used when that fragment was cut mid-episode.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    old_log_density: np.ndarray
    old_values: np.ndarray
    terminals: np.ndarray
    bootstrap_value: float

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class AdvantageEstimate:
    """Per-transition advantage and bootstrapped return target (gamma = 1)."""

    advantages: np.ndarray
    targets: np.ndarray


class ExperienceStream:
    """Steps the environment with sampled actions, resuming mid-episode
    across update boundaries."""

    def __init__(self, config: EnvConfig, seed: int):
        self.env = HedgingEnv(config)
        self._market_rng = rngmod.stream(seed, rngmod.MARKET)
        self._action_rng = rngmod.stream(seed, rngmod.POLICY)
        self._obs = self.env.reset(self._market_rng).obs
        self.episodes_started = 1

    def set_config(self, config: EnvConfig) -> None:
        """Swap the environment for the next episode (online-learning chaining)."""
        self.env = HedgingEnv(config)
        self._obs = self.env.reset(self._market_rng).obs
        self.episodes_started += 1

    @property
    def current_price(self) -> float:
        return self.env.state.S

    def collect(self, params: nn.NetworkParams, K: int, on_episode_end=None) -> Batch:
        obs = np.empty((K, 6))
        actions = np.empty(K)
        rewards = np.empty(K)
        old_logd = np.empty(K)
        old_values = np.empty(K)
        terminals = np.zeros(K, dtype=bool)
        for k in range(K):
            out, value = nn.forward(params, self._obs)
            a = nn.sample_action(out, self._action_rng)
            obs[k] = self._obs
            actions[k] = a
            old_logd[k] = nn.log_density(out, a)
            old_values[k] = value
            state, reward, terminal = self.env.step(a)
            rewards[k] = reward
            terminals[k] = terminal
            if terminal:
                if on_episode_end is not None:
                    on_episode_end(self)
                else:
                    self._obs = self.env.reset(self._market_rng).obs
                    self.episodes_started += 1
            else:
                self._obs = state.obs
        if terminals[-1]:
            bootstrap = 0.0
        else:
            _, bootstrap = nn.forward(params, self._obs)
        return Batch(obs, actions, rewards, old_logd, old_values, terminals, float(bootstrap))


def collect_batch(config: EnvConfig, params: nn.NetworkParams, K: int, seed: int) -> Batch:
    """One batch from a fresh stream (testing convenience; training reuses a
    persistent :class:`ExperienceStream`)."""
    return ExperienceStream(config, seed).collect(params, K)


def compute_advantages(batch: Batch, params: nn.NetworkParams | None = None) -> AdvantageEstimate:
    """Returns-to-go within each fragment (bootstrapped at a mid-episode cut)
    minus the collection-time value estimates.  ``params`` is accepted for
    interface symmetry but the stored old values are authoritative."""
    K = len(batch)
    targets = np.empty(K)
    running = batch.bootstrap_value
    for k in range(K - 1, -1, -1):
        if batch.terminals[k]:
            running = 0.0
        running = batch.rewards[k] + running
        targets[k] = running
    return AdvantageEstimate(targets - batch.old_values, targets)


class Adam:
    """Adaptive moment estimation, here used for gradient ascent."""

    def __init__(self, arrays: list, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def ascend(self, arrays: list, grads: list, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            a += lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def global_norm(grads: list) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads))


def batch_scale(advantages: np.ndarray) -> float:
    """Root-mean-square of a batch of advantages (the preconditioning scale)."""
    return float(np.sqrt(np.mean(advantages**2))) + 1e-8


def ppo_objective_graph(
    params: nn.NetworkParams, batch: Batch, adv: AdvantageEstimate, cfg: PpoConfig
):
    """Builds the taped PPO surrogate; returns (objective Var, taped net, diagnostics)."""
    taped = nn.TapedNetwork(params)
    c, d, v = taped.forward(batch.obs)
    logd = taped.log_density(c, d, batch.actions)
    ratio = nn.exp(nn.sub(logd, nn.Var(batch.old_log_density)))
    s = batch_scale(adv.advantages) if cfg.normalize_scale else 1.0
    a_const = nn.Var(adv.advantages / s)
    clipped = nn.clip(ratio, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon)
    l_clip = nn.vsum(nn.minimum(nn.mul(ratio, a_const), nn.mul(clipped, a_const)))
    l_vf = nn.vsum(nn.square(nn.mul(nn.Var(1.0 / s), nn.sub(nn.Var(adv.targets), v))))
    l_en = nn.vsum(nn.log(d))
    objective = nn.add(
        nn.sub(l_clip, nn.mul(nn.Var(cfg.c1), l_vf)), nn.mul(nn.Var(cfg.c2), l_en)
    )
    clip_fraction = float(
        np.mean((ratio.value < 1.0 - cfg.epsilon) | (ratio.value > 1.0 + cfg.epsilon))
    )
    diag = {
        "objective": float(objective.value),
        "l_clip": float(l_clip.value),
        "l_vf": float(l_vf.value),
        "l_en": float(l_en.value),
        "clip_fraction": clip_fraction,
        "batch_entropy": float(np.mean(np.log(d.value))),
    }
    return objective, taped, diag


@dataclass
class UpdateDiagnostics:
    mean_bootstrapped_reward: float
    batch_entropy: float
    clip_fraction: float
    grad_norm: float
    objective: float
    aborted: bool = False


def ppo_update(
    params: nn.NetworkParams, batch: Batch, cfg: PpoConfig, opt: Adam
) -> UpdateDiagnostics:
    """One gradient-ascent step on the PPO surrogate, in place on ``params``.

    A non-finite gradient aborts the update and leaves the weights untouched.
    """
    adv = compute_advantages(batch)
    objective, taped, diag = ppo_objective_graph(params, batch, adv, cfg)
    nn.backward(objective)
    grads = taped.grads()
    norm = global_norm(grads)
    if not math.isfinite(norm):
        return UpdateDiagnostics(
            float(adv.targets.mean()), diag["batch_entropy"], diag["clip_fraction"],
            norm, diag["objective"], aborted=True,
        )
    if norm > cfg.grad_clip:
        scale = cfg.grad_clip / norm
        grads = [g * scale for g in grads]
    arrays = params.arrays()
    opt.ascend(arrays, grads, cfg.alpha)
    params.set_arrays(arrays)
    return UpdateDiagnostics(
        float(adv.targets.mean()), diag["batch_entropy"], diag["clip_fraction"],
        norm, diag["objective"],
    )


@dataclass
class TrainingLogRow:
    update: int
    timestep: int
    mean_bootstrapped_reward: float
    batch_entropy: float
    clip_fraction: float


def train_ppo(
    config: EnvConfig,
    cfg: PpoConfig,
    seed: int,
    init: nn.NetworkParams | None = None,
) -> tuple[nn.NetworkParams, list[TrainingLogRow]]:
    """Full PPO training loop: collect -> advantage -> one ascent step, until
    ``total_timesteps`` environment transitions have been consumed."""
    params = init.copy() if init is not None else nn.init_params(rngmod.stream(seed, rngmod.INIT))
    stream = ExperienceStream(config, seed)
    opt = Adam(params.arrays())
    log: list[TrainingLogRow] = []
    updates = math.ceil(cfg.total_timesteps / cfg.K)
    for u in range(1, updates + 1):
        batch = stream.collect(params, cfg.K)
        diag = ppo_update(params, batch, cfg, opt)
        log.append(
            TrainingLogRow(u, u * cfg.K, diag.mean_bootstrapped_reward, diag.batch_entropy, diag.clip_fraction)
        )
    return params, log


def reinforce_objective_graph(params: nn.NetworkParams, obs, actions, advantages):
    """Taped REINFORCE surrogate sum_k a_k (ln phi_k + V_k), advantages fixed."""
    taped = nn.TapedNetwork(params)
    c, d, v = taped.forward(obs)
    logd = taped.log_density(c, d, actions)
    a_const = nn.Var(np.asarray(advantages, dtype=float))
    objective = nn.vsum(nn.mul(a_const, nn.add(logd, v)))
    return objective, taped


def train_reinforce(
    config: EnvConfig,
    alpha: float,
    seed: int,
    episodes: int = 200,
    grad_clip: float = 10.0,
) -> tuple[nn.NetworkParams, list[dict]]:
    """Per-episode policy gradient with the value baseline.

    Each episode contributes sum_k a_k (grad ln phi_k + grad V_k) with
    a_k the realized returns-to-go minus the pre-update value estimates.
    """
    params = nn.init_params(rngmod.stream(seed, rngmod.INIT))
    market_rng = rngmod.stream(seed, rngmod.MARKET)
    action_rng = rngmod.stream(seed, rngmod.POLICY)
    opt = Adam(params.arrays())
    env = HedgingEnv(config)
    log = []
    for ep in range(1, episodes + 1):
        obs_list, act_list, rew_list, val_list = [], [], [], []
        state = env.reset(market_rng)
        while not env.terminal:
            out, value = nn.forward(params, state.obs)
            a = nn.sample_action(out, action_rng)
            obs_list.append(state.obs)
            act_list.append(a)
            val_list.append(value)
            state, reward, _ = env.step(a)
            rew_list.append(reward)
        returns = np.cumsum(np.asarray(rew_list)[::-1])[::-1]
        advantages = returns - np.asarray(val_list)
        objective, taped = reinforce_objective_graph(
            params, np.asarray(obs_list), np.asarray(act_list), advantages
        )
        nn.backward(objective)
        grads = taped.grads()
        norm = global_norm(grads)
        if not math.isfinite(norm):
            log.append({"episode": ep, "terminal_pnl": env.pnl, "aborted": True})
            continue
        if norm > grad_clip:
            grads = [g * (grad_clip / norm) for g in grads]
        arrays = params.arrays()
        opt.ascend(arrays, grads, alpha)
        params.set_arrays(arrays)
        log.append({"episode": ep, "terminal_pnl": env.pnl, "return": float(returns[0])})
    return params, log


class NetworkPolicy:
    """Frozen-policy adapter: plays the Gaussian mean of the policy branch."""

    def __init__(self, params: nn.NetworkParams):
        self.params = params

    def __call__(self, k: int, obs: np.ndarray) -> np.ndarray:
        c, _, _ = nn.forward_batch(self.params, obs)
        return c


@dataclass
class OnlineLogRow:
    update: int
    timestep: int
    price: float
    means: dict = field(default_factory=dict)


def online_learning_run(
    trained: nn.NetworkParams,
    eval_config: EnvConfig,
    online_cfg: PpoConfig,
    updates: int,
    eval_scenarios: int,
    seed: int,
    benchmarks: dict | None = None,
) -> list[OnlineLogRow]:
    """Real-time PPO in the evaluation market with rolling evaluation.

    Contracts chain: when an episode ends the next contract is issued at the
    final risky-asset price with a fresh full term, and the policyholder age
    advances by the elapsed time.  Before any learning and again after each
    of ``updates`` PPO updates, the current policy (frozen, mean action), a
    copy that never learns, and any benchmark policies are each evaluated on
    the same ``eval_scenarios`` fresh scenarios issued at the current price.
    """
    from .evalharness import evaluate_policy  # late import: avoids module cycle

    benchmarks = benchmarks or {}
    params = trained.copy()
    frozen = trained.copy()
    opt = Adam(params.arrays())

    elapsed = {"t": 0.0}

    def begin_next_contract(stream: ExperienceStream) -> None:
        elapsed["t"] += stream.env.state.k * stream.env.config.grid.dt
        cfg_now = stream.env.config
        nxt = replace(
            cfg_now,
            market=replace(cfg_now.market, S0=stream.env.state.S),
            terms=replace(cfg_now.terms, x=eval_config.terms.x + elapsed["t"]),
        )
        stream.set_config(nxt)

    stream = ExperienceStream(eval_config, seed)

    def evaluate_all(update: int) -> OnlineLogRow:
        price = stream.env.state.S
        cfg_here = replace(
            stream.env.config, market=replace(stream.env.config.market, S0=price)
        )
        means = {}
        policies = {"online": NetworkPolicy(params), "no_learning": NetworkPolicy(frozen)}
        policies.update(benchmarks)
        for name, pol in policies.items():
            report = evaluate_policy(pol, cfg_here, eval_scenarios, seed=(seed, 7, update))
            means[name] = report.mean
        return OnlineLogRow(update, update * online_cfg.K, price, means)

    log = [evaluate_all(0)]
    for u in range(1, updates + 1):
        batch = stream.collect(params, online_cfg.K, on_episode_end=begin_next_contract)
        ppo_update(params, batch, online_cfg, opt)
        log.append(evaluate_all(u))
    return log
