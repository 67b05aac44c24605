"""The two-timescale training loop.

One ``train(config)`` call is strictly single-threaded and deterministic
given the seed: every batch collects whole episodes, updates the critic
first (the fast timescale), freezes it, computes advantage/Q weights, builds
the gradient and the matrix-free curvature operator from the *same* weight
array, solves for a direction with optional PD screening, and applies the
actor step. Curvature is only ever touched through vector products.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import critic as critic_mod
from . import envs as envs_mod
from .curvature import (
    CurvatureKind,
    Weighting,
    estimate_spectrum,
    h12_diagnostic,
    make_operator,
)
from .optim import (
    Natural,
    Newton,
    Vanilla,
    apply_update,
    policy_gradient,
    solve_direction,
    step_size_bound,
)
from .policies import GaussianMlpPolicy, SoftmaxLinearPolicy
from .rng import derive_streams

METHODS = ("reinforce", "natural", "acgn1", "acgn2")

# Per-method actor step sizes and damping (softmax presets), with the critic
# inner-step count raised where needed so the critic's effective step
# beta * n_inner stays strictly above the actor's alpha.
_METHOD_PRESETS = {
    "reinforce": dict(alpha=5e-3, lam=0.0, n_inner=10),
    "natural": dict(alpha=5e-2, lam=1e-3, n_inner=15),
    "acgn1": dict(alpha=5e-2, lam=0.1, n_inner=15),
    "acgn2": dict(alpha=1e-1, lam=0.1, n_inner=25),
}

# Continuous-control overrides. The Gaussian MLP is not log-concave and its
# curvature products are finite-differenced, so the second-order rules get
# heavier damping; the sigma floor keeps exploration (and score scales) sane.
_REACHER_PRESETS = {
    "reinforce": dict(alpha=5e-2, lam=0.0),
    "natural": dict(alpha=5e-2, lam=1e-3),
    "acgn1": dict(alpha=5e-2, lam=1.0),
    "acgn2": dict(alpha=1e-1, lam=1.0),
}
_REACHER_SIGMA_MIN = 0.1

_THRESHOLDS = {"cartpole": (450.0, 50), "reacher": (-5.0, 50)}


@dataclass
class TrainConfig:
    env: str = "cartpole"
    method: str = "acgn2"
    total_episodes: int = 500
    gamma: float = 0.99
    episodes_per_batch: int = 5
    seed: int = 42
    # actor update
    alpha: float | None = None
    lam: float | None = None
    cg_iters: int = 20
    cg_tol: float = 1e-6
    solver: str = "cg"
    screening: bool = True
    # critic (fast timescale)
    beta: float = 5e-2
    n_inner: int | None = None
    warmup_batches: int = 20
    # weighting
    weighting: str = "advantage"
    reward_shift: float | None = None
    normalize_adv: bool = False
    # diagnostics
    h12_diag: bool = False
    h12_every: int = 5
    spectrum: bool = False
    spectrum_probes: int = 2
    spectrum_iters: int = 100
    step_bound_enforce: bool = False
    # architecture
    policy_hidden: int = 32
    critic_hidden: int = 64
    sigma_min: float = 1e-2
    sigma_max: float = 1.0
    # metrics
    threshold: float | None = None
    threshold_window: int = 50

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.episodes_per_batch < 1:
            raise ValueError("episodes_per_batch must be >= 1")
        if self.total_episodes != 0 and self.total_episodes < self.episodes_per_batch:
            raise ValueError("total_episodes must be 0 or >= episodes_per_batch")
        if self.weighting not in ("advantage", "q"):
            raise ValueError("weighting must be 'advantage' or 'q'")


def resolve_config(cfg: TrainConfig) -> TrainConfig:
    """Fill method/env-dependent defaults and check the timescale ordering."""
    cfg.validate()
    preset = dict(_METHOD_PRESETS[cfg.method])
    sigma_min = cfg.sigma_min
    if cfg.env == "reacher":
        preset.update(_REACHER_PRESETS[cfg.method])
        if sigma_min == TrainConfig.sigma_min:
            sigma_min = _REACHER_SIGMA_MIN
    alpha = cfg.alpha if cfg.alpha is not None else preset["alpha"]
    lam = cfg.lam if cfg.lam is not None else preset["lam"]
    n_inner = cfg.n_inner if cfg.n_inner is not None else preset["n_inner"]
    threshold = cfg.threshold
    window = cfg.threshold_window
    if threshold is None and cfg.env in _THRESHOLDS:
        threshold, window = _THRESHOLDS[cfg.env]
    out = replace(
        cfg,
        alpha=alpha,
        lam=lam,
        n_inner=n_inner,
        sigma_min=sigma_min,
        threshold=threshold,
        threshold_window=window,
    )
    if out.beta * out.n_inner <= out.alpha:
        warnings.warn(
            f"critic effective step beta*n_inner={out.beta * out.n_inner:g} does not "
            f"exceed actor alpha={out.alpha:g}; the two-timescale ordering is violated",
            stacklevel=2,
        )
    return out


class Trajectory:
    """One episode as arrays. ``states`` has length T+1 (the final state is
    kept for bootstrapping); continuous ``actions`` store the raw Gaussian
    draws whose log-probabilities were recorded at sampling time."""

    __slots__ = ("states", "actions", "rewards", "logprobs", "terminated", "truncated", "shift")

    def __init__(self, states, actions, rewards, logprobs, terminated, truncated, shift):
        self.states = states
        self.actions = actions
        self.rewards = rewards
        self.logprobs = logprobs
        self.terminated = terminated
        self.truncated = truncated
        self.shift = shift

    def __len__(self):
        return len(self.rewards)

    @property
    def return_(self) -> float:
        return float(self.rewards.sum())

    @property
    def raw_return(self) -> float:
        """Return on the native reward scale (shift removed)."""
        return self.return_ - self.shift * len(self.rewards)


def collect_batch(env, policy, n_episodes, env_rng, policy_rng) -> list[Trajectory]:
    """Roll out n_episodes full episodes (terminated or truncated at the
    horizon), annotating each step with its sampling-time log-probability."""
    horizon = env.spec.max_episode_len
    discrete = isinstance(env.spec.action_kind, envs_mod.Discrete)
    out = []
    for _ in range(n_episodes):
        state = env.reset(env_rng)
        states = [state]
        actions = []
        rewards = []
        logprobs = []
        terminated = False
        for t in range(horizon):
            action, logp = policy.sample_with_logprob(state, policy_rng)
            tr = env.step(state, action, env_rng, t)
            actions.append(action)
            rewards.append(tr.reward)
            logprobs.append(logp)
            state = tr.next_state
            states.append(state)
            if tr.terminal:
                terminated = True
                break
        out.append(
            Trajectory(
                states=np.asarray(states),
                actions=np.asarray(actions, dtype=np.int64 if discrete else np.float64),
                rewards=np.asarray(rewards),
                logprobs=np.asarray(logprobs),
                terminated=terminated,
                truncated=not terminated,
                shift=env.spec.reward_shift,
            )
        )
    return out


@dataclass
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminal: np.ndarray
    t_index: np.ndarray
    logprobs: np.ndarray


def flatten_batch(trajectories: list[Trajectory]) -> TransitionBatch:
    states, actions, rewards, next_states, terminal, t_index, logprobs = [], [], [], [], [], [], []
    for traj in trajectories:
        n = len(traj)
        states.append(traj.states[:n])
        next_states.append(traj.states[1 : n + 1])
        actions.append(traj.actions)
        rewards.append(traj.rewards)
        logprobs.append(traj.logprobs)
        term = np.zeros(n, dtype=bool)
        if traj.terminated:
            term[-1] = True  # truncation keeps terminal=False: bootstrapped
        terminal.append(term)
        t_index.append(np.arange(n))
    return TransitionBatch(
        states=np.concatenate(states),
        actions=np.concatenate(actions),
        rewards=np.concatenate(rewards),
        next_states=np.concatenate(next_states),
        terminal=np.concatenate(terminal),
        t_index=np.concatenate(t_index),
        logprobs=np.concatenate(logprobs),
    )


@dataclass
class RunResult:
    config: TrainConfig
    returns: np.ndarray  # per-episode, native reward scale
    critic_losses: list = field(default_factory=list)  # one per batch
    reports: list = field(default_factory=list)  # one UpdateReport per actor batch
    batch_of_episode: np.ndarray | None = None
    h12_values: list = field(default_factory=list)  # (batch_index, value)
    total_wall_ns: int = 0
    final_theta: np.ndarray | None = None

    @property
    def summary(self) -> dict:
        final = self.returns[-50:] if len(self.returns) else np.zeros(0)
        thr = self.config.threshold
        return {
            "episodes": int(len(self.returns)),
            "final50_mean": float(final.mean()) if len(final) else math.nan,
            "episodes_to_threshold": (
                episodes_to_threshold(self, thr, self.config.threshold_window)
                if thr is not None
                else None
            ),
            "total_wall_s": self.total_wall_ns / 1e9,
        }


def episodes_to_threshold(result, threshold: float, window: int) -> int | None:
    """First episode index whose trailing-`window` mean return reaches the
    threshold, or None if it never does."""
    if window < 1:
        raise ValueError("window must be >= 1")
    returns = result.returns if isinstance(result, RunResult) else np.asarray(result, dtype=float)
    if len(returns) < window:
        return None
    cs = np.concatenate([[0.0], np.cumsum(returns)])
    trailing = (cs[window:] - cs[:-window]) / window
    hits = np.nonzero(trailing >= threshold)[0]
    if len(hits) == 0:
        return None
    return int(hits[0] + window - 1)


def build_policy(env, cfg: TrainConfig, init_rng):
    kind = env.spec.action_kind
    if isinstance(kind, envs_mod.Discrete):
        # zero init: uniform policy, early behavior seed-independent except
        # through sampling
        return SoftmaxLinearPolicy(env.spec.state_dim, kind.n)
    policy = GaussianMlpPolicy(
        env.spec.state_dim,
        kind.dim,
        kind.low,
        kind.high,
        hidden=cfg.policy_hidden,
        sigma_min=cfg.sigma_min,
        sigma_max=cfg.sigma_max,
    )
    policy.init_params(init_rng)
    return policy


def _make_env(cfg: TrainConfig):
    shift = cfg.reward_shift
    if shift is None and cfg.env == "reacher" and cfg.weighting == "q":
        # Q-weighted curvature wants nonnegative weights; shift the reacher's
        # rewards so each step is nonnegative near the target.
        shift = envs_mod.PointMassReacher.nonnegative_shift()
    return envs_mod.make_env(cfg.env, reward_shift=shift)


def _update_rule(cfg: TrainConfig):
    if cfg.method == "reinforce":
        return Vanilla(alpha=cfg.alpha), None
    if cfg.method == "natural":
        return (
            Natural(alpha=cfg.alpha, lam=cfg.lam, cg_iters=cfg.cg_iters, cg_tol=cfg.cg_tol),
            CurvatureKind.fisher(),
        )
    weighting = Weighting(cfg.weighting)
    kind = CurvatureKind.acgn1(weighting) if cfg.method == "acgn1" else CurvatureKind.acgn2(weighting)
    return (
        Newton(
            kind=kind,
            alpha=cfg.alpha,
            lam=cfg.lam,
            cg_iters=cfg.cg_iters,
            cg_tol=cfg.cg_tol,
            screening=cfg.screening,
            solver=cfg.solver,
        ),
        kind,
    )


def _critic_refitter(cfg, env, critic, streams):
    """omega_fn for the interaction diagnostic: collect a fresh batch under
    the perturbed policy with common random numbers, then refit the critic
    to tolerance. Returns None when the refit does not settle."""
    diag_seed = int(streams.probe.integers(0, 2**63 - 1))

    def omega_fn(theta):
        probe_policy_rng = np.random.Generator(np.random.PCG64(diag_seed))
        probe_env_rng = np.random.Generator(np.random.PCG64(diag_seed + 1))
        if isinstance(env.spec.action_kind, envs_mod.Discrete):
            probe_policy = SoftmaxLinearPolicy(env.spec.state_dim, env.spec.action_kind.n, theta)
        else:
            probe_policy = build_policy(env, cfg, np.random.default_rng(0))
            probe_policy.set_theta(theta)
        trajs = collect_batch(env, probe_policy, cfg.episodes_per_batch, probe_env_rng, probe_policy_rng)
        batch = flatten_batch(trajs)
        refit = critic.clone()
        n_inner = max(1, cfg.n_inner)
        # settled when the per-step parameter movement is negligible; round
        # budget keeps the total step count comparable across n_inner choices
        rounds = max(120, 6000 // n_inner)
        for _ in range(rounds):
            before = refit.omega
            critic_mod.critic_update(
                refit, batch.states, batch.rewards, batch.next_states, batch.terminal,
                cfg.gamma, cfg.beta, n_inner,
            )
            move = np.linalg.norm(refit.omega - before) / (1.0 + np.linalg.norm(refit.omega))
            if move <= 1e-4 * n_inner:
                return refit.omega
        return None

    return omega_fn


def train(config: TrainConfig) -> RunResult:
    cfg = resolve_config(config)
    streams = derive_streams(cfg.seed)
    env = _make_env(cfg)
    policy = build_policy(env, cfg, streams.init)
    critic = critic_mod.ValueCritic(env.spec.state_dim, hidden=cfg.critic_hidden)
    critic.init_params(streams.init)
    rule, kind = _update_rule(cfg)

    result = RunResult(config=cfg, returns=np.zeros(0))
    if cfg.total_episodes == 0:
        result.final_theta = policy.theta.copy()
        return result

    t_start = time.perf_counter_ns()
    all_returns: list[float] = []
    batch_of_episode: list[int] = []
    L_hat = 0.0
    episodes_left = cfg.total_episodes
    batch_index = 0
    while episodes_left > 0:
        n_eps = min(cfg.episodes_per_batch, episodes_left)
        episodes_left -= n_eps
        trajs = collect_batch(env, policy, n_eps, streams.env, streams.policy)
        all_returns.extend(t.raw_return for t in trajs)
        batch_of_episode.extend([batch_index] * n_eps)
        batch = flatten_batch(trajs)

        # fast timescale first, always before the actor step
        loss = critic_mod.critic_update(
            critic, batch.states, batch.rewards, batch.next_states, batch.terminal,
            cfg.gamma, cfg.beta, cfg.n_inner,
        )
        result.critic_losses.append(loss)

        if batch_index < cfg.warmup_batches:
            batch_index += 1
            continue

        # critic is frozen from here on: the same weight array feeds both the
        # gradient and the curvature operator
        adv = critic_mod.td0_targets(
            critic, batch.states, batch.rewards, batch.next_states, batch.terminal,
            batch.t_index, cfg.gamma,
        )
        weights = adv.q_weights if cfg.weighting == "q" else adv.advantages
        if cfg.normalize_adv:
            weights = (weights - weights.mean()) / (weights.std() + 1e-8)

        g = policy_gradient(policy, batch.states, batch.actions, weights)
        operator = None
        if kind is not None:
            adv_for_op = critic_mod.AdvantageBatch(weights, weights, adv.values, adv.discounts) \
                if cfg.normalize_adv else adv
            operator = make_operator(
                kind, policy, batch.states, batch.actions, adv_for_op, lam=cfg.lam
            )
        d, report = solve_direction(rule, operator, g)

        alpha_used = cfg.alpha
        if operator is not None and cfg.spectrum:
            est = estimate_spectrum(
                operator, probes=cfg.spectrum_probes, iters=cfg.spectrum_iters, rng=streams.probe
            )
            report.m_hat = est.m_hat
            report.M_hat = est.M_hat
            for _ in range(cfg.spectrum_probes):
                v = streams.probe.standard_normal(policy.dim)
                L_hat = max(L_hat, abs(v @ operator.curvature_vp(v)) / (v @ v))
            report.step_bound_alpha = step_size_bound(est, max(L_hat, 1e-12))
            if cfg.step_bound_enforce and math.isfinite(report.step_bound_alpha):
                alpha_used = min(alpha_used, report.step_bound_alpha)
        report.alpha_used = alpha_used

        apply_update(policy, d, alpha_used)
        result.reports.append(report)

        if cfg.h12_diag and (batch_index - cfg.warmup_batches) % cfg.h12_every == 0:
            omega_fn = _critic_refitter(cfg, env, critic, streams)
            value = h12_diagnostic(
                policy, critic, batch.states, batch.actions, omega_fn, streams.probe
            )
            result.h12_values.append((batch_index, value))

        batch_index += 1

    result.returns = np.asarray(all_returns)
    result.batch_of_episode = np.asarray(batch_of_episode, dtype=np.int64)
    result.total_wall_ns = time.perf_counter_ns() - t_start
    result.final_theta = policy.theta.copy()
    return result
