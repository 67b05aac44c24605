"""Native control environments.

Three environments, all implemented from scratch:

* ``CartPole`` -- the classic cart-pole balancing task with the canonical
  physical constants and Euler integration.
* ``PointMassReacher`` -- a planar point mass steered toward a random target,
  with a distance-plus-control-cost reward. Continuous actions.
* ``TinyMdp`` -- a small tabular MDP whose value functions, occupancy
  measures, and expected return are computable exactly by dynamic
  programming. Used as the ground truth for gradient/curvature checks.

Environments are stateless machines: ``reset(rng)`` draws an initial state
and ``step(state, action, rng, t)`` maps a (state, action) pair to a
Transition. All randomness comes from the generator passed in, so instances
are trivially safe to rebuild or hand to worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidActionError


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass(frozen=True)
class Box:
    dim: int
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low, dtype=np.float64)
        high = np.asarray(self.high, dtype=np.float64)
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)
        if low.shape != (self.dim,) or high.shape != (self.dim,):
            raise ValueError("low/high must have shape (dim,)")
        if not np.all(low < high):
            raise ValueError("require low < high componentwise")


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_kind: Discrete | Box
    max_episode_len: int
    reward_shift: float = 0.0

    def __post_init__(self):
        if self.max_episode_len < 1:
            raise ValueError("max_episode_len must be >= 1")
        if self.state_dim < 1:
            raise ValueError("state_dim must be >= 1")


class Transition:
    """One environment step. ``action`` echoes the action as supplied by the
    caller (continuous actions are clipped internally before the dynamics)."""

    __slots__ = ("state", "action", "reward", "next_state", "terminal", "t")

    def __init__(self, state, action, reward, next_state, terminal, t):
        self.state = state
        self.action = action
        self.reward = reward
        self.next_state = next_state
        self.terminal = terminal
        self.t = t

    def __repr__(self):  # pragma: no cover - debugging aid
        return (
            f"Transition(t={self.t}, action={self.action!r}, "
            f"reward={self.reward!r}, terminal={self.terminal})"
        )


class CartPole:
    """Cart-pole with the canonical constants: cart mass 1.0, pole mass 0.1,
    pole half-length 0.5, push force 10.0, gravity 9.8, Euler step dt=0.02.
    Reward +1 per step; terminates when |x| > 2.4 or |pole angle| > 12 deg.
    State layout: (x, x_dot, theta, theta_dot)."""

    GRAVITY = 9.8
    MASS_CART = 1.0
    MASS_POLE = 0.1
    TOTAL_MASS = MASS_CART + MASS_POLE
    HALF_LENGTH = 0.5
    POLE_MASS_LENGTH = MASS_POLE * HALF_LENGTH
    FORCE_MAG = 10.0
    DT = 0.02
    X_LIMIT = 2.4
    THETA_LIMIT = 12.0 * 2.0 * math.pi / 360.0

    def __init__(self, max_episode_len: int = 500, reward_shift: float = 0.0):
        self.spec = EnvSpec(
            state_dim=4,
            action_kind=Discrete(2),
            max_episode_len=max_episode_len,
            reward_shift=reward_shift,
        )

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-0.05, 0.05, size=4)

    def step(self, state, action, rng=None, t: int = 0) -> Transition:
        if action not in (0, 1):
            raise InvalidActionError(f"cartpole action must be 0 or 1, got {action!r}")
        x, x_dot, theta, theta_dot = state.tolist() if hasattr(state, "tolist") else state
        force = self.FORCE_MAG if action == 1 else -self.FORCE_MAG
        cos_t = math.cos(theta)
        sin_t = math.sin(theta)
        temp = (force + self.POLE_MASS_LENGTH * theta_dot * theta_dot * sin_t) / self.TOTAL_MASS
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.MASS_POLE * cos_t * cos_t / self.TOTAL_MASS)
        )
        x_acc = temp - self.POLE_MASS_LENGTH * theta_acc * cos_t / self.TOTAL_MASS
        x = x + self.DT * x_dot
        x_dot = x_dot + self.DT * x_acc
        theta = theta + self.DT * theta_dot
        theta_dot = theta_dot + self.DT * theta_acc
        next_state = np.array([x, x_dot, theta, theta_dot])
        terminal = abs(x) > self.X_LIMIT or abs(theta) > self.THETA_LIMIT
        reward = 1.0 + self.spec.reward_shift
        return Transition(state, action, reward, next_state, terminal, t)


class PointMassReacher:
    """Planar point mass with velocity control. The target is drawn uniformly
    on the unit disk; the arm starts at the origin. Position integrates the
    clipped action with dt=0.05. Reward is the negative Euclidean distance to
    the target minus a quadratic control penalty; no early termination.
    State layout: (pos_x, pos_y, target_x - pos_x, target_y - pos_y)."""

    DT = 0.05
    CONTROL_COST = 0.01
    ACTION_LIMIT = 1.0

    def __init__(self, max_episode_len: int = 100, reward_shift: float = 0.0):
        lim = self.ACTION_LIMIT
        self.spec = EnvSpec(
            state_dim=4,
            action_kind=Box(2, np.array([-lim, -lim]), np.array([lim, lim])),
            max_episode_len=max_episode_len,
            reward_shift=reward_shift,
        )

    # Shift that keeps per-step rewards nonnegative while the arm stays
    # within unit distance of the target: 1 covers the distance term and
    # CONTROL_COST * max ||a||^2 covers the control penalty.
    @classmethod
    def nonnegative_shift(cls) -> float:
        max_sq_norm = 2.0 * cls.ACTION_LIMIT**2
        return 1.0 + cls.CONTROL_COST * max_sq_norm

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        radius = math.sqrt(rng.random())
        angle = rng.random() * 2.0 * math.pi
        tx = radius * math.cos(angle)
        ty = radius * math.sin(angle)
        return np.array([0.0, 0.0, tx, ty])

    def step(self, state, action, rng=None, t: int = 0) -> Transition:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (2,) or not np.all(np.isfinite(action)):
            raise InvalidActionError(f"reacher action must be a finite 2-vector, got {action!r}")
        kind = self.spec.action_kind
        a = np.clip(action, kind.low, kind.high)
        px = state[0] + self.DT * a[0]
        py = state[1] + self.DT * a[1]
        tx = state[0] + state[2]
        ty = state[1] + state[3]
        dist = math.hypot(tx - px, ty - py)
        reward = -dist - self.CONTROL_COST * float(a @ a) + self.spec.reward_shift
        next_state = np.array([px, py, tx - px, ty - py])
        return Transition(state, action, reward, next_state, False, t)


class TinyMdp:
    """Tabular MDP with everything exact.

    ``transitions[s, a, s']`` is the next-state distribution, ``rewards[s, a]``
    the reward table. States are exposed to policies as one-hot vectors so the
    same softmax-linear policy used on the control tasks applies here.
    Episodes always run the full horizon (no terminal states)."""

    def __init__(self, transitions, rewards, gamma, horizon, p_init, reward_shift=0.0):
        P = np.asarray(transitions, dtype=np.float64)
        R = np.asarray(rewards, dtype=np.float64)
        p0 = np.asarray(p_init, dtype=np.float64)
        S, A = R.shape
        if P.shape != (S, A, S):
            raise ValueError(f"transition tensor shape {P.shape} != {(S, A, S)}")
        if np.any(np.abs(P.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("each P(.|s,a) must sum to 1 within 1e-12")
        if abs(p0.sum() - 1.0) > 1e-12:
            raise ValueError("p_init must sum to 1")
        if not 0.0 <= gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.transitions = P
        self.rewards = R
        self.gamma = float(gamma)
        self.horizon = int(horizon)
        self.p_init = p0
        self.n_states = S
        self.n_actions = A
        self.spec = EnvSpec(
            state_dim=S,
            action_kind=Discrete(A),
            max_episode_len=self.horizon,
            reward_shift=reward_shift,
        )
        self._eye = np.eye(S)
        self._cum_init = np.cumsum(p0)
        self._cum_next = np.cumsum(P, axis=2)

    @classmethod
    def random(cls, rng, n_states=2, n_actions=2, horizon=None, gamma=None):
        """A randomized instance: Dirichlet-ish rows, rewards in [0, 1],
        horizon in {2, 3, 4} unless given."""
        P = rng.random((n_states, n_actions, n_states)) + 0.1
        P /= P.sum(axis=2, keepdims=True)
        R = rng.random((n_states, n_actions))
        p0 = rng.random(n_states) + 0.1
        p0 /= p0.sum()
        if horizon is None:
            horizon = int(rng.integers(2, 5))
        if gamma is None:
            gamma = float(rng.uniform(0.5, 0.95))
        return cls(P, R, gamma, horizon, p0)

    def state_vector(self, s: int) -> np.ndarray:
        return self._eye[s].copy()

    def state_index(self, state) -> int:
        return int(np.argmax(state))

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        s = int(np.searchsorted(self._cum_init, rng.random(), side="right"))
        return self.state_vector(min(s, self.n_states - 1))

    def step(self, state, action, rng: np.random.Generator, t: int = 0) -> Transition:
        a = int(action)
        if not 0 <= a < self.n_actions:
            raise InvalidActionError(f"action {action!r} outside 0..{self.n_actions - 1}")
        s = self.state_index(state)
        cum = self._cum_next[s, a]
        s_next = int(np.searchsorted(cum, rng.random(), side="right"))
        s_next = min(s_next, self.n_states - 1)
        reward = self.rewards[s, a] + self.spec.reward_shift
        return Transition(state, a, reward, self.state_vector(s_next), False, t)


def policy_table(policy, mdp: TinyMdp) -> np.ndarray:
    """pi(a|s) for every tabular state, shape (S, A)."""
    return np.stack([policy.action_probs(mdp.state_vector(s)) for s in range(mdp.n_states)])


def enumerate_exact_J(mdp: TinyMdp, policy) -> float:
    """Exact expected discounted return by backward recursion over state
    values; no sampling."""
    probs = policy_table(policy, mdp)
    V = np.zeros(mdp.n_states)
    for _ in range(mdp.horizon):
        QV = mdp.rewards + mdp.gamma * mdp.transitions @ V
        V = (probs * QV).sum(axis=1)
    return float(mdp.p_init @ V)


def occupancy_by_time(mdp: TinyMdp, policy) -> np.ndarray:
    """Discounted time-indexed occupancy rho[t, s, a] = gamma^t Pr(s_t=s, a_t=a)
    by forward recursion. Summing over t gives the aggregated measure."""
    probs = policy_table(policy, mdp)
    rho = np.zeros((mdp.horizon, mdp.n_states, mdp.n_actions))
    d = mdp.p_init.copy()
    discount = 1.0
    for t in range(mdp.horizon):
        sa = d[:, None] * probs
        rho[t] = discount * sa
        d = np.einsum("sa,sap->p", sa, mdp.transitions)
        discount *= mdp.gamma
    return rho


def exact_occupancy(mdp: TinyMdp, policy) -> np.ndarray:
    """Aggregated discounted occupancy rho_gamma(s, a). Sums to
    (1 - gamma^H) / (1 - gamma) over all state-action pairs."""
    return occupancy_by_time(mdp, policy).sum(axis=0)


def default_tiny_mdp() -> TinyMdp:
    """The canonical fixed instance used by the CLI env name ``tinymdp``."""
    P = np.array(
        [
            [[0.7, 0.3], [0.2, 0.8]],
            [[0.4, 0.6], [0.9, 0.1]],
        ]
    )
    R = np.array([[1.0, 0.2], [0.0, 0.8]])
    return TinyMdp(P, R, gamma=0.9, horizon=4, p_init=np.array([0.6, 0.4]))


_ENV_NAMES = ("cartpole", "reacher", "tinymdp")


def make_env(name: str, reward_shift: float | None = None):
    """Build an environment by CLI name. ``reward_shift`` of None keeps the
    environment default (0 everywhere)."""
    shift = 0.0 if reward_shift is None else float(reward_shift)
    if name == "cartpole":
        return CartPole(reward_shift=shift)
    if name == "reacher":
        return PointMassReacher(reward_shift=shift)
    if name == "tinymdp":
        env = default_tiny_mdp()
        if shift:
            env.spec = EnvSpec(
                state_dim=env.spec.state_dim,
                action_kind=env.spec.action_kind,
                max_episode_len=env.spec.max_episode_len,
                reward_shift=shift,
            )
        return env
    raise ValueError(f"unknown environment {name!r}; choose from {_ENV_NAMES}")
