"""Fast-timescale state-value critic and TD(0) advantage estimation.

The critic is a one-hidden-layer tanh network mapping state to a scalar
V(s; omega). It supplies the weights (advantages or Q estimates) consumed by
the actor's gradient and curvature operators; those consumers always treat
the weights as fixed constants -- nothing here exposes a derivative with
respect to actor parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from . import params_io


@dataclass
class AdvantageBatch:
    """Per-transition TD(0) quantities computed against one frozen critic.

    advantages[t] = r_t + gamma * (0 if terminal else V(s_{t+1})) - V(s_t)
    q_weights[t]  = advantages[t] + V(s_t)
    discounts[t]  = gamma ** t  (step index within the episode)
    """

    advantages: np.ndarray
    q_weights: np.ndarray
    values: np.ndarray
    discounts: np.ndarray


class ValueCritic:
    """One-hidden-layer tanh value network. Parameter layout (flat):
    W1 (hidden x state_dim), b1 (hidden), w2 (hidden), b2 (scalar)."""

    def __init__(self, state_dim: int, hidden: int = 64, omega: np.ndarray | None = None):
        self.state_dim = int(state_dim)
        self.hidden = int(hidden)
        self._sizes = (self.hidden * self.state_dim, self.hidden, self.hidden, 1)
        self.dim = sum(self._sizes)
        if omega is None:
            omega = np.zeros(self.dim)
        self.omega = np.asarray(omega, dtype=np.float64).copy()
        if self.omega.shape != (self.dim,):
            raise ValueError(f"omega must have shape ({self.dim},)")

    def init_params(self, rng: np.random.Generator) -> None:
        h, ds = self.hidden, self.state_dim
        w1 = rng.uniform(-1.0, 1.0, size=(h, ds)) / np.sqrt(ds)
        w2 = rng.uniform(-1.0, 1.0, size=h) / np.sqrt(h)
        self.omega = np.concatenate([w1.ravel(), np.zeros(h), w2, np.zeros(1)])

    def clone(self) -> "ValueCritic":
        return ValueCritic(self.state_dim, self.hidden, self.omega)

    def set_omega(self, omega: np.ndarray) -> None:
        omega = np.asarray(omega, dtype=np.float64)
        if omega.shape != (self.dim,):
            raise ValueError(f"omega must have shape ({self.dim},)")
        self.omega = omega.copy()

    def _unpack(self):
        h, ds = self.hidden, self.state_dim
        s1, s2, s3, _ = self._sizes
        W1 = self.omega[:s1].reshape(h, ds)
        b1 = self.omega[s1 : s1 + s2]
        w2 = self.omega[s1 + s2 : s1 + s2 + s3]
        b2 = self.omega[-1]
        return W1, b1, w2, b2

    def value_batch(self, states) -> np.ndarray:
        W1, b1, w2, b2 = self._unpack()
        S = np.atleast_2d(np.asarray(states, dtype=np.float64))
        hact = np.tanh(S @ W1.T + b1)
        return hact @ w2 + b2

    def value(self, state) -> float:
        return float(self.value_batch(np.asarray(state)[None, :])[0])

    def weighted_grad(self, states, weights) -> np.ndarray:
        """grad_omega sum_i w_i V(s_i), one batched backprop."""
        W1, b1, w2, _ = self._unpack()
        S = np.atleast_2d(np.asarray(states, dtype=np.float64))
        w = np.asarray(weights, dtype=np.float64)
        hact = np.tanh(S @ W1.T + b1)
        dw2 = hact.T @ w
        db2 = w.sum()
        dhpre = (w[:, None] * (1.0 - hact**2)) * w2
        dW1 = dhpre.T @ S
        db1 = dhpre.sum(axis=0)
        return np.concatenate([dW1.ravel(), db1, dw2, [db2]])

    def grad_norms(self, states) -> np.ndarray:
        """Per-sample ||grad_omega V(s_i)|| without materializing the grads."""
        W1, b1, w2, _ = self._unpack()
        S = np.atleast_2d(np.asarray(states, dtype=np.float64))
        hact = np.tanh(S @ W1.T + b1)
        dhpre = (1.0 - hact**2) * w2
        sq = (hact**2).sum(axis=1) + 1.0 + (dhpre**2).sum(axis=1) * (1.0 + (S**2).sum(axis=1))
        return np.sqrt(sq)

    def save(self, path) -> None:
        params_io.dump_params(path, self.omega, params_io.CRITIC_MAGIC)

    def load(self, path) -> None:
        self.set_omega(params_io.load_params(path, params_io.CRITIC_MAGIC))


def td0_targets(critic, states, rewards, next_states, terminal, t_index, gamma) -> AdvantageBatch:
    """TD(0) advantages and Q weights against the critic's current omega.
    Truncated episode tails arrive with terminal=False and therefore
    bootstrap through V(s_{t+1})."""
    rewards = np.asarray(rewards, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=bool)
    V = critic.value_batch(states)
    V_next = critic.value_batch(next_states)
    adv = rewards + gamma * np.where(terminal, 0.0, V_next) - V
    return AdvantageBatch(
        advantages=adv,
        q_weights=adv + V,
        values=V,
        discounts=gamma ** np.asarray(t_index, dtype=np.float64),
    )


def critic_update(
    critic: ValueCritic,
    states,
    rewards,
    next_states,
    terminal,
    gamma: float,
    beta: float,
    n_inner: int,
) -> float:
    """n_inner semi-gradient descent steps on the mean squared TD error.

    Each inner step recomputes the targets y = r + gamma (1-terminal) V(s';
    omega_old) from the pre-step omega, then descends the mean of
    (V(s; omega) - y)^2 with y held fixed. Returns the mean squared TD error
    at the final omega."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if n_inner < 1:
        raise ValueError("n_inner must be >= 1")
    rewards = np.asarray(rewards, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=bool)
    n = len(rewards)
    if n == 0:
        return 0.0
    S = np.atleast_2d(np.asarray(states, dtype=np.float64))
    S2 = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
    stacked = np.vstack([S, S2])
    keep = np.where(terminal, 0.0, gamma)
    for _ in range(n_inner):
        # one fused forward over states and next_states, reusing the hidden
        # activations of the first half for the gradient
        W1, b1, w2, b2 = critic._unpack()
        hact = np.tanh(stacked @ W1.T + b1)
        values = hact @ w2 + b2
        err = values[:n] - (rewards + keep * values[n:])
        h = hact[:n]
        dw2 = h.T @ err
        dhpre = (err[:, None] * (1.0 - h * h)) * w2
        grad = np.concatenate(
            [(dhpre.T @ S).ravel(), dhpre.sum(axis=0), dw2, [err.sum()]]
        )
        critic.omega = critic.omega - (beta / n) * grad
    y = rewards + keep * critic.value_batch(next_states)
    loss = float(np.mean((critic.value_batch(states) - y) ** 2))
    if not np.isfinite(loss):
        raise NumericError(
            f"critic diverged: loss={loss}, |omega|_max={np.max(np.abs(critic.omega))}, "
            f"beta={beta}, n_inner={n_inner}"
        )
    return loss
