"""Parametric policies with exact log-probabilities, exact score vectors,
and matrix-free products with the log-probability Hessian.

Two families:

* ``SoftmaxLinearPolicy`` -- linear-logit softmax over discrete actions.
  Feature map phi(s, a) is block one-hot: the parameter vector reshapes to
  (n_actions, state_dim) and block a holds the state vector, so the logit of
  action a is theta_block_a . s. Everything (score, Hessian product) is in
  closed form.

* ``GaussianMlpPolicy`` -- diagonal Gaussian whose mean is a one-hidden-layer
  tanh network with a tanh-bounded output scaled to the action range, plus a
  state-independent learned log-std clipped to [sigma_min, sigma_max].
  Scores are exact via manual backprop; Hessian products use central finite
  differences of the exact score, since the training loop only ever needs
  products, never entries.

Batch operations are the workhorses: the curvature operators are built from
``score_dots`` (per-sample g_i . v), ``weighted_score_sum`` (sum_i w_i g_i),
and ``hvp_weighted_logprob``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from . import params_io

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class WeightedLogProbFunctional:
    """L(theta) = sum_t w_t log pi_theta(a_t | s_t), weights held constant.

    The weights are plain arrays detached from any parameter; gradients and
    Hessian products of L never differentiate through them."""

    states: np.ndarray
    actions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.states):
            raise ValueError("weights and states length mismatch")

    def value(self, policy) -> float:
        return float(self.weights @ policy.log_prob_batch(self.states, self.actions))

    def grad(self, policy) -> np.ndarray:
        return policy.weighted_score_sum(self.states, self.actions, self.weights)


class SoftmaxLinearPolicy:
    def __init__(self, state_dim: int, n_actions: int, theta: np.ndarray | None = None):
        self.state_dim = int(state_dim)
        self.n_actions = int(n_actions)
        self.dim = self.state_dim * self.n_actions
        if theta is None:
            theta = np.zeros(self.dim)
        self.theta = np.asarray(theta, dtype=np.float64).copy()
        if self.theta.shape != (self.dim,):
            raise ValueError(f"theta must have shape ({self.dim},)")

    # -- basics ---------------------------------------------------------

    @property
    def _blocks(self) -> np.ndarray:
        return self.theta.reshape(self.n_actions, self.state_dim)

    def clone(self) -> "SoftmaxLinearPolicy":
        return SoftmaxLinearPolicy(self.state_dim, self.n_actions, self.theta)

    def set_theta(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have shape ({self.dim},)")
        self.theta = theta.copy()

    def _logits(self, state) -> np.ndarray:
        z = self._blocks @ np.asarray(state, dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise NumericError(
                f"non-finite logits; |theta|_max={np.max(np.abs(self.theta))}, state={state!r}"
            )
        return z

    def action_probs(self, state) -> np.ndarray:
        z = self._logits(state)
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()

    def probs_batch(self, states) -> np.ndarray:
        z = np.asarray(states, dtype=np.float64) @ self._blocks.T
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    # -- sampling and densities ------------------------------------------

    def sample_action(self, state, rng: np.random.Generator) -> int:
        return self.sample_with_logprob(state, rng)[0]

    def sample_with_logprob(self, state, rng: np.random.Generator):
        # scalar-math hot path: one gemv, then plain floats
        z = (self._blocks @ state).tolist()
        m = max(z)
        if not math.isfinite(m):
            raise NumericError(
                f"non-finite logits; |theta|_max={np.max(np.abs(self.theta))}, state={state!r}"
            )
        exps = [math.exp(zi - m) for zi in z]
        total = math.fsum(exps)
        u = rng.random() * total
        acc = 0.0
        a = self.n_actions - 1
        for i, e in enumerate(exps):
            acc += e
            if u < acc:
                a = i
                break
        return a, math.log(exps[a] / total)

    def log_prob(self, state, action) -> float:
        z = self._logits(state)
        z = z - z.max()
        return float(z[int(action)] - np.log(np.exp(z).sum()))

    def log_prob_batch(self, states, actions) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.int64)
        z = states @ self._blocks.T
        z -= z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        return z[np.arange(len(actions)), actions] - lse

    # -- scores ----------------------------------------------------------

    def grad_log_prob(self, state, action) -> np.ndarray:
        # phi(s, a) - sum_b pi(b|s) phi(s, b): block b gets (delta_ab - p_b) s
        p = self.action_probs(state)
        coeff = -p
        coeff[int(action)] += 1.0
        return np.outer(coeff, np.asarray(state, dtype=np.float64)).ravel()

    def score_dots(self, states, actions, v) -> np.ndarray:
        """Per-sample g_i . v without materializing the score matrix."""
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.int64)
        V = np.asarray(v, dtype=np.float64).reshape(self.n_actions, self.state_dim)
        dots = states @ V.T  # (N, A): phi(s, b) . v per candidate action b
        P = self.probs_batch(states)
        return dots[np.arange(len(actions)), actions] - (P * dots).sum(axis=1)

    def weighted_score_sum(self, states, actions, weights) -> np.ndarray:
        """sum_i w_i grad log pi(a_i | s_i), one BLAS pass."""
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.int64)
        w = np.asarray(weights, dtype=np.float64)
        n = len(actions)
        if n == 0:
            return np.zeros(self.dim)
        P = self.probs_batch(states)
        coeff = -P
        coeff[np.arange(n), actions] += 1.0
        return ((w[:, None] * coeff).T @ states).ravel()

    def score_norms(self, states, actions) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.int64)
        n = len(actions)
        P = self.probs_batch(states)
        coeff = -P
        coeff[np.arange(n), actions] += 1.0
        return np.sqrt((coeff**2).sum(axis=1) * (states**2).sum(axis=1))

    # -- Hessian products --------------------------------------------------

    def hvp_weighted_logprob(self, functional: WeightedLogProbFunctional, v) -> np.ndarray:
        """[sum_t w_t Hess_theta log pi(a_t|s_t)] v in closed form.

        The per-sample log-density Hessian is -(diag(p) - p p^T) (x) s s^T,
        independent of the sampled action."""
        states = functional.states
        w = functional.weights
        n = len(w)
        if n == 0:
            return np.zeros(self.dim)
        V = np.asarray(v, dtype=np.float64).reshape(self.n_actions, self.state_dim)
        P = self.probs_batch(states)
        dots = states @ V.T  # (N, A)
        r = (P * dots).sum(axis=1)  # (N,)
        C = -w[:, None] * P * (dots - r[:, None])
        out = (C.T @ states).ravel()
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite softmax Hessian-vector product")
        return out

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        params_io.dump_params(path, self.theta, params_io.POLICY_MAGIC)

    def load(self, path) -> None:
        self.set_theta(params_io.load_params(path, params_io.POLICY_MAGIC))


class GaussianMlpPolicy:
    """Diagonal Gaussian over box actions.

    Parameter layout (flat, in order): W1 (hidden x state_dim), b1 (hidden),
    W2 (action_dim x hidden), b2 (action_dim), log_std (action_dim).
    Mean: center + half_range * tanh(W2 tanh(W1 s + b1) + b2).
    Std: exp(log_std) hard-clipped to [sigma_min, sigma_max]; the score with
    respect to a clipped component is zero, matching the flat clip.

    ``log_prob`` is the density of the *pre-clip* Gaussian. Sampling stores
    that density; the raw draw is what gradient bookkeeping must use, while
    environments clip on their side.
    """

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        low,
        high,
        hidden: int = 32,
        sigma_min: float = 1e-2,
        sigma_max: float = 1.0,
        theta: np.ndarray | None = None,
    ):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.hidden = int(hidden)
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        self.center = 0.5 * (self.low + self.high)
        self.half_range = 0.5 * (self.high - self.low)
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        h, ds, da = self.hidden, self.state_dim, self.action_dim
        self._sizes = (h * ds, h, da * h, da, da)
        self.dim = sum(self._sizes)
        if theta is None:
            theta = np.zeros(self.dim)
            theta[-da:] = np.log(0.5)
        self.theta = np.asarray(theta, dtype=np.float64).copy()
        if self.theta.shape != (self.dim,):
            raise ValueError(f"theta must have shape ({self.dim},)")

    def init_params(self, rng: np.random.Generator) -> None:
        """Weights uniform in +-1/sqrt(fan_in), biases zero, log-std log(0.5)."""
        h, ds, da = self.hidden, self.state_dim, self.action_dim
        w1 = rng.uniform(-1.0, 1.0, size=(h, ds)) / np.sqrt(ds)
        w2 = rng.uniform(-1.0, 1.0, size=(da, h)) / np.sqrt(h)
        self.theta = np.concatenate(
            [w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(da), np.full(da, np.log(0.5))]
        )

    def clone(self) -> "GaussianMlpPolicy":
        return GaussianMlpPolicy(
            self.state_dim,
            self.action_dim,
            self.low,
            self.high,
            hidden=self.hidden,
            sigma_min=self.sigma_min,
            sigma_max=self.sigma_max,
            theta=self.theta,
        )

    def set_theta(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have shape ({self.dim},)")
        self.theta = theta.copy()

    def _unpack(self, theta):
        h, ds, da = self.hidden, self.state_dim, self.action_dim
        s1, s2, s3, s4, _ = self._sizes
        o = 0
        W1 = theta[o : o + s1].reshape(h, ds)
        o += s1
        b1 = theta[o : o + s2]
        o += s2
        W2 = theta[o : o + s3].reshape(da, h)
        o += s3
        b2 = theta[o : o + s4]
        o += s4
        log_std = theta[o:]
        return W1, b1, W2, b2, log_std

    def _forward(self, states):
        W1, b1, W2, b2, log_std = self._unpack(self.theta)
        S = np.atleast_2d(np.asarray(states, dtype=np.float64))
        hpre = S @ W1.T + b1
        hact = np.tanh(hpre)
        mu_raw = hact @ W2.T + b2
        tm = np.tanh(mu_raw)
        mu = self.center + self.half_range * tm
        sigma_raw = np.exp(log_std)
        sigma = np.clip(sigma_raw, self.sigma_min, self.sigma_max)
        unclipped = (sigma_raw > self.sigma_min) & (sigma_raw < self.sigma_max)
        if not np.all(np.isfinite(mu)):
            raise NumericError(
                f"non-finite policy mean; |theta|_max={np.max(np.abs(self.theta))}"
            )
        return S, hact, tm, mu, sigma, unclipped

    # -- sampling and densities ------------------------------------------

    def sample_with_logprob(self, state, rng: np.random.Generator):
        # single-state fast path: gemv chain, no batch dimension
        W1, b1, W2, b2, log_std = self._unpack(self.theta)
        h = np.tanh(W1 @ state + b1)
        mu = self.center + self.half_range * np.tanh(W2 @ h + b2)
        if not np.all(np.isfinite(mu)):
            raise NumericError(
                f"non-finite policy mean; |theta|_max={np.max(np.abs(self.theta))}"
            )
        sigma = np.clip(np.exp(log_std), self.sigma_min, self.sigma_max)
        z = rng.standard_normal(self.action_dim)
        raw = mu + sigma * z
        logp = float(-0.5 * (z @ z) - np.log(sigma).sum() - 0.5 * self.action_dim * LOG_2PI)
        return raw, logp

    def sample_action(self, state, rng: np.random.Generator) -> np.ndarray:
        raw, _ = self.sample_with_logprob(state, rng)
        return np.clip(raw, self.low, self.high)

    def log_prob(self, state, action) -> float:
        return float(self.log_prob_batch(state[None, :], np.asarray(action)[None, :])[0])

    def log_prob_batch(self, states, actions) -> np.ndarray:
        _, _, _, mu, sigma, _ = self._forward(states)
        A = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        z = (A - mu) / sigma
        return -0.5 * (z**2).sum(axis=1) - np.log(sigma).sum() - 0.5 * self.action_dim * LOG_2PI

    # -- scores ----------------------------------------------------------

    def grad_log_prob(self, state, action) -> np.ndarray:
        return self.weighted_score_sum(
            np.asarray(state)[None, :], np.asarray(action)[None, :], np.ones(1)
        )

    def weighted_score_sum(self, states, actions, weights) -> np.ndarray:
        """sum_i w_i grad log pi(a_i | s_i) via one batched backprop."""
        w = np.asarray(weights, dtype=np.float64)
        if len(w) == 0:
            return np.zeros(self.dim)
        S, hact, tm, mu, sigma, unclipped = self._forward(states)
        A = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        z = (A - mu) / sigma
        dmu = z / sigma  # d logp / d mu
        dmu_raw = dmu * self.half_range * (1.0 - tm**2)
        dmu_raw_w = dmu_raw * w[:, None]
        dW2 = dmu_raw_w.T @ hact
        db2 = dmu_raw_w.sum(axis=0)
        dh = dmu_raw_w @ self._unpack(self.theta)[2]
        dhpre = dh * (1.0 - hact**2)
        dW1 = dhpre.T @ S
        db1 = dhpre.sum(axis=0)
        dlog_std = ((z**2 - 1.0) * unclipped * w[:, None]).sum(axis=0)
        out = np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2, dlog_std])
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite Gaussian score")
        return out

    def score_dots(self, states, actions, v) -> np.ndarray:
        """Per-sample g_i . v by forward-mode propagation of the tangent v."""
        S, hact, tm, mu, sigma, unclipped = self._forward(states)
        A = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        vW1, vb1, vW2, vb2, vls = self._unpack(np.asarray(v, dtype=np.float64))
        W2 = self._unpack(self.theta)[2]
        dh = (1.0 - hact**2) * (S @ vW1.T + vb1)
        dmu_raw = dh @ W2.T + hact @ vW2.T + vb2
        dmu = self.half_range * (1.0 - tm**2) * dmu_raw
        z = (A - mu) / sigma
        return (z / sigma * dmu).sum(axis=1) + ((z**2 - 1.0) * unclipped * vls).sum(axis=1)

    def score_norms(self, states, actions) -> np.ndarray:
        S, hact, tm, mu, sigma, unclipped = self._forward(states)
        A = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        z = (A - mu) / sigma
        dmu_raw = (z / sigma) * self.half_range * (1.0 - tm**2)
        W2 = self._unpack(self.theta)[2]
        dhpre = (dmu_raw @ W2) * (1.0 - hact**2)
        sq = (
            (dmu_raw**2).sum(axis=1) * (1.0 + (hact**2).sum(axis=1))
            + (dhpre**2).sum(axis=1) * (1.0 + (S**2).sum(axis=1))
            + (((z**2 - 1.0) * unclipped) ** 2).sum(axis=1)
        )
        return np.sqrt(sq)

    # -- Hessian products --------------------------------------------------

    def hvp_weighted_logprob(self, functional: WeightedLogProbFunctional, v) -> np.ndarray:
        """Central finite difference of the exact score along v:
        (grad L(theta + eps v) - grad L(theta - eps v)) / (2 eps)."""
        v = np.asarray(v, dtype=np.float64)
        eps = 1e-5 * (1.0 + np.max(np.abs(self.theta)))
        probe = self.clone()
        probe.set_theta(self.theta + eps * v)
        g_plus = functional.grad(probe)
        probe.set_theta(self.theta - eps * v)
        g_minus = functional.grad(probe)
        out = (g_plus - g_minus) / (2.0 * eps)
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite Gaussian Hessian-vector product")
        return out

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        params_io.dump_params(path, self.theta, params_io.POLICY_MAGIC)

    def load(self, path) -> None:
        self.set_theta(params_io.load_params(path, params_io.POLICY_MAGIC))
