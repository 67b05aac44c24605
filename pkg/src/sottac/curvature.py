"""Matrix-free curvature operators.

Every curvature variant is an implicit symmetric linear map realized only
through vector products:

* ``fisher_vp``    -- (1/N) sum_t g_t (g_t . v), the empirical outer-product
                      Fisher action.
* ``h1_vp``        -- weighted outer-product term (1/N) sum_t w_t g_t (g_t . v).
* ``h2_vp``        -- intrinsic log-policy curvature term, delegated to the
                      policy's Hessian-vector product with weights w_t / N.
* ``acgn_vp``      -- the two composite approximations: h1+h2 on the same
                      weights, or h2 alone.

Solvers act on the damped ascent form P(v) = lam * v - Htilde(v), which is
positive definite whenever the curvature term is negative semidefinite. The
Fisher kind stores Htilde = -(Fisher) so that P = lam I + Fisher, the damped
natural-gradient metric, fits the same convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .policies import WeightedLogProbFunctional


class Weighting(str, Enum):
    Q = "q"
    ADVANTAGE = "advantage"
    UNIT = "unit"


@dataclass(frozen=True)
class CurvatureKind:
    name: str  # fisher | outer | intrinsic | acgn1 | acgn2
    weighting: Weighting | None = None

    @classmethod
    def fisher(cls):
        return cls("fisher")

    @classmethod
    def outer(cls, weighting=Weighting.ADVANTAGE):
        return cls("outer", Weighting(weighting))

    @classmethod
    def intrinsic(cls, weighting=Weighting.ADVANTAGE):
        return cls("intrinsic", Weighting(weighting))

    @classmethod
    def acgn1(cls, weighting=Weighting.ADVANTAGE):
        return cls("acgn1", Weighting(weighting))

    @classmethod
    def acgn2(cls, weighting=Weighting.ADVANTAGE):
        return cls("acgn2", Weighting(weighting))


def resolve_weights(weighting: Weighting, advantage_batch, n: int) -> np.ndarray:
    if weighting == Weighting.UNIT or advantage_batch is None:
        return np.ones(n)
    if weighting == Weighting.Q:
        return advantage_batch.q_weights
    return advantage_batch.advantages


# -- raw vector products -------------------------------------------------


def fisher_vp(policy, states, actions, v) -> np.ndarray:
    """(1/N) sum_t grad log pi_t (grad log pi_t . v)."""
    n = len(states)
    if n == 0:
        return np.zeros(policy.dim)
    dots = policy.score_dots(states, actions, v)
    return policy.weighted_score_sum(states, actions, dots) / n


def h1_vp(policy, states, actions, weights, v) -> np.ndarray:
    """(1/N) sum_t w_t grad log pi_t (grad log pi_t . v). Unit weights reduce
    this to ``fisher_vp`` exactly."""
    w = np.asarray(weights, dtype=np.float64)
    n = len(w)
    if n == 0:
        return np.zeros(policy.dim)
    dots = policy.score_dots(states, actions, v)
    return policy.weighted_score_sum(states, actions, w * dots) / n


def h2_vp(policy, states, actions, weights, v) -> np.ndarray:
    """[(1/N) sum_t w_t Hess_theta log pi_t] v, weights detached."""
    w = np.asarray(weights, dtype=np.float64)
    n = len(w)
    if n == 0:
        return np.zeros(policy.dim)
    functional = WeightedLogProbFunctional(states, actions, w / n)
    return policy.hvp_weighted_logprob(functional, v)


def acgn_vp(kind: CurvatureKind, policy, states, actions, advantage_batch, v) -> np.ndarray:
    if kind.name not in ("acgn1", "acgn2"):
        raise ValueError(f"acgn_vp expects an ACGN kind, got {kind.name}")
    n = len(advantage_batch.advantages)
    w = resolve_weights(kind.weighting or Weighting.ADVANTAGE, advantage_batch, n)
    if kind.name == "acgn1":
        return h1_vp(policy, states, actions, w, v) + h2_vp(policy, states, actions, w, v)
    return h2_vp(policy, states, actions, w, v)


# -- the damped operator ---------------------------------------------------


class CurvatureOperator:
    """Immutable snapshot of (kind, batch, theta, lam) applied as
    P(v) = lam * v - Htilde(v). Concurrent products are safe."""

    def __init__(self, kind: CurvatureKind, dim: int, lam: float, hvp):
        self.kind = kind
        self.dim = int(dim)
        self.lam = float(lam)
        self._hvp = hvp

    def curvature_vp(self, v) -> np.ndarray:
        """Htilde(v) alone, without damping."""
        return self._hvp(np.asarray(v, dtype=np.float64))

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return self.lam * v - self._hvp(v)

    __call__ = apply


class _OuterProductOps:
    """Cached score machinery for the outer-product (Fisher-like) action.

    The operator is an immutable snapshot, so the per-sample score
    coefficients can be precomputed once; each product is then two matvec
    passes. Falls back to the uncached path for non-softmax policies."""

    def __init__(self, policy, states, actions):
        self.policy = policy
        self.states = states
        self.actions = actions
        self.n = len(states)
        self.cached = self.n > 0 and hasattr(policy, "probs_batch")
        if self.cached:
            probs = policy.probs_batch(states)
            coeff = -probs
            coeff[np.arange(self.n), np.asarray(actions, dtype=np.int64)] += 1.0
            self.probs = probs
            self.coeff = coeff
            self.blocks_shape = (policy.n_actions, policy.state_dim)

    def weighted_outer_vp(self, weights, v):
        """(1/N) sum_i w_i g_i (g_i . v)."""
        if self.n == 0:
            return np.zeros(self.policy.dim)
        if not self.cached:
            return h1_vp(self.policy, self.states, self.actions, weights, v)
        V = np.asarray(v, dtype=np.float64).reshape(self.blocks_shape)
        dots = (self.coeff * (self.states @ V.T)).sum(axis=1)  # per-sample g_i . v
        c = weights * dots / self.n
        return ((c[:, None] * self.coeff).T @ self.states).ravel()


def make_operator(
    kind: CurvatureKind,
    policy,
    states,
    actions,
    advantage_batch=None,
    lam: float = 0.0,
) -> CurvatureOperator:
    """Build the damped operator over a frozen policy snapshot."""
    snap = policy.clone()
    states = np.asarray(states, dtype=np.float64)
    n = len(states)

    if kind.name == "fisher":
        ops = _OuterProductOps(snap, states, actions)
        ones = np.ones(n)

        def hvp(v, _ops=ops, _w=ones):
            return -_ops.weighted_outer_vp(_w, v)

        return CurvatureOperator(kind, snap.dim, lam, hvp)

    w = resolve_weights(kind.weighting or Weighting.ADVANTAGE, advantage_batch, n)
    w = np.asarray(w, dtype=np.float64).copy()

    if kind.name == "outer":
        ops = _OuterProductOps(snap, states, actions)

        def hvp(v, _ops=ops, _w=w):
            return _ops.weighted_outer_vp(_w, v)

    elif kind.name == "intrinsic" or kind.name == "acgn2":

        def hvp(v, _s=states, _a=actions, _w=w, _p=snap):
            return h2_vp(_p, _s, _a, _w, v)

    elif kind.name == "acgn1":

        def hvp(v, _s=states, _a=actions, _w=w, _p=snap):
            return h1_vp(_p, _s, _a, _w, v) + h2_vp(_p, _s, _a, _w, v)

    else:
        raise ValueError(f"unknown curvature kind {kind.name!r}")

    return CurvatureOperator(kind, snap.dim, lam, hvp)


def matrix_operator(matrix: np.ndarray, lam: float = 0.0) -> CurvatureOperator:
    """Wrap an explicit curvature matrix; used by tests and toy problems."""
    M = np.asarray(matrix, dtype=np.float64)

    def hvp(v):
        return M @ v

    return CurvatureOperator(CurvatureKind("matrix"), M.shape[0], lam, hvp)


# -- spectrum estimation -----------------------------------------------------


@dataclass
class SpectrumEstimate:
    m_hat: float
    M_hat: float
    iterations: int
    converged: bool


def _dominant(matvec, dim, probes, iters, rng, tol):
    """Signed dominant Rayleigh quotient by power iteration; returns the
    largest-|value| estimate across probe starts, iterations used, and a
    convergence flag."""
    best = 0.0
    used = 0
    all_ok = True
    for _ in range(probes):
        v = rng.standard_normal(dim)
        nv = np.linalg.norm(v)
        if nv == 0:
            continue
        v /= nv
        ray = 0.0
        ok = False
        for k in range(iters):
            w = matvec(v)
            new_ray = float(v @ w)
            nw = np.linalg.norm(w)
            used += 1
            if nw == 0.0:
                ray, ok = 0.0, True
                break
            v = w / nw
            if abs(new_ray - ray) <= tol * max(1.0, abs(new_ray)):
                ray, ok = new_ray, True
                break
            ray = new_ray
        all_ok = all_ok and ok
        if abs(ray) > abs(best):
            best = ray
    return best, used, all_ok


def estimate_spectrum(
    operator: CurvatureOperator,
    probes: int = 4,
    iters: int = 200,
    rng: np.random.Generator | None = None,
    tol: float = 1e-13,
) -> SpectrumEstimate:
    """Extreme eigenvalues of the damped operator P, matrix-free.

    The spectral radius r of P is estimated first; shifting by c slightly
    above r makes both P + cI and cI - P positive semidefinite, so power
    iteration on them converges to the algebraic extremes. Rayleigh quotients
    never exceed the true maximum, hence M_hat <= max eig and m_hat >= min
    eig at every iteration count: the returned bracket is always inside the
    true one."""
    if iters < 5:
        raise ValueError("iters must be >= 5")
    if rng is None:
        rng = np.random.default_rng(0)
    dim = operator.dim
    radius, it0, ok0 = _dominant(operator.apply, dim, probes, iters, rng, tol)
    c = abs(radius) * 1.01 + 1e-12

    top, it1, ok1 = _dominant(
        lambda v: operator.apply(v) + c * v, dim, probes, iters, rng, tol
    )
    bottom, it2, ok2 = _dominant(
        lambda v: c * v - operator.apply(v), dim, probes, iters, rng, tol
    )
    M_hat = top - c
    m_hat = c - bottom
    if m_hat > M_hat:  # tiny-spectrum roundoff; collapse to midpoint
        mid = 0.5 * (m_hat + M_hat)
        m_hat = M_hat = mid
    return SpectrumEstimate(
        m_hat=float(m_hat),
        M_hat=float(M_hat),
        iterations=it0 + it1 + it2,
        converged=ok0 and ok1 and ok2,
    )


# -- two-timescale interaction diagnostic ------------------------------------


def h12_diagnostic(
    policy,
    critic,
    states,
    actions,
    omega_fn,
    rng: np.random.Generator,
    eps: float | None = None,
) -> float:
    """Measurable proxy for the dropped actor-critic interaction term.

    ``omega_fn(theta)`` must refit the critic under the perturbed policy
    parameters and return the refit omega (or None on non-convergence).
    The critic sensitivity ||(d omega / d theta) u|| / ||u|| is estimated by
    central differences along one random direction u, then multiplied by the
    empirical bounds Gpi = max_t ||grad log pi_t|| and
    GQ = max_t ||grad_omega V(s_t)||. Returns NaN when the refit fails."""
    theta = policy.theta
    if eps is None:
        eps = 1e-2 * (1.0 + np.max(np.abs(theta)))
    u = rng.standard_normal(policy.dim)
    u /= np.linalg.norm(u)
    omega_plus = omega_fn(theta + eps * u)
    omega_minus = omega_fn(theta - eps * u)
    if omega_plus is None or omega_minus is None:
        return math.nan
    sensitivity = float(np.linalg.norm(omega_plus - omega_minus)) / (2.0 * eps)
    g_pi = float(np.max(policy.score_norms(states, actions)))
    g_q = float(np.max(critic.grad_norms(states)))
    return g_pi * g_q * sensitivity
