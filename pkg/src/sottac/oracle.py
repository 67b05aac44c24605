"""Independent brute-force references.

Everything here is deliberately dumb and slow: central finite differences,
dense column-by-column operator assembly, exact dynamic programming on the
tiny tabular MDP, and a vectorized Monte-Carlo simulator. These are the
yardsticks the fast matrix-free paths are tested against, so they never call
into the analytic score/Hessian code: derivative references are finite
differences of scalar log-probabilities and of exact DP values only.

A finite-horizon subtlety that matters for exactness: with a fixed horizon
the state-action value function depends on the step index, so the exact
occupancy and Q tables are time-indexed here. The aggregated occupancy
rho_gamma(s, a) = sum_t rho_t(s, a) is exposed by the env module; the
identities checked at tight tolerances (gradient, Hessian decomposition,
Q-vs-advantage equivalence) all hold exactly in the time-indexed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import TinyMdp, occupancy_by_time, policy_table


@dataclass(frozen=True)
class FdSpec:
    """Central-difference steps; both scale with 1 + |theta|_inf."""

    step: float = 1e-5
    hessian_step: float = 3e-4

    def __post_init__(self):
        if self.step <= 0 or self.hessian_step <= 0:
            raise ValueError("finite-difference steps must be > 0")

    def scaled(self, theta) -> float:
        return self.step * (1.0 + float(np.max(np.abs(theta), initial=0.0)))

    def scaled_hessian(self, theta) -> float:
        return self.hessian_step * (1.0 + float(np.max(np.abs(theta), initial=0.0)))


def fd_gradient(f, theta, spec: FdSpec = FdSpec()) -> np.ndarray:
    """Central differences per coordinate."""
    theta = np.asarray(theta, dtype=np.float64)
    eps = spec.scaled(theta)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        x = theta.copy()
        x[j] = theta[j] + eps
        f_plus = f(x)
        x[j] = theta[j] - eps
        f_minus = f(x)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite f while differencing coordinate {j}")
        grad[j] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def fd_hessian_dense(f, theta, spec: FdSpec = FdSpec()) -> np.ndarray:
    """Dense symmetric Hessian by central second differences (small d only)."""
    theta = np.asarray(theta, dtype=np.float64)
    d = theta.size
    if d > 32:
        raise ValueError("dense FD Hessian capped at d <= 32")
    eps = spec.scaled_hessian(theta)
    H = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            x = theta.copy()
            x[i] += eps
            x[j] += eps
            fpp = f(x)
            x = theta.copy()
            x[i] += eps
            x[j] -= eps
            fpm = f(x)
            x = theta.copy()
            x[i] -= eps
            x[j] += eps
            fmp = f(x)
            x = theta.copy()
            x[i] -= eps
            x[j] -= eps
            fmm = f(x)
            if not all(np.isfinite(v) for v in (fpp, fpm, fmp, fmm)):
                raise FloatingPointError(f"non-finite f while differencing ({i},{j})")
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * eps * eps)
    return 0.5 * (H + H.T)


# -- exact tabular quantities -------------------------------------------------


def exact_q_v(mdp: TinyMdp, policy):
    """Time-indexed exact tables by backward recursion:
    Q[t, s, a] = R(s,a) + gamma sum_s' P V[t+1, s'],  V[t, s] = sum_a pi Q.
    Index 0 is the start of the episode."""
    probs = policy_table(policy, mdp)
    H, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    for t in reversed(range(H)):
        Q[t] = mdp.rewards + mdp.gamma * mdp.transitions @ V[t + 1]
        V[t] = (probs * Q[t]).sum(axis=1)
    return Q, V[:H]


def exact_v_infinite(mdp: TinyMdp, policy) -> np.ndarray:
    """Stationary (infinite-horizon) V^pi, the TD(0) fixed point when
    truncated episodes bootstrap: solve (I - gamma P_pi) V = R_pi."""
    probs = policy_table(policy, mdp)
    P_pi = np.einsum("sa,sap->sp", probs, mdp.transitions)
    R_pi = (probs * mdp.rewards).sum(axis=1)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, R_pi)


def dense_operator(operator) -> np.ndarray:
    """Assemble the operator column by column via products with basis vectors."""
    d = operator.dim
    if d > 32:
        raise ValueError("dense assembly capped at d <= 32")
    cols = []
    eye = np.eye(d)
    for i in range(d):
        cols.append(operator.apply(eye[i]))
    return np.column_stack(cols)


# -- exact-expectation meshes and assemblies ---------------------------------


@dataclass
class ExactMesh:
    """Flattened (t, s, a) mesh with exact occupancy and value tables.

    ``weight_for`` folds occupancy and a value table into the per-sample
    weights expected by batch-mean operators: with w_i = N rho_i value_i,
    (1/N) sum_i w_i f_i equals the exact expectation sum rho value f."""

    states: np.ndarray  # (N, state_dim) one-hot rows
    actions: np.ndarray  # (N,)
    rho: np.ndarray  # (N,) discounted time-indexed occupancy
    q: np.ndarray  # (N,) Q_t(s, a)
    v: np.ndarray  # (N,) V_t(s)
    t_index: np.ndarray  # (N,)
    s_index: np.ndarray  # (N,)

    @property
    def adv(self) -> np.ndarray:
        return self.q - self.v

    def weight_for(self, values: np.ndarray) -> np.ndarray:
        return len(self.rho) * self.rho * values


def exact_mesh(mdp: TinyMdp, policy) -> ExactMesh:
    rho_t = occupancy_by_time(mdp, policy)  # (H, S, A)
    Q, V = exact_q_v(mdp, policy)
    H, S, A = rho_t.shape
    states = []
    actions = []
    rho = []
    q = []
    v = []
    t_idx = []
    s_idx = []
    for t in range(H):
        for s in range(S):
            for a in range(A):
                states.append(mdp.state_vector(s))
                actions.append(a)
                rho.append(rho_t[t, s, a])
                q.append(Q[t, s, a])
                v.append(V[t, s])
                t_idx.append(t)
                s_idx.append(s)
    return ExactMesh(
        states=np.asarray(states),
        actions=np.asarray(actions, dtype=np.int64),
        rho=np.asarray(rho),
        q=np.asarray(q),
        v=np.asarray(v),
        t_index=np.asarray(t_idx, dtype=np.int64),
        s_index=np.asarray(s_idx, dtype=np.int64),
    )


def _logprob_fn(policy, state, action):
    probe = policy.clone()

    def f(theta):
        probe.set_theta(theta)
        return probe.log_prob(state, action)

    return f


def assemble_interaction_free(mdp: TinyMdp, policy, weights: np.ndarray, mesh: ExactMesh | None = None, spec: FdSpec = FdSpec()):
    """Dense H1 and H2 under exact expectations, built from finite differences
    of the scalar log-probability only (no analytic scores)."""
    if mesh is None:
        mesh = exact_mesh(mdp, policy)
    d = policy.dim
    H1 = np.zeros((d, d))
    H2 = np.zeros((d, d))
    theta = policy.theta
    seen: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    for i in range(len(mesh.rho)):
        key = (int(mesh.s_index[i]), int(mesh.actions[i]))
        if key not in seen:
            f = _logprob_fn(policy, mesh.states[i], mesh.actions[i])
            seen[key] = (fd_gradient(f, theta, spec), fd_hessian_dense(f, theta, spec))
        g, hess = seen[key]
        coeff = mesh.rho[i] * weights[i]
        H1 += coeff * np.outer(g, g)
        H2 += coeff * hess
    return H1, H2


def assemble_h12(mdp: TinyMdp, policy, mesh: ExactMesh | None = None, spec: FdSpec = FdSpec()):
    """Dense H12 = sum_t rho_t(s,a) grad log pi (grad_theta Q_t(s,a))^T with
    grad_theta Q via central differences of the exact Q tables."""
    if mesh is None:
        mesh = exact_mesh(mdp, policy)
    theta = policy.theta
    d = policy.dim
    eps = spec.scaled(theta)
    probe = policy.clone()

    def q_tables(x):
        probe.set_theta(x)
        Q, _ = exact_q_v(mdp, probe)
        return Q

    dQ = np.zeros((d,) + (mdp.horizon, mdp.n_states, mdp.n_actions))
    for j in range(d):
        x = theta.copy()
        x[j] += eps
        q_plus = q_tables(x)
        x[j] = theta[j] - eps
        q_minus = q_tables(x)
        dQ[j] = (q_plus - q_minus) / (2.0 * eps)

    H12 = np.zeros((d, d))
    seen: dict[tuple[int, int], np.ndarray] = {}
    for i in range(len(mesh.rho)):
        key = (int(mesh.s_index[i]), int(mesh.actions[i]))
        if key not in seen:
            f = _logprob_fn(policy, mesh.states[i], mesh.actions[i])
            seen[key] = fd_gradient(f, theta, spec)
        g = seen[key]
        grad_q = dQ[:, mesh.t_index[i], mesh.s_index[i], mesh.actions[i]]
        H12 += mesh.rho[i] * np.outer(g, grad_q)
    return H12


def exact_policy_gradient(mdp: TinyMdp, policy, mesh: ExactMesh | None = None, spec: FdSpec = FdSpec()) -> np.ndarray:
    """sum rho_t(s,a) Q_t(s,a) grad log pi, scores by finite differences."""
    if mesh is None:
        mesh = exact_mesh(mdp, policy)
    theta = policy.theta
    grad = np.zeros(policy.dim)
    seen: dict[tuple[int, int], np.ndarray] = {}
    for i in range(len(mesh.rho)):
        key = (int(mesh.s_index[i]), int(mesh.actions[i]))
        if key not in seen:
            f = _logprob_fn(policy, mesh.states[i], mesh.actions[i])
            seen[key] = fd_gradient(f, theta, spec)
        grad += mesh.rho[i] * mesh.q[i] * seen[key]
    return grad


def frozen_weight_surrogate(mdp: TinyMdp, policy):
    """The local objective with occupancy and value tables frozen at the
    current parameters: G(theta') = sum rho_t(s,a) Q_t(s,a)
    pi_theta'(a|s) / pi_theta(a|s). Its gradient at theta equals the policy
    gradient and its Hessian equals H1 + H2 exactly -- the interaction-free
    curvature under the quasi-stationarity approximation."""
    mesh = exact_mesh(mdp, policy)
    base = policy.clone()
    base_probs = np.exp(base.log_prob_batch(mesh.states, mesh.actions))
    probe = policy.clone()

    def G(theta):
        probe.set_theta(theta)
        probs = np.exp(probe.log_prob_batch(mesh.states, mesh.actions))
        return float(np.sum(mesh.rho * mesh.q * probs / base_probs))

    return G


# -- Monte-Carlo simulation ---------------------------------------------------


def simulate_batch(mdp: TinyMdp, policy, n_episodes: int, rng: np.random.Generator):
    """Vectorized rollout of n_episodes full-horizon episodes.

    Returns (s_idx, a_idx, rewards) arrays of shape (n_episodes, horizon) and
    the per-episode discounted returns."""
    probs = policy_table(policy, mdp)
    cum_probs = np.cumsum(probs, axis=1)
    cum_next = np.cumsum(mdp.transitions, axis=2)
    s = np.searchsorted(np.cumsum(mdp.p_init), rng.random(n_episodes), side="right")
    s = np.minimum(s, mdp.n_states - 1)
    H = mdp.horizon
    s_out = np.empty((n_episodes, H), dtype=np.int64)
    a_out = np.empty((n_episodes, H), dtype=np.int64)
    r_out = np.empty((n_episodes, H))
    for t in range(H):
        u = rng.random(n_episodes)
        a = (u[:, None] > cum_probs[s]).sum(axis=1)
        a = np.minimum(a, mdp.n_actions - 1)
        s_out[:, t] = s
        a_out[:, t] = a
        r_out[:, t] = mdp.rewards[s, a]
        u2 = rng.random(n_episodes)
        s_next = (u2[:, None] > cum_next[s, a]).sum(axis=1)
        s = np.minimum(s_next, mdp.n_states - 1)
    returns = r_out @ (mdp.gamma ** np.arange(H))
    return s_out, a_out, r_out, returns
