"""Named verification targets for the ``check`` CLI subcommand.

Each check pits a fast production path against an independent brute-force
reference (finite differences, dense assembly, dense eigendecomposition) and
returns (ok, detail). The randomized instances are seeded, so a given
(d, trials, seed) triple always checks the same cases.
"""

from __future__ import annotations

import numpy as np

from . import oracle
from .curvature import (
    CurvatureKind,
    CurvatureOperator,
    Weighting,
    estimate_spectrum,
    fisher_vp,
    h1_vp,
    h2_vp,
    make_operator,
)
from .critic import AdvantageBatch
from .envs import TinyMdp, enumerate_exact_J
from .optim import policy_gradient
from .policies import SoftmaxLinearPolicy


def _random_instance(rng, d):
    """Random TinyMdp + softmax policy with parameter dimension <= d."""
    n_actions = 2
    n_states = max(2, d // n_actions)
    mdp = TinyMdp.random(rng, n_states=n_states, n_actions=n_actions)
    dim = mdp.n_states * mdp.n_actions
    policy = SoftmaxLinearPolicy(mdp.n_states, mdp.n_actions, theta=rng.normal(size=dim) * 0.6)
    return mdp, policy


def _random_softmax_batch(rng, d, n=64):
    n_actions = 2
    state_dim = max(1, d // n_actions)
    policy = SoftmaxLinearPolicy(state_dim, n_actions, theta=rng.normal(size=state_dim * n_actions) * 0.5)
    states = rng.normal(size=(n, state_dim))
    actions = np.array([policy.sample_action(s, rng) for s in states])
    return policy, states, actions


def check_gradient_fd(d=16, trials=20, seed=0):
    """Exact-expectation policy gradient vs finite differences of the exact
    expected return."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        mdp, policy = _random_instance(rng, d)
        mesh = oracle.exact_mesh(mdp, policy)
        g = policy_gradient(policy, mesh.states, mesh.actions, mesh.weight_for(mesh.q))
        probe = policy.clone()

        def J(theta):
            probe.set_theta(theta)
            return enumerate_exact_J(mdp, probe)

        g_fd = oracle.fd_gradient(J, policy.theta)
        rel = float(np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), 1e-300))
        worst = max(worst, rel)
    return worst <= 1e-6, f"worst relative error {worst:.3e} (tolerance 1e-6)"


def check_hessian_decomposition(d=16, trials=10, seed=1):
    """Dense FD Hessian of the exact return vs the assembled outer-product +
    intrinsic + interaction decomposition."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        mdp, policy = _random_instance(rng, d)
        mesh = oracle.exact_mesh(mdp, policy)
        H1, H2 = oracle.assemble_interaction_free(mdp, policy, mesh.q, mesh)
        H12 = oracle.assemble_h12(mdp, policy, mesh)
        probe = policy.clone()

        def J(theta):
            probe.set_theta(theta)
            return enumerate_exact_J(mdp, probe)

        H_fd = oracle.fd_hessian_dense(J, policy.theta)
        err = float(np.max(np.abs(H_fd - (H1 + H2 + H12 + H12.T))))
        worst = max(worst, err)
    return worst <= 1e-4, f"worst entrywise error {worst:.3e} (tolerance 1e-4)"


def check_qa_equivalence(d=16, trials=10, seed=2):
    """Q-weighted and advantage-weighted interaction-free operators agree as
    matrices under exact expectations."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        mdp, policy = _random_instance(rng, d)
        mesh = oracle.exact_mesh(mdp, policy)

        def op_for(values):
            w = mesh.weight_for(values)

            def hvp(v):
                return h1_vp(policy, mesh.states, mesh.actions, w, v) + h2_vp(
                    policy, mesh.states, mesh.actions, w, v
                )

            return CurvatureOperator(CurvatureKind("exact"), policy.dim, 0.0, hvp)

        dense_q = oracle.dense_operator(op_for(mesh.q))
        dense_a = oracle.dense_operator(op_for(mesh.adv))
        err = float(np.max(np.abs(dense_q - dense_a)))
        worst = max(worst, err)
    return worst <= 1e-8, f"worst entrywise difference {worst:.3e} (tolerance 1e-8)"


def check_definiteness_probes(d=16, trials=1000, seed=3):
    """With nonnegative weights the outer-product term is PSD and the softmax
    intrinsic term is NSD, probe by probe."""
    rng = np.random.default_rng(seed)
    min_h1 = np.inf
    max_h2 = -np.inf
    policy = states = actions = weights = None
    for k in range(trials):
        if k % 50 == 0:  # fresh batch every 50 probes
            policy, states, actions = _random_softmax_batch(rng, d)
            weights = np.abs(rng.normal(size=len(states))) + 0.01
        v = rng.normal(size=policy.dim)
        v /= np.linalg.norm(v)
        q1 = float(v @ h1_vp(policy, states, actions, weights, v))
        q2 = float(v @ h2_vp(policy, states, actions, weights, v))
        min_h1 = min(min_h1, q1)
        max_h2 = max(max_h2, q2)
    ok = min_h1 >= -1e-10 and max_h2 <= 1e-10
    return ok, f"min v'H1v {min_h1:.3e} (>= -1e-10), max v'H2v {max_h2:.3e} (<= 1e-10)"


def check_spectrum_dense(d=16, trials=20, seed=4):
    """Power-iteration extremes vs dense eigendecomposition, within 1%."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    kinds = [CurvatureKind.acgn2(Weighting.UNIT), CurvatureKind.acgn1(Weighting.UNIT), CurvatureKind.fisher()]
    for i in range(trials):
        policy, states, actions = _random_softmax_batch(rng, min(d, 32))
        adv = AdvantageBatch(
            advantages=np.ones(len(states)),
            q_weights=np.ones(len(states)),
            values=np.zeros(len(states)),
            discounts=np.ones(len(states)),
        )
        op = make_operator(kinds[i % len(kinds)], policy, states, actions, adv, lam=0.5)
        dense = oracle.dense_operator(op)
        eigs = np.linalg.eigvalsh(0.5 * (dense + dense.T))
        est = estimate_spectrum(op, probes=4, iters=600, rng=rng)
        rel_m = abs(est.m_hat - eigs[0]) / max(abs(eigs[0]), 1e-12)
        rel_M = abs(est.M_hat - eigs[-1]) / max(abs(eigs[-1]), 1e-12)
        worst = max(worst, rel_m, rel_M)
    return worst <= 0.01, f"worst relative error {worst:.3e} (tolerance 1e-2)"


def check_frozen_weight_limit(d=16, trials=5, seed=5):
    """Dropping the interaction term leaves an error of exactly its norm, and
    freezing the value tables (quasi-stationary critic) removes it."""
    rng = np.random.default_rng(seed)
    worst_frozen = 0.0
    worst_norm_gap = 0.0
    for _ in range(trials):
        mdp, policy = _random_instance(rng, d)
        mesh = oracle.exact_mesh(mdp, policy)
        H1, H2 = oracle.assemble_interaction_free(mdp, policy, mesh.q, mesh)
        H12 = oracle.assemble_h12(mdp, policy, mesh)
        probe = policy.clone()

        def J(theta):
            probe.set_theta(theta)
            return enumerate_exact_J(mdp, probe)

        H_fd = oracle.fd_hessian_dense(J, policy.theta)
        omission = np.linalg.norm(H_fd - (H1 + H2))
        cross = np.linalg.norm(H12 + H12.T)
        worst_norm_gap = max(worst_norm_gap, abs(omission - cross) / max(cross, 1e-12))

        G = oracle.frozen_weight_surrogate(mdp, policy)
        H_frozen = oracle.fd_hessian_dense(G, policy.theta)
        worst_frozen = max(worst_frozen, float(np.max(np.abs(H_frozen - (H1 + H2)))))
    ok = worst_frozen <= 1e-6 and worst_norm_gap <= 1e-3
    return ok, (
        f"frozen-weight omission error {worst_frozen:.3e} (tolerance 1e-6), "
        f"omission norm vs interaction norm gap {worst_norm_gap:.3e}"
    )


CHECKS = {
    "gradient-fd": check_gradient_fd,
    "hessian-decomposition": check_hessian_decomposition,
    "qa-equivalence": check_qa_equivalence,
    "definiteness-probes": check_definiteness_probes,
    "spectrum-dense": check_spectrum_dense,
    "frozen-weight-limit": check_frozen_weight_limit,
}


def run_checks(only: str | None = None, d: int = 16, trials: int | None = None, seed: int = 0):
    """Run the named check (or all); returns list of (name, ok, detail)."""
    names = [only] if only else list(CHECKS)
    results = []
    for name in names:
        if name not in CHECKS:
            raise KeyError(f"unknown check {name!r}; available: {', '.join(CHECKS)}")
        fn = CHECKS[name]
        kwargs = {"d": d, "seed": seed}
        if trials is not None:
            kwargs["trials"] = trials
        results.append((name, *fn(**kwargs)))
    return results
