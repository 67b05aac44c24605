import numpy as np
import pytest

import sottac.trainer as trainer_mod
from sottac.envs import CartPole, default_tiny_mdp, exact_occupancy
from sottac.policies import SoftmaxLinearPolicy
from sottac.rng import derive_streams, generator
from sottac.trainer import (
    TrainConfig,
    collect_batch,
    episodes_to_threshold,
    flatten_batch,
    resolve_config,
    train,
)

OPTIMAL_GAP = np.array([0.1, 0.3, 0.9, 0.6])


def optimal_cartpole_policy():
    return SoftmaxLinearPolicy(4, 2, np.concatenate([-100 * OPTIMAL_GAP, 100 * OPTIMAL_GAP]))


class TestCollectBatch:
    def test_optimal_policy_hits_max_return(self):
        env = CartPole()
        streams = derive_streams(0)
        trajs = collect_batch(env, optimal_cartpole_policy(), 3, streams.env, streams.policy)
        for t in trajs:
            assert t.return_ == 500.0
            assert t.truncated and not t.terminated

    def test_single_episode_batch(self):
        env = default_tiny_mdp()
        streams = derive_streams(1)
        policy = SoftmaxLinearPolicy(2, 2)
        trajs = collect_batch(env, policy, 1, streams.env, streams.policy)
        assert len(trajs) == 1
        assert len(trajs[0]) == env.horizon

    def test_logprobs_match_sampled_actions(self):
        env = default_tiny_mdp()
        streams = derive_streams(2)
        rng = generator(3)
        policy = SoftmaxLinearPolicy(2, 2, theta=rng.normal(size=4))
        trajs = collect_batch(env, policy, 4, streams.env, streams.policy)
        for traj in trajs:
            for i in range(len(traj)):
                lp = policy.log_prob(traj.states[i], int(traj.actions[i]))
                assert lp == pytest.approx(traj.logprobs[i], abs=1e-12)

    def test_truncation_keeps_terminal_false(self):
        env = CartPole(max_episode_len=10)
        streams = derive_streams(4)
        trajs = collect_batch(env, optimal_cartpole_policy(), 1, streams.env, streams.policy)
        batch = flatten_batch(trajs)
        assert len(batch.rewards) == 10
        assert not batch.terminal.any()  # truncated: bootstrap in TD targets

    def test_terminated_episode_marks_last_transition(self):
        env = CartPole()
        streams = derive_streams(5)
        # anti-balancing policy terminates fast
        policy = SoftmaxLinearPolicy(4, 2, np.concatenate([100 * OPTIMAL_GAP, -100 * OPTIMAL_GAP]))
        trajs = collect_batch(env, policy, 1, streams.env, streams.policy)
        batch = flatten_batch(trajs)
        assert trajs[0].terminated
        assert batch.terminal[-1]
        assert not batch.terminal[:-1].any()

    def test_empirical_frequencies_match_occupancy(self):
        # gamma^t-weighted visit frequencies against the exact occupancy oracle
        env = default_tiny_mdp()
        rng = generator(6)
        policy = SoftmaxLinearPolicy(2, 2, theta=rng.normal(size=4) * 0.5)
        streams = derive_streams(7)
        n_eps = 100_000
        trajs = collect_batch(env, policy, n_eps, streams.env, streams.policy)
        weights = np.zeros((2, 2))
        sq = np.zeros((2, 2))
        for traj in trajs:
            s_idx = np.argmax(traj.states[:-1], axis=1)
            contrib = np.zeros((2, 2))
            np.add.at(contrib, (s_idx, traj.actions), env.gamma ** np.arange(len(traj)))
            weights += contrib
            sq += contrib**2
        norm = (1 - env.gamma**env.horizon) / (1 - env.gamma)
        freq = weights / n_eps
        rho = exact_occupancy(env, policy)
        se = np.sqrt((sq / n_eps - freq**2) / n_eps)
        assert np.all(np.abs(freq - rho) < 3 * se + 1e-9)
        assert freq.sum() == pytest.approx(norm, rel=3e-3)


class TestTrainLoop:
    def test_empty_run_leaves_theta_untouched(self):
        cfg = TrainConfig(env="tinymdp", method="reinforce", total_episodes=0, seed=0)
        res = train(cfg)
        assert len(res.returns) == 0
        np.testing.assert_array_equal(res.final_theta, np.zeros(4))

    def test_reproducible_returns(self):
        cfg = TrainConfig(env="cartpole", method="acgn2", total_episodes=150, seed=11)
        r1 = train(cfg)
        r2 = train(cfg)
        np.testing.assert_array_equal(r1.returns, r2.returns)
        np.testing.assert_array_equal(r1.final_theta, r2.final_theta)

    def test_warmup_batches_skip_actor(self):
        cfg = TrainConfig(env="tinymdp", method="acgn2", total_episodes=100, seed=3,
                          warmup_batches=5)
        res = train(cfg)
        assert len(res.critic_losses) == 20
        assert len(res.reports) == 15  # 20 batches minus 5 warmup

    def test_critic_updates_precede_actor_and_respect_n_inner(self):
        events = []
        orig_update = trainer_mod.critic_mod.critic_update
        orig_solve = trainer_mod.solve_direction

        def spy_update(*args, **kwargs):
            events.append("critic")
            return orig_update(*args, **kwargs)

        def spy_solve(*args, **kwargs):
            events.append("actor")
            return orig_solve(*args, **kwargs)

        trainer_mod.critic_mod.critic_update = spy_update
        trainer_mod.solve_direction = spy_solve
        try:
            cfg = TrainConfig(env="tinymdp", method="acgn2", total_episodes=50, seed=5,
                              warmup_batches=2, n_inner=3)
            train(cfg)
        finally:
            trainer_mod.critic_mod.critic_update = orig_update
            trainer_mod.solve_direction = orig_solve
        # one critic update per batch, each before any actor solve of the batch
        assert events[0] == "critic"
        for i, ev in enumerate(events):
            if ev == "actor":
                assert events[i - 1] == "critic"

    def test_gradient_and_operator_weights_are_identical_objects(self):
        seen = {}
        orig_grad = trainer_mod.policy_gradient
        orig_make = trainer_mod.make_operator

        def spy_grad(policy, states, actions, weights):
            seen["grad_w"] = weights
            return orig_grad(policy, states, actions, weights)

        def spy_make(kind, policy, states, actions, advantage_batch=None, lam=0.0):
            seen["op_w"] = advantage_batch.advantages
            return orig_make(kind, policy, states, actions, advantage_batch, lam=lam)

        trainer_mod.policy_gradient = spy_grad
        trainer_mod.make_operator = spy_make
        try:
            cfg = TrainConfig(env="tinymdp", method="acgn2", total_episodes=30, seed=6,
                              warmup_batches=1)
            train(cfg)
        finally:
            trainer_mod.policy_gradient = orig_grad
            trainer_mod.make_operator = orig_make
        assert seen["grad_w"] is seen["op_w"]

    def test_curvature_only_touched_through_vector_products(self):
        shapes = []
        orig_apply = trainer_mod.make_operator

        def spy_make(*args, **kwargs):
            op = orig_apply(*args, **kwargs)
            inner = op.apply

            def apply_spy(v):
                shapes.append(np.asarray(v).ndim)
                return inner(v)

            op.apply = apply_spy
            return op

        trainer_mod.make_operator = spy_make
        try:
            cfg = TrainConfig(env="tinymdp", method="acgn1", total_episodes=40, seed=7,
                              warmup_batches=1, spectrum=True)
            train(cfg)
        finally:
            trainer_mod.make_operator = orig_apply
        assert len(shapes) > 0
        assert all(nd == 1 for nd in shapes)

    def test_spectrum_diagnostics_populated(self):
        cfg = TrainConfig(env="tinymdp", method="acgn2", total_episodes=40, seed=8,
                          warmup_batches=2, spectrum=True)
        res = train(cfg)
        for rep in res.reports:
            assert np.isfinite(rep.m_hat) and np.isfinite(rep.M_hat)
            assert rep.m_hat <= rep.M_hat + 1e-12
            assert rep.step_bound_alpha > 0

    def test_step_bound_enforcement_caps_alpha(self):
        cfg = TrainConfig(env="tinymdp", method="acgn2", total_episodes=40, seed=9,
                          warmup_batches=2, spectrum=True, step_bound_enforce=True)
        res = train(cfg)
        for rep in res.reports:
            if np.isfinite(rep.step_bound_alpha):
                assert rep.alpha_used <= min(res.config.alpha, rep.step_bound_alpha) + 1e-12

    def test_h12_diagnostic_recorded(self):
        cfg = TrainConfig(env="tinymdp", method="acgn2", total_episodes=40, seed=10,
                          warmup_batches=2, h12_diag=True, h12_every=3)
        res = train(cfg)
        assert len(res.h12_values) >= 1
        for _, value in res.h12_values:
            assert np.isfinite(value)
            assert value >= 0.0

    def test_reward_shift_auto_on_q_weighted_reacher(self):
        cfg = resolve_config(TrainConfig(env="reacher", method="acgn2", weighting="q",
                                         total_episodes=10))
        env = trainer_mod._make_env(cfg)
        assert env.spec.reward_shift == pytest.approx(1.02)
        cfg_adv = resolve_config(TrainConfig(env="reacher", method="acgn2", total_episodes=10))
        assert trainer_mod._make_env(cfg_adv).spec.reward_shift == 0.0

    def test_returns_are_native_scale_under_shift(self):
        cfg = TrainConfig(env="reacher", method="reinforce", weighting="q",
                          total_episodes=10, seed=1, warmup_batches=0)
        res = train(cfg)
        # shifted rewards are >= 0 near the target, but reported returns stay
        # on the native (negative) scale
        assert np.all(res.returns < 0)


class TestEpisodesToThreshold:
    def test_immediate_success(self):
        returns = np.full(200, 500.0)
        assert episodes_to_threshold(returns, 450.0, 50) == 49

    def test_never_reached(self):
        assert episodes_to_threshold(np.zeros(100), 450.0, 50) is None

    def test_monotone_returns_window_one(self):
        returns = np.arange(1.0, 101.0)
        for k in (1, 17, 100):
            assert episodes_to_threshold(returns, float(k), 1) == k - 1

    def test_window_validation(self):
        with pytest.raises(ValueError):
            episodes_to_threshold(np.zeros(10), 1.0, 0)


class TestConfig:
    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="method"):
            resolve_config(TrainConfig(method="ppo"))

    def test_budget_must_cover_batch(self):
        with pytest.raises(ValueError):
            resolve_config(TrainConfig(total_episodes=3, episodes_per_batch=5))

    def test_timescale_warning(self):
        with pytest.warns(UserWarning, match="two-timescale"):
            resolve_config(TrainConfig(method="acgn2", alpha=10.0))

    def test_presets_satisfy_timescale_ordering(self):
        import warnings

        for env in ("cartpole", "reacher", "tinymdp"):
            for method in ("reinforce", "natural", "acgn1", "acgn2"):
                with warnings.catch_warnings():
                    warnings.simplefilter("error")
                    cfg = resolve_config(TrainConfig(env=env, method=method))
                assert cfg.beta * cfg.n_inner > cfg.alpha
