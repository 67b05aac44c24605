import numpy as np
import pytest

from sottac.envs import (
    CartPole,
    PointMassReacher,
    TinyMdp,
    default_tiny_mdp,
    enumerate_exact_J,
    exact_occupancy,
    make_env,
    occupancy_by_time,
    policy_table,
)
from sottac.errors import InvalidActionError
from sottac.oracle import simulate_batch
from sottac.policies import SoftmaxLinearPolicy
from sottac.rng import generator

# deterministic linear weights that balance the pole for the full horizon
OPTIMAL_CARTPOLE_GAP = np.array([0.1, 0.3, 0.9, 0.6])


def uniform_policy(mdp):
    return SoftmaxLinearPolicy(mdp.n_states, mdp.n_actions)


def random_policy(mdp, rng, scale=0.7):
    d = mdp.n_states * mdp.n_actions
    return SoftmaxLinearPolicy(mdp.n_states, mdp.n_actions, theta=rng.normal(size=d) * scale)


class TestCartPole:
    def test_reset_within_init_interval(self):
        env = CartPole()
        for seed in range(20):
            state = env.reset(generator(seed))
            assert np.all(np.abs(state) < 0.05)

    def test_same_seed_same_trajectory(self):
        env = CartPole()
        runs = []
        for _ in range(2):
            rng = generator(123)
            s = env.reset(rng)
            states = [s]
            for t in range(30):
                tr = env.step(s, t % 2, rng, t)
                s = tr.next_state
                states.append(s)
                if tr.terminal:
                    break
            runs.append(np.concatenate(states))
        assert np.array_equal(runs[0], runs[1])

    def test_nonterminal_reward_is_one(self):
        env = CartPole()
        tr = env.step(np.zeros(4), 1)
        assert tr.reward == 1.0
        assert not tr.terminal

    def test_position_limit_terminates(self):
        env = CartPole()
        state = np.array([2.39, 3.0, 0.0, 0.0])  # about to cross |x| > 2.4
        tr = env.step(state, 1)
        assert tr.next_state[0] > 2.4
        assert tr.terminal

    def test_angle_limit_terminates(self):
        env = CartPole()
        state = np.array([0.0, 0.0, 0.205, 1.0])
        tr = env.step(state, 1)
        assert tr.terminal

    def test_invalid_action(self):
        env = CartPole()
        with pytest.raises(InvalidActionError):
            env.step(np.zeros(4), 2)

    def test_return_equals_episode_length_bounded_by_500(self):
        env = CartPole()
        theta = np.concatenate([-100 * OPTIMAL_CARTPOLE_GAP, 100 * OPTIMAL_CARTPOLE_GAP])
        policy = SoftmaxLinearPolicy(4, 2, theta)
        rng = generator(7)
        s = env.reset(rng)
        total = 0.0
        steps = 0
        for t in range(env.spec.max_episode_len):
            a = policy.sample_action(s, rng)
            tr = env.step(s, a, rng, t)
            total += tr.reward
            steps += 1
            s = tr.next_state
            if tr.terminal:
                break
        assert steps == 500
        assert total == float(steps)


class TestReacher:
    def test_reset_target_on_unit_disk_arm_at_origin(self):
        env = PointMassReacher()
        for seed in range(30):
            s = env.reset(generator(seed))
            assert s[0] == 0.0 and s[1] == 0.0
            assert np.hypot(s[2], s[3]) <= 1.0

    def test_zero_action_at_target_gives_zero_reward(self):
        env = PointMassReacher()
        state = np.array([0.3, -0.2, 0.0, 0.0])  # already at target
        tr = env.step(state, np.zeros(2))
        assert tr.reward == 0.0
        assert not tr.terminal

    def test_action_clipped_before_integration(self):
        env = PointMassReacher()
        state = np.array([0.0, 0.0, 1.0, 0.0])
        tr = env.step(state, np.array([10.0, 0.0]))
        assert tr.next_state[0] == pytest.approx(env.DT * 1.0)  # clipped to 1

    def test_reward_shift_keeps_steps_nonnegative_near_target(self):
        shift = PointMassReacher.nonnegative_shift()
        env = PointMassReacher(reward_shift=shift)
        rng = generator(3)
        s = env.reset(rng)
        for t in range(100):
            a = rng.uniform(-1, 1, size=2)
            tr = env.step(s, a, rng, t)
            if np.hypot(tr.next_state[2], tr.next_state[3]) <= 1.0:
                assert tr.reward >= 0.0
            s = tr.next_state

    def test_invalid_action_rejected(self):
        env = PointMassReacher()
        with pytest.raises(InvalidActionError):
            env.step(np.zeros(4), np.array([np.nan, 0.0]))


class TestTinyMdp:
    def test_degenerate_init_always_state_zero(self):
        mdp = TinyMdp(
            transitions=np.full((2, 2, 2), 0.5),
            rewards=np.zeros((2, 2)),
            gamma=0.9,
            horizon=3,
            p_init=np.array([1.0, 0.0]),
        )
        for seed in range(10):
            assert mdp.state_index(mdp.reset(generator(seed))) == 0

    def test_row_stochastic_validation(self):
        P = np.full((2, 2, 2), 0.5)
        P[0, 0] = [0.6, 0.39]
        with pytest.raises(ValueError):
            TinyMdp(P, np.zeros((2, 2)), 0.9, 3, np.array([0.5, 0.5]))

    def test_constant_reward_exact_J(self):
        mdp = TinyMdp(
            transitions=np.full((2, 2, 2), 0.5),
            rewards=np.ones((2, 2)),
            gamma=0.9,
            horizon=3,
            p_init=np.array([0.5, 0.5]),
        )
        J = enumerate_exact_J(mdp, uniform_policy(mdp))
        assert J == pytest.approx(1 + 0.9 + 0.81, abs=1e-12)

    def test_gamma_zero_collapses_to_one_step(self):
        rng = generator(5)
        mdp = TinyMdp.random(rng, gamma=0.0)
        policy = random_policy(mdp, rng)
        probs = policy_table(policy, mdp)
        expected = float(np.sum(mdp.p_init[:, None] * probs * mdp.rewards))
        assert enumerate_exact_J(mdp, policy) == pytest.approx(expected, abs=1e-12)

    def test_exact_J_matches_monte_carlo(self):
        # independent oracle: vectorized simulation of 10^6 trajectories
        rng = generator(11)
        mdp = TinyMdp.random(rng)
        policy = random_policy(mdp, rng)
        n = 1_000_000
        _, _, _, returns = simulate_batch(mdp, policy, n, generator(99))
        J = enumerate_exact_J(mdp, policy)
        se = returns.std(ddof=1) / np.sqrt(n)
        assert abs(J - returns.mean()) < 3 * se

    def test_occupancy_sums_to_finite_horizon_geometric(self):
        mdp = TinyMdp(
            transitions=np.full((2, 2, 2), 0.5),
            rewards=np.ones((2, 2)),
            gamma=0.9,
            horizon=3,
            p_init=np.array([0.5, 0.5]),
        )
        rho = exact_occupancy(mdp, uniform_policy(mdp))
        assert rho.sum() == pytest.approx(2.71, abs=1e-10)
        rng = generator(17)
        for _ in range(5):
            mdp = TinyMdp.random(rng)
            rho = exact_occupancy(mdp, random_policy(mdp, rng))
            expect = (1 - mdp.gamma**mdp.horizon) / (1 - mdp.gamma)
            assert rho.sum() == pytest.approx(expect, abs=1e-10)

    def test_occupancy_horizon_one(self):
        rng = generator(23)
        mdp = TinyMdp.random(rng, horizon=1)
        policy = random_policy(mdp, rng)
        rho = exact_occupancy(mdp, policy)
        expected = mdp.p_init[:, None] * policy_table(policy, mdp)
        np.testing.assert_allclose(rho, expected, atol=1e-14)

    def test_occupancy_symmetric_under_uniform_policy(self):
        # both actions share the same transition row: occupancy must split evenly
        P = np.zeros((2, 2, 2))
        P[:, 0] = [[0.3, 0.7], [0.6, 0.4]]
        P[:, 1] = P[:, 0]
        mdp = TinyMdp(P, np.zeros((2, 2)), 0.8, 3, np.array([0.5, 0.5]))
        rho = exact_occupancy(mdp, uniform_policy(mdp))
        np.testing.assert_allclose(rho[:, 0], rho[:, 1], atol=1e-14)

    def test_J_equals_occupancy_weighted_rewards(self):
        rng = generator(31)
        for _ in range(10):
            mdp = TinyMdp.random(rng)
            policy = random_policy(mdp, rng)
            J = enumerate_exact_J(mdp, policy)
            rho = exact_occupancy(mdp, policy)
            assert J == pytest.approx(float((rho * mdp.rewards).sum()), abs=1e-10)

    def test_occupancy_by_time_matches_simulation(self):
        rng = generator(37)
        mdp = TinyMdp.random(rng, horizon=3)
        policy = random_policy(mdp, rng)
        n = 200_000
        s_idx, a_idx, _, _ = simulate_batch(mdp, policy, n, generator(5))
        rho_t = occupancy_by_time(mdp, policy)
        for t in range(mdp.horizon):
            counts = np.zeros((mdp.n_states, mdp.n_actions))
            np.add.at(counts, (s_idx[:, t], a_idx[:, t]), 1.0)
            freq = counts / n
            prob = rho_t[t] / mdp.gamma**t
            se = np.sqrt(np.maximum(prob * (1 - prob), 1e-12) / n)
            assert np.all(np.abs(freq - prob) < 3 * se + 1e-9)


def test_make_env_registry():
    assert isinstance(make_env("cartpole"), CartPole)
    assert isinstance(make_env("reacher"), PointMassReacher)
    assert isinstance(make_env("tinymdp"), TinyMdp)
    with pytest.raises(ValueError):
        make_env("lunarlander")


def test_default_tiny_mdp_is_valid():
    mdp = default_tiny_mdp()
    assert mdp.n_states == 2 and mdp.n_actions == 2
    assert mdp.horizon <= 4
