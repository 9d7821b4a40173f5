import math

import numpy as np
from django.test import SimpleTestCase

from carl.constraints import make_constraint
from carl.envs import ENVIRONMENTS, make_environment
from carl.exceptions import ConfigError, EnumerationBudgetError, NumericFault, StructuralError
from carl.mdp import ProblemSpec, rollout
from carl.pendulum import (
    MAX_SPEED,
    PendulumEnv,
    abs_torque,
    pendulum_energy,
    pendulum_lower_half,
    pendulum_reward,
    pendulum_step,
    wrap_angle,
)
from carl.tabular import (
    TabularEnv,
    TabularMDP,
    chain_mdp,
    discount_normalizer,
    discounted_state_action_distribution,
    enumerate_trajectories,
    exact_constraint_return,
    exact_reward_return,
    random_tabular_mdp,
    state_action_marginals,
    tabular_policy,
)


def pendulum_obs(theta, theta_dot=0.0):
    return np.array([math.cos(theta), math.sin(theta), theta_dot, 0.0])


class PendulumDynamicsTest(SimpleTestCase):
    def test_equilibrium(self):
        self.assertEqual(pendulum_step(0.0, 0.0, 0.0), (0.0, 0.0))

    def test_falling_from_horizontal(self):
        theta, theta_dot = pendulum_step(math.pi / 2, 0.0, 0.0)
        self.assertAlmostEqual(theta_dot, 0.75, places=12)
        self.assertAlmostEqual(theta, math.pi / 2 + 0.0375, places=12)

    def test_torque_is_clipped(self):
        self.assertEqual(pendulum_step(0.3, 0.1, 3.0), pendulum_step(0.3, 0.1, 2.0))
        self.assertEqual(pendulum_step(0.3, 0.1, -3.0), pendulum_step(0.3, 0.1, -2.0))

    def test_speed_is_clipped(self):
        _, theta_dot = pendulum_step(0.5, 7.9, 2.0)
        self.assertEqual(theta_dot, MAX_SPEED)

    def test_non_finite_input(self):
        with self.assertRaises(NumericFault):
            pendulum_step(math.nan, 0.0, 0.0)

    def test_wrap_range(self):
        rng = np.random.default_rng(0)
        for theta in rng.uniform(-50, 50, size=200):
            wrapped = wrap_angle(theta)
            self.assertTrue(-math.pi < wrapped <= math.pi)
            self.assertAlmostEqual(math.cos(wrapped), math.cos(theta), places=9)
            self.assertAlmostEqual(math.sin(wrapped), math.sin(theta), places=9)
        self.assertEqual(wrap_angle(math.pi), math.pi)
        self.assertEqual(wrap_angle(-math.pi), math.pi)

    def test_energy_is_nearly_conserved(self):
        theta, theta_dot = math.pi / 2, 0.0
        start = pendulum_energy(theta, theta_dot)
        for _ in range(10):
            theta, theta_dot = pendulum_step(theta, theta_dot, 0.0)
            self.assertLessEqual(abs(pendulum_energy(theta, theta_dot) - start), 1.5)


class PendulumRewardTest(SimpleTestCase):
    def test_upright_at_rest(self):
        self.assertEqual(pendulum_reward(0.0, 0.0, 0.0), 0.0)

    def test_hanging(self):
        self.assertAlmostEqual(pendulum_reward(math.pi, 0.0, 0.0), -math.pi**2, places=12)

    def test_return_bounded_by_term_maxima(self):
        env = PendulumEnv()
        env.reset(seed=3)
        env.theta, env.theta_dot = math.pi, 0.0
        rng = np.random.default_rng(3)
        total = sum(env.step(rng.uniform(-1, 1, size=1)).reward for _ in range(200))
        worst = 200 * (math.pi**2 + 0.1 * MAX_SPEED**2 + 0.001 * 2.0**2)
        self.assertLessEqual(total, 0.0)
        self.assertGreaterEqual(total, -worst)


class PendulumEnvTest(SimpleTestCase):
    def test_observation_layout(self):
        env = PendulumEnv(horizon=50)
        obs = env.reset(seed=0)
        self.assertEqual(obs.shape, (4,))
        self.assertAlmostEqual(obs[0], math.cos(env.theta))
        self.assertAlmostEqual(obs[1], math.sin(env.theta))
        self.assertEqual(obs[2], env.theta_dot)
        self.assertEqual(obs[3], 0.0)
        obs = env.step(np.zeros(1)).observation
        self.assertAlmostEqual(obs[3], 1 / 50)

    def test_reset_start_range(self):
        env = PendulumEnv()
        for seed in range(20):
            env.reset(seed=seed)
            self.assertTrue(-math.pi < env.theta <= math.pi)
            self.assertLessEqual(abs(env.theta_dot), 1.0)

    def test_action_history(self):
        env = PendulumEnv(action_history=3)
        self.assertEqual(env.observation_dim, 7)
        np.testing.assert_array_equal(env.reset(seed=0)[4:], [0.0, 0.0, 0.0])
        env.step(np.array([0.5]))
        obs = env.step(np.array([5.0])).observation
        np.testing.assert_array_equal(obs[4:], [0.0, 0.5, 1.0])

    def test_seeded_reset(self):
        a, b = PendulumEnv(), PendulumEnv()
        np.testing.assert_array_equal(a.reset(seed=9), b.reset(seed=9))

    def test_state_dict_resumes(self):
        env = PendulumEnv(action_history=2, seed=4)
        env.reset()
        env.step(np.array([0.3]))
        saved = env.state_dict()
        expected = [env.step(np.array([0.1])).observation, env.reset()]
        other = PendulumEnv(action_history=2)
        other.load_state_dict(saved)
        np.testing.assert_array_equal(other.step(np.array([0.1])).observation, expected[0])
        np.testing.assert_array_equal(other.reset(), expected[1])

    def test_task_metrics(self):
        spec = ProblemSpec(horizon=20, discount=0.99, reward_mode="general", state_dim=4)
        env = PendulumEnv(horizon=20)
        traj = rollout(env, lambda obs, rng: np.zeros(1), spec, seed=0)
        metrics = env.task_metrics(traj)
        angles = [abs(math.atan2(t.state[1], t.state[0])) for t in traj.transitions]
        # 21 transitions, the final 20% are the last 5
        self.assertAlmostEqual(metrics["final_segment_abs_angle"], float(np.mean(angles[-5:])))
        self.assertEqual(metrics["final_abs_angle"], angles[-1])

    def test_predicates(self):
        self.assertTrue(pendulum_lower_half(pendulum_obs(math.pi), None))
        self.assertTrue(pendulum_lower_half(pendulum_obs(-2.0), None))
        self.assertFalse(pendulum_lower_half(pendulum_obs(0.2), None))
        self.assertEqual(abs_torque(pendulum_obs(0.0), np.array([-0.5])), 1.0)


class EnvironmentRegistryTest(SimpleTestCase):
    def test_builtins(self):
        self.assertEqual(sorted(ENVIRONMENTS), ["pendulum", "tabular-chain"])

    def test_options(self):
        env = make_environment("pendulum", seed=0, horizon=50, action_history=2)
        self.assertEqual((env.horizon, env.observation_dim), (50, 6))
        env = make_environment("tabular-chain", n_states=3, horizon=2)
        self.assertEqual((env.horizon, env.observation_dim), (2, 4))

    def test_unknown_environment(self):
        with self.assertRaises(ConfigError):
            make_environment("cartpole")

    def test_bad_option(self):
        with self.assertRaises(ConfigError):
            make_environment("pendulum", gravity=9.81)
        with self.assertRaises(ConfigError):
            make_environment("tabular-chain", horizon=0)


class EnumerateTrajectoriesTest(SimpleTestCase):
    def test_single_trajectory(self):
        mdp = TabularMDP(transitions=np.ones((1, 1, 1)), initial=[1.0], policy=np.ones((3, 1, 1)), horizon=2)
        paths = enumerate_trajectories(mdp)
        self.assertEqual(paths, [(((0, 0), (0, 0), (0, 0)), 1.0)])

    def test_deterministic(self):
        transitions = np.zeros((2, 2, 2))
        transitions[:, :, 1] = 1.0
        policy = np.zeros((3, 2, 2))
        policy[..., 0] = 1.0
        mdp = TabularMDP(transitions=transitions, initial=[1.0, 0.0], policy=policy, horizon=2)
        paths = enumerate_trajectories(mdp)
        self.assertEqual(len(paths), 1)
        self.assertEqual(paths[0][1], 1.0)

    def test_uniform_mass(self):
        mdp = TabularMDP(
            transitions=np.full((2, 2, 2), 0.5), initial=[0.5, 0.5], policy=np.full((4, 2, 2), 0.5), horizon=3
        )
        paths = enumerate_trajectories(mdp)
        self.assertEqual(len(paths), 4**4)
        self.assertAlmostEqual(sum(p for _, p in paths), 1.0, delta=1e-12)

    def test_budget(self):
        mdp = chain_mdp(n_states=3, horizon=3)
        with self.assertRaises(EnumerationBudgetError) as cm:
            enumerate_trajectories(mdp, budget=100)
        self.assertEqual(cm.exception.count, 6**4)
        with self.settings(CARL_ENUMERATION_BUDGET=100):
            with self.assertRaises(EnumerationBudgetError):
                enumerate_trajectories(mdp)

    def test_invalid_tables(self):
        initial = [1.0, 0.0]
        with self.assertRaises(StructuralError):
            TabularMDP(transitions=np.full((2, 2, 2), 0.6), initial=initial, policy=np.full((2, 2, 2), 0.5), horizon=1)
        with self.assertRaises(StructuralError):
            TabularMDP(transitions=np.full((2, 2, 2), 0.5), initial=initial, policy=np.full((3, 2, 2), 0.5), horizon=1)
        with self.assertRaises(StructuralError):
            chain_mdp(horizon=7)


class OracleTest(SimpleTestCase):
    def test_zero_constraint(self):
        mdp = chain_mdp(n_states=3, horizon=3)
        c = make_constraint("episode-value", epsilon=0.0, value_fn=lambda s, a: 0.0)
        self.assertEqual(exact_constraint_return(mdp, c, 0.9), 0.0)

    def test_distribution_at_unit_discount(self):
        mdp = random_tabular_mdp(np.random.default_rng(0), 2, 3, 3)
        expected = state_action_marginals(mdp).mean(axis=0)
        np.testing.assert_allclose(discounted_state_action_distribution(mdp, 1.0), expected, atol=1e-12)

    def test_distribution_at_horizon_zero(self):
        mdp = random_tabular_mdp(np.random.default_rng(1), 3, 2, 0)
        expected = mdp.initial[:, None] * mdp.policy[0]
        np.testing.assert_allclose(discounted_state_action_distribution(mdp, 0.7), expected, atol=1e-12)

    def test_normalizer(self):
        self.assertEqual(discount_normalizer(1.0, 4), 5.0)
        self.assertAlmostEqual(discount_normalizer(0.5, 2), 1.75, places=15)

    def test_reward_return(self):
        mdp = chain_mdp(n_states=2, horizon=1, slip=0.0)
        # from state 0 a uniform policy reaches state 1 with probability 1/2
        self.assertAlmostEqual(exact_reward_return(mdp, 0.5), 0.25, places=15)

    def test_closed_forms_on_random_mdps(self):
        rng = np.random.default_rng(2024)
        for trial in range(50):
            n_states, n_actions = (int(x) for x in rng.integers(1, 4, size=2))
            horizon = int(rng.integers(0, 5))
            gamma = 1.0 if trial % 10 == 0 else float(rng.uniform(0.5, 0.999))
            mdp = random_tabular_mdp(rng, n_states, n_actions, horizon)
            mask = rng.random((n_states, n_actions)) < 0.5
            values = rng.normal(size=(n_states, n_actions))

            def event(obs, action, mdp=mdp, mask=mask):
                return bool(mask[int(np.argmax(obs[:-1])), mdp.decode_action(action)])

            def value_fn(obs, action, mdp=mdp, values=values):
                return values[int(np.argmax(obs[:-1])), mdp.decode_action(action)]

            marginals = state_action_marginals(mdp)
            discounts = gamma ** np.arange(horizon + 1)
            normalizer = discount_normalizer(gamma, horizon)
            occupancy = np.einsum("t,tsa->sa", discounts, marginals) / normalizer
            target = int(rng.integers(0, horizon + 1))
            p_epsilon, epsilon = float(rng.uniform()), float(rng.normal())

            with self.subTest(trial=trial):
                np.testing.assert_allclose(
                    discounted_state_action_distribution(mdp, gamma), occupancy, rtol=0, atol=1e-10
                )
                cases = [
                    (
                        make_constraint("timestep-prob", target_timestep=target, p_epsilon=p_epsilon, event=event),
                        gamma**target * (p_epsilon - np.sum(marginals[target] * mask)),
                    ),
                    (
                        make_constraint("timestep-value", target_timestep=target, epsilon=epsilon, value_fn=value_fn),
                        gamma**target * (epsilon - np.sum(marginals[target] * values)),
                    ),
                    (
                        make_constraint("episode-prob", p_epsilon=p_epsilon, event=event),
                        normalizer * (p_epsilon - np.sum(occupancy * mask)),
                    ),
                    (
                        make_constraint("episode-value", epsilon=epsilon, value_fn=value_fn),
                        normalizer * (epsilon - np.sum(occupancy * values)),
                    ),
                ]
                for c, expected in cases:
                    self.assertAlmostEqual(exact_constraint_return(mdp, c, gamma), expected, delta=1e-10)


class TabularEnvTest(SimpleTestCase):
    def test_action_bins(self):
        mdp = random_tabular_mdp(np.random.default_rng(0), 2, 3, 2)
        for a in range(3):
            self.assertEqual(mdp.decode_action(mdp.encode_action(a)), a)
        self.assertEqual(mdp.decode_action(np.array([-1.0])), 0)
        self.assertEqual(mdp.decode_action(np.array([1.0])), 2)

    def test_needs_a_horizon(self):
        with self.assertRaises(StructuralError):
            TabularEnv(random_tabular_mdp(np.random.default_rng(0), 2, 2, 0))

    def test_follows_the_mdp(self):
        env = TabularEnv(chain_mdp(n_states=3, horizon=3, slip=0.0))
        obs = env.reset(seed=0)
        np.testing.assert_array_equal(obs, [1.0, 0.0, 0.0, 0.0])
        obs = env.step(np.array([0.9])).observation
        np.testing.assert_array_equal(obs[:3], [0.0, 1.0, 0.0])
        self.assertAlmostEqual(obs[3], 1 / 3)

    def test_state_dict_resumes(self):
        env = TabularEnv(chain_mdp(n_states=4, horizon=4, slip=0.3), seed=5)
        env.reset()
        env.step(np.array([0.5]))
        saved = env.state_dict()
        expected = [env.step(np.array([0.5])).observation for _ in range(3)]
        other = TabularEnv(chain_mdp(n_states=4, horizon=4, slip=0.3))
        other.load_state_dict(saved)
        for obs in expected:
            np.testing.assert_array_equal(other.step(np.array([0.5])).observation, obs)

    def test_task_metric(self):
        mdp = chain_mdp(n_states=3, horizon=2, slip=0.0)
        spec = ProblemSpec(horizon=2, discount=0.9, reward_mode="general", state_dim=4)
        env = TabularEnv(mdp)
        traj = rollout(env, lambda obs, rng: np.array([0.9]), spec, seed=0)
        self.assertEqual(env.task_metrics(traj), {"final_position": 1.0})

    def test_rollouts_follow_the_policy_table(self):
        mdp = chain_mdp(n_states=3, horizon=2, slip=0.2)
        spec = ProblemSpec(horizon=2, discount=1.0, reward_mode="general", state_dim=4)
        env = TabularEnv(mdp)
        policy = tabular_policy(mdp)
        returns = np.array([rollout(env, policy, spec, seed).episode_return for seed in range(4000)])
        stderr = returns.std() / math.sqrt(len(returns))
        self.assertLess(abs(returns.mean() - exact_reward_return(mdp, 1.0)), 4 * stderr)
