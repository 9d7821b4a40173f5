"""
Finite-horizon tabular MDPs small enough to enumerate every trajectory. They
give exact expectations for constraint returns and double as a trainable
environment.

Observations are one-hot(state) followed by t/T. The continuous action in
(-1, 1) is split into equal bins, one per discrete action.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from carl.conf import get_setting
from carl.constraints import evaluate, register_predicate, register_value_fn
from carl.exceptions import EnumerationBudgetError, StructuralError
from carl.mdp import StepResult

MAX_HORIZON = 6
ROW_TOLERANCE = 1e-12
LEFT = 0
RIGHT = 1

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TabularMDP:
    # p(s' | s, a), shape (S, A, S)
    transitions: np.ndarray
    # shape (S,)
    initial: np.ndarray
    # pi(a | s, t), shape (T + 1, S, A)
    policy: np.ndarray
    horizon: int
    # r(s, a), shape (S, A); zero unless given
    rewards: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        transitions = np.asarray(self.transitions, dtype=np.float64)
        n_states, n_actions = transitions.shape[:2]
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=np.float64))
        object.__setattr__(self, "policy", np.asarray(self.policy, dtype=np.float64))
        rewards = np.zeros((n_states, n_actions)) if self.rewards is None else np.asarray(self.rewards, float)
        object.__setattr__(self, "rewards", rewards)

        if not 0 <= self.horizon <= MAX_HORIZON:
            raise StructuralError(f"tabular horizon must lie in [0, {MAX_HORIZON}], got {self.horizon}")
        if transitions.shape != (n_states, n_actions, n_states):
            raise StructuralError(f"transition table has shape {transitions.shape}")
        if self.initial.shape != (n_states,):
            raise StructuralError(f"initial distribution has shape {self.initial.shape}")
        if self.policy.shape != (self.horizon + 1, n_states, n_actions):
            raise StructuralError(f"policy table has shape {self.policy.shape}")
        if self.rewards.shape != (n_states, n_actions):
            raise StructuralError(f"reward table has shape {self.rewards.shape}")
        for label, table in (("transition", transitions), ("initial", self.initial), ("policy", self.policy)):
            if np.any(table < 0) or np.any(np.abs(table.sum(axis=-1) - 1.0) > ROW_TOLERANCE):
                raise StructuralError(f"{label} rows must be distributions")

    @property
    def n_states(self):
        return self.transitions.shape[0]

    @property
    def n_actions(self):
        return self.transitions.shape[1]

    def observe(self, s, t):
        obs = np.zeros(self.n_states + 1)
        obs[s] = 1.0
        obs[-1] = t / self.horizon if self.horizon else 0.0
        return obs

    def encode_action(self, a):
        return np.array([-1.0 + (2 * a + 1) / self.n_actions])

    def decode_action(self, action):
        value = float(np.asarray(action).reshape(-1)[0])
        return int(min(max(np.floor((value + 1.0) / 2.0 * self.n_actions), 0), self.n_actions - 1))


def chain_mdp(n_states=4, horizon=4, slip=0.1, policy=None):
    """
    Left/right chain starting in state 0. A move goes the intended way with
    probability 1 - slip and the opposite way otherwise; the ends are sticky.
    """
    transitions = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        left, right = max(s - 1, 0), min(s + 1, n_states - 1)
        transitions[s, LEFT, left] += 1.0 - slip
        transitions[s, LEFT, right] += slip
        transitions[s, RIGHT, right] += 1.0 - slip
        transitions[s, RIGHT, left] += slip
    initial = np.zeros(n_states)
    initial[0] = 1.0
    if policy is None:
        policy = np.full((horizon + 1, n_states, 2), 0.5)
    rewards = np.zeros((n_states, 2))
    rewards[n_states - 1, :] = 1.0
    return TabularMDP(transitions=transitions, initial=initial, policy=policy, horizon=horizon, rewards=rewards)


def random_tabular_mdp(rng, n_states, n_actions, horizon):
    """
    Dirichlet-random dynamics, initial distribution and time-varying policy.
    """

    def rows(*shape):
        table = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
        # renormalize so rows sum to 1 well inside the validation tolerance
        return table / table.sum(axis=-1, keepdims=True)

    return TabularMDP(
        transitions=rows(n_states, n_actions, n_states),
        initial=rows(n_states),
        policy=rows(horizon + 1, n_states, n_actions),
        horizon=horizon,
        rewards=rng.normal(size=(n_states, n_actions)),
    )


def _budget(budget):
    return get_setting("CARL_ENUMERATION_BUDGET", 10**6) if budget is None else budget


def enumerate_trajectories(mdp, budget=None):
    """
    Every (s_0, a_0, ..., s_T, a_T) with non-zero probability, as a list of
    (path, probability) where path is a tuple of (s, a) pairs.
    """
    budget = _budget(budget)
    bound = (mdp.n_states * mdp.n_actions) ** (mdp.horizon + 1)
    if bound > budget:
        raise EnumerationBudgetError(bound, budget)

    results = []

    def extend(path, prob, s, t):
        for a in range(mdp.n_actions):
            p_action = prob * mdp.policy[t, s, a]
            if p_action == 0.0:
                continue
            step = path + ((s, a),)
            if t == mdp.horizon:
                results.append((step, p_action))
                continue
            for s_next in range(mdp.n_states):
                p_next = p_action * mdp.transitions[s, a, s_next]
                if p_next > 0.0:
                    extend(step, p_next, s_next, t + 1)

    for s0 in range(mdp.n_states):
        if mdp.initial[s0] > 0.0:
            extend((), mdp.initial[s0], s0, 0)
    logger.debug("enumerated %s trajectories (bound %s)", len(results), bound)
    return results


def exact_return(mdp, fn, gamma, budget=None):
    """
    E_pi[sum_t gamma^t fn(obs_t, action_t, t)] by summing over every trajectory.
    """
    values = np.zeros((mdp.horizon + 1, mdp.n_states, mdp.n_actions))
    for t, s, a in np.ndindex(*values.shape):
        values[t, s, a] = fn(mdp.observe(s, t), mdp.encode_action(a), t)
    total = 0.0
    for path, prob in enumerate_trajectories(mdp, budget):
        total += prob * sum(gamma**t * values[t, s, a] for t, (s, a) in enumerate(path))
    return total


def exact_constraint_return(mdp, c, gamma, budget=None):
    return exact_return(mdp, lambda obs, action, t: evaluate(c, obs, action, t), gamma, budget)


def exact_reward_return(mdp, gamma, budget=None):
    def reward(obs, action, t):
        return mdp.rewards[_state_of(obs), mdp.decode_action(action)]

    return exact_return(mdp, reward, gamma, budget)


def discount_normalizer(gamma, horizon):
    """
    sum_{t=0}^{T} gamma^t, i.e. (1 - gamma^(T+1)) / (1 - gamma), with the
    gamma = 1 limit T + 1.
    """
    if gamma == 1.0:
        return float(horizon + 1)
    return (1.0 - gamma ** (horizon + 1)) / (1.0 - gamma)


def discounted_state_action_distribution(mdp, gamma, budget=None):
    """
    p_{pi,gamma}(s, a) = sum_t p_t(s, a) gamma^t / sum_t gamma^t, accumulated
    over enumerated trajectories. Shape (S, A).
    """
    normalizer = discount_normalizer(gamma, mdp.horizon)
    distribution = np.zeros((mdp.n_states, mdp.n_actions))
    for path, prob in enumerate_trajectories(mdp, budget):
        for t, (s, a) in enumerate(path):
            distribution[s, a] += prob * gamma**t / normalizer
    return distribution


def state_action_marginals(mdp):
    """
    p_t(s, a) for every t by forward recursion, shape (T + 1, S, A).
    """
    marginals = np.zeros((mdp.horizon + 1, mdp.n_states, mdp.n_actions))
    states = mdp.initial.copy()
    for t in range(mdp.horizon + 1):
        marginals[t] = states[:, None] * mdp.policy[t]
        states = np.einsum("sa,sap->p", marginals[t], mdp.transitions)
    return marginals


def _state_of(obs):
    return int(np.argmax(obs[:-1]))


@register_predicate("tabular-first-state")
def tabular_first_state(state, action):
    return _state_of(state) == 0


@register_predicate("tabular-last-state")
def tabular_last_state(state, action):
    return _state_of(state) == len(state) - 2


@register_predicate("tabular-left-action")
def tabular_left_action(state, action):
    return float(np.asarray(action).reshape(-1)[0]) < 0.0


@register_value_fn("tabular-position")
def tabular_position(state, action):
    return _state_of(state) / max(len(state) - 2, 1)


def tabular_policy(mdp):
    """
    The MDP's own tabular policy as a rollout policy.
    """

    def act(obs, rng):
        t = int(round(obs[-1] * mdp.horizon))
        a = rng.choice(mdp.n_actions, p=mdp.policy[t, _state_of(obs)])
        return mdp.encode_action(a)

    return act


class TabularEnv:
    name = "tabular-chain"
    action_dim = 1
    task_metric_name = "final_position"

    def __init__(self, mdp, seed=None):
        if mdp.horizon < 1:
            raise StructuralError("a trainable tabular environment needs a horizon of at least 1")
        self.mdp = mdp
        self.horizon = mdp.horizon
        self.observation_dim = mdp.n_states + 1
        self._rng = np.random.default_rng(seed)
        self.s = 0
        self.t = 0

    def reset(self, seed=None):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.s = int(self._rng.choice(self.mdp.n_states, p=self.mdp.initial))
        self.t = 0
        return self.mdp.observe(self.s, self.t)

    def step(self, action):
        a = self.mdp.decode_action(action)
        reward = float(self.mdp.rewards[self.s, a])
        self.s = int(self._rng.choice(self.mdp.n_states, p=self.mdp.transitions[self.s, a]))
        self.t += 1
        return StepResult(self.mdp.observe(self.s, self.t), reward, False)

    def state_dict(self):
        return {"s": self.s, "t": self.t, "rng": self._rng.bit_generator.state}

    def load_state_dict(self, state):
        self.s = state["s"]
        self.t = state["t"]
        self._rng = np.random.default_rng()
        self._rng.bit_generator.state = state["rng"]

    def task_metrics(self, trajectory):
        if not len(trajectory):
            return {}
        return {"final_position": tabular_position(trajectory.transitions[-1].next_state, None)}
