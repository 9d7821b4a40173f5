"""
Core CMDP value types, discounted-return arithmetic and the rollout contract
shared by environments, oracles and trainers.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Protocol, Sequence

import numpy as np

from carl.constraints import ConstraintFn, evaluate
from carl.exceptions import NumericFault, StructuralError

logger = logging.getLogger(__name__)


class RewardMode(str, enum.Enum):
    # objective composed purely of constraints, reward channel forced to 0
    CAR = "car"
    # reward plus Lagrangian-weighted constraints
    GENERAL = "general"


def get_reward_mode(mode):
    try:
        return RewardMode(mode)
    except ValueError:
        raise ValueError(f"Invalid reward mode {mode!r}, expected one of {[m.value for m in RewardMode]}")


@dataclass(frozen=True, eq=False)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    constraint_values: np.ndarray
    next_state: np.ndarray
    timestep: int
    terminal: bool = False
    truncated: bool = False
    # reward reported by the environment, kept even when the reward channel is zeroed
    native_reward: float = 0.0

    @property
    def done(self):
        return self.terminal or self.truncated


def discounted_return(values, gamma):
    """
    sum over t of gamma**t * values[t]; an empty sequence returns 0
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return 0.0
    return float(np.dot(np.power(gamma, np.arange(len(values), dtype=np.float64)), values))


def _constraint_matrix(transitions):
    counts = {len(t.constraint_values) for t in transitions}
    if len(counts) > 1:
        raise StructuralError(f"constraint count differs across transitions: {sorted(counts)}")
    if not transitions:
        return np.zeros((0, 0))
    return np.stack([np.asarray(t.constraint_values, dtype=np.float64) for t in transitions]).reshape(
        len(transitions), counts.pop()
    )


@dataclass(frozen=True, eq=False)
class Trajectory:
    transitions: tuple
    episode_return: float
    constraint_returns: np.ndarray
    score: float = 0.0

    @classmethod
    def build(cls, transitions, gamma):
        transitions = tuple(transitions)
        for expected, transition in enumerate(transitions):
            if transition.timestep != expected:
                raise StructuralError(f"timestep {transition.timestep} found at position {expected}")
        matrix = _constraint_matrix(transitions)
        discounts = np.power(gamma, np.arange(len(transitions), dtype=np.float64))
        return cls(
            transitions=transitions,
            episode_return=discounted_return([t.reward for t in transitions], gamma),
            constraint_returns=discounts @ matrix,
            score=float(sum(t.native_reward for t in transitions)),
        )

    def __len__(self):
        return len(self.transitions)

    @property
    def num_constraints(self):
        return len(self.constraint_returns)


def constraint_returns(traj, gamma):
    """
    Discounted return of every constraint channel of ``traj``.
    """
    if not traj.transitions:
        raise StructuralError("constraint returns of an empty trajectory")
    matrix = _constraint_matrix(traj.transitions)
    return np.array([discounted_return(matrix[:, m], gamma) for m in range(matrix.shape[1])])


@dataclass(frozen=True)
class ProblemSpec:
    horizon: int
    discount: float
    reward_mode: RewardMode
    constraints: tuple = field(default_factory=tuple)
    state_dim: int = 1
    action_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "reward_mode", get_reward_mode(self.reward_mode))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.horizon < 1:
            raise StructuralError(f"horizon must be positive, got {self.horizon}")
        if not 0.0 < self.discount <= 1.0:
            raise StructuralError(f"discount must lie in (0, 1], got {self.discount}")
        if self.state_dim < 1 or self.action_dim < 1:
            raise StructuralError("state_dim and action_dim must be positive")
        if self.reward_mode is RewardMode.CAR and not self.constraints:
            raise StructuralError("the car reward mode needs at least one constraint")
        for constraint in self.constraints:
            if not isinstance(constraint, ConstraintFn):
                raise StructuralError(f"{constraint!r} is not a ConstraintFn")

    @property
    def num_constraints(self):
        return len(self.constraints)

    @property
    def constraint_names(self):
        return [c.name for c in self.constraints]


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    terminal: bool


class Environment(Protocol):
    name: str
    observation_dim: int
    action_dim: int
    horizon: int

    def reset(self, seed: Optional[int] = None) -> np.ndarray: ...

    def step(self, action: np.ndarray) -> StepResult: ...

    def state_dict(self) -> dict: ...

    def load_state_dict(self, state: dict) -> None: ...

    def task_metrics(self, trajectory: Trajectory) -> dict: ...


# maps (observation, rng) to an action within the environment's bounds
Policy = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def check_finite(values, what, step=None):
    if not np.all(np.isfinite(values)):
        raise NumericFault(f"non-finite {what}", step=step)


def collect_step(env, spec, observation, action, t):
    """
    Step ``env`` once and record the transition, with every constraint of
    ``spec`` evaluated at (observation, action, t).
    """
    action = np.asarray(action, dtype=np.float64)
    check_finite(action, "action", step=t)
    result = env.step(action)
    next_state = np.asarray(result.observation, dtype=np.float64)
    check_finite(next_state, "state", step=t)
    values = np.array([evaluate(c, observation, action, t) for c in spec.constraints], dtype=np.float64)
    reward = 0.0 if spec.reward_mode is RewardMode.CAR else float(result.reward)
    terminal = bool(result.terminal)
    return Transition(
        state=np.asarray(observation, dtype=np.float64),
        action=action,
        reward=reward,
        constraint_values=values,
        next_state=next_state,
        timestep=t,
        terminal=terminal,
        truncated=(t >= spec.horizon and not terminal),
        native_reward=float(result.reward),
    )


def rollout(env, policy, spec, seed):
    """
    Run one episode of at most ``spec.horizon + 1`` steps. The environment is
    reset with ``seed`` and the policy draws from a stream spawned from it, so
    equal seeds give identical trajectories.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    observation = np.asarray(env.reset(seed=seed), dtype=np.float64)
    check_finite(observation, "state", step=0)
    transitions = []
    for t in range(spec.horizon + 1):
        transition = collect_step(env, spec, observation, policy(observation, rng), t)
        transitions.append(transition)
        if transition.done:
            break
        observation = transition.next_state
    return Trajectory.build(transitions, spec.discount)


def pack_transitions(transitions: Sequence[Transition], prefix):
    """
    Stack transitions into named arrays for the snapshot archive.
    """
    transitions = list(transitions)
    if not transitions:
        return {f"{prefix}.count": np.zeros((), dtype=np.int64)}
    return {
        f"{prefix}.count": np.array(len(transitions), dtype=np.int64),
        f"{prefix}.state": np.stack([t.state for t in transitions]),
        f"{prefix}.action": np.stack([t.action for t in transitions]),
        f"{prefix}.reward": np.array([t.reward for t in transitions]),
        f"{prefix}.constraint_values": _constraint_matrix(transitions),
        f"{prefix}.next_state": np.stack([t.next_state for t in transitions]),
        f"{prefix}.timestep": np.array([t.timestep for t in transitions], dtype=np.int64),
        f"{prefix}.terminal": np.array([t.terminal for t in transitions], dtype=np.bool_),
        f"{prefix}.truncated": np.array([t.truncated for t in transitions], dtype=np.bool_),
        f"{prefix}.native_reward": np.array([t.native_reward for t in transitions]),
    }


def unpack_transitions(arrays, prefix):
    count = int(arrays[f"{prefix}.count"])
    return [
        Transition(
            state=arrays[f"{prefix}.state"][i].copy(),
            action=arrays[f"{prefix}.action"][i].copy(),
            reward=float(arrays[f"{prefix}.reward"][i]),
            constraint_values=arrays[f"{prefix}.constraint_values"][i].copy(),
            next_state=arrays[f"{prefix}.next_state"][i].copy(),
            timestep=int(arrays[f"{prefix}.timestep"][i]),
            terminal=bool(arrays[f"{prefix}.terminal"][i]),
            truncated=bool(arrays[f"{prefix}.truncated"][i]),
            native_reward=float(arrays[f"{prefix}.native_reward"][i]),
        )
        for i in range(count)
    ]
