import logging
from dataclasses import dataclass

import numpy as np

from carl.exceptions import StructuralError
from carl.mdp import Transition

logger = logging.getLogger(__name__)

FIELDS = (
    "state",
    "action",
    "reward",
    "constraint_values",
    "next_state",
    "timestep",
    "terminal",
    "truncated",
    "native_reward",
)


@dataclass(frozen=True, eq=False)
class Batch:
    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    constraint_values: np.ndarray
    next_state: np.ndarray
    timestep: np.ndarray
    terminal: np.ndarray
    truncated: np.ndarray
    native_reward: np.ndarray

    def __len__(self):
        return len(self.reward)

    @property
    def done(self):
        return np.logical_or(self.terminal, self.truncated)

    @classmethod
    def from_transitions(cls, transitions):
        """
        Stack a list of transitions, mostly for tests.
        """
        if not transitions:
            raise StructuralError("cannot build an empty batch")
        return cls(**_stack(transitions))


def _stack(transitions):
    return {
        "state": np.stack([np.asarray(t.state, dtype=np.float64) for t in transitions]),
        "action": np.stack([np.asarray(t.action, dtype=np.float64).reshape(-1) for t in transitions]),
        "reward": np.array([t.reward for t in transitions], dtype=np.float64),
        "constraint_values": np.stack(
            [np.asarray(t.constraint_values, dtype=np.float64).reshape(-1) for t in transitions]
        ),
        "next_state": np.stack([np.asarray(t.next_state, dtype=np.float64) for t in transitions]),
        "timestep": np.array([t.timestep for t in transitions], dtype=np.int64),
        "terminal": np.array([t.terminal for t in transitions], dtype=np.bool_),
        "truncated": np.array([t.truncated for t in transitions], dtype=np.bool_),
        "native_reward": np.array([t.native_reward for t in transitions], dtype=np.float64),
    }


class ReplayBuffer:
    """
    Bounded FIFO store of transitions backed by preallocated arrays. Once full,
    each insertion overwrites the oldest entry.
    """

    def __init__(self, capacity, state_dim, action_dim, num_constraints):
        capacity = int(capacity)
        if capacity < 1:
            raise StructuralError(f"buffer capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.num_constraints = num_constraints
        self._arrays = {
            "state": np.zeros((capacity, state_dim)),
            "action": np.zeros((capacity, action_dim)),
            "reward": np.zeros(capacity),
            "constraint_values": np.zeros((capacity, num_constraints)),
            "next_state": np.zeros((capacity, state_dim)),
            "timestep": np.zeros(capacity, dtype=np.int64),
            "terminal": np.zeros(capacity, dtype=np.bool_),
            "truncated": np.zeros(capacity, dtype=np.bool_),
            "native_reward": np.zeros(capacity),
        }
        # index the next insertion goes to
        self._cursor = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, transition):
        values = np.asarray(transition.constraint_values, dtype=np.float64).reshape(-1)
        if len(values) != self.num_constraints:
            raise StructuralError(
                f"transition has {len(values)} constraint values, buffer holds {self.num_constraints}"
            )
        i = self._cursor
        arrays = self._arrays
        arrays["state"][i] = transition.state
        arrays["action"][i] = np.asarray(transition.action, dtype=np.float64).reshape(-1)
        arrays["reward"][i] = transition.reward
        arrays["constraint_values"][i] = values
        arrays["next_state"][i] = transition.next_state
        arrays["timestep"][i] = transition.timestep
        arrays["terminal"][i] = transition.terminal
        arrays["truncated"][i] = transition.truncated
        arrays["native_reward"][i] = transition.native_reward
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self):
        # storage indices from oldest to newest
        start = self._cursor - self._size
        return np.arange(start, self._cursor) % self.capacity

    def sample(self, batch_size, rng):
        """
        Uniform sample with replacement, drawn from ``rng``.
        """
        if self._size == 0:
            raise StructuralError("cannot sample from an empty buffer")
        positions = rng.integers(0, self._size, size=batch_size)
        indices = self._order()[positions]
        return Batch(**{name: array[indices] for name, array in self._arrays.items()})

    def transitions(self):
        """
        Stored transitions, oldest first.
        """
        order = self._order()
        arrays = self._arrays
        return [
            Transition(
                state=arrays["state"][i].copy(),
                action=arrays["action"][i].copy(),
                reward=float(arrays["reward"][i]),
                constraint_values=arrays["constraint_values"][i].copy(),
                next_state=arrays["next_state"][i].copy(),
                timestep=int(arrays["timestep"][i]),
                terminal=bool(arrays["terminal"][i]),
                truncated=bool(arrays["truncated"][i]),
                native_reward=float(arrays["native_reward"][i]),
            )
            for i in order
        ]

    def to_archive(self, prefix="buffer"):
        order = self._order()
        tensors = {f"{prefix}.{name}": array[order] for name, array in self._arrays.items()}
        meta = {
            "capacity": self.capacity,
            "size": self._size,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "num_constraints": self.num_constraints,
        }
        return tensors, meta

    @classmethod
    def from_archive(cls, tensors, meta, prefix="buffer"):
        buffer = cls(meta["capacity"], meta["state_dim"], meta["action_dim"], meta["num_constraints"])
        size = meta["size"]
        for name in FIELDS:
            stored = tensors[f"{prefix}.{name}"]
            if len(stored) != size:
                raise StructuralError(f"{prefix}.{name} holds {len(stored)} rows, expected {size}")
            buffer._arrays[name][:size] = stored
        # entries were saved oldest first, so they now sit at 0..size-1
        buffer._size = size
        buffer._cursor = size % buffer.capacity
        return buffer
