import numpy as np

from carl.engine import TrainerConfig
from carl.mdp import StepResult


class ImmediateTerminalEnv:
    """
    Every episode ends on its first step.
    """

    name = "immediate-terminal"
    observation_dim = 2
    action_dim = 1
    task_metric_name = None

    def __init__(self, horizon=5, reward=1.0):
        self.horizon = horizon
        self.reward = reward

    def reset(self, seed=None):
        return np.zeros(self.observation_dim)

    def step(self, action):
        return StepResult(np.ones(self.observation_dim), self.reward, True)

    def state_dict(self):
        return {}

    def load_state_dict(self, state):
        pass

    def task_metrics(self, trajectory):
        return {}


class ConstantRewardEnv:
    """
    A single observation and a reward of 1 on every step.
    """

    name = "constant-reward"
    observation_dim = 1
    action_dim = 1
    task_metric_name = None

    def __init__(self, horizon=200, fault_step=None):
        self.horizon = horizon
        self.fault_step = fault_step
        self.t = 0

    def reset(self, seed=None):
        self.t = 0
        return np.ones(1)

    def step(self, action):
        self.t += 1
        if self.fault_step is not None and self.t > self.fault_step:
            return StepResult(np.array([np.nan]), 1.0, False)
        return StepResult(np.ones(1), 1.0, False)

    def state_dict(self):
        return {"t": self.t}

    def load_state_dict(self, state):
        self.t = state["t"]

    def task_metrics(self, trajectory):
        return {}


class BanditEnv:
    """
    One-step episodes rewarding actions close to 0.5.
    """

    name = "bandit"
    observation_dim = 1
    action_dim = 1
    horizon = 1
    task_metric_name = None

    def reset(self, seed=None):
        return np.ones(1)

    def step(self, action):
        a = float(np.clip(np.asarray(action).reshape(-1)[0], -1.0, 1.0))
        return StepResult(np.ones(1), -((a - 0.5) ** 2), True)

    def state_dict(self):
        return {}

    def load_state_dict(self, state):
        pass

    def task_metrics(self, trajectory):
        return {}


def tiny_trainer(**overrides):
    """
    A TrainerConfig small enough to train in a fraction of a second.
    """
    values = dict(
        model_lr=1e-3,
        batch_size=8,
        gamma=0.9,
        num_quantiles=4,
        multiplier_interval=10,
        total_iterations=40,
        warmup_steps=10,
        eval_interval=20,
        eval_episodes=2,
        buffer_capacity=500,
        hidden_sizes=(8,),
    )
    values.update(overrides)
    return TrainerConfig(**values)


def chain_config(**overrides):
    """
    Decoded config mapping for a tiny run on the tabular chain. The only
    constraint can never be met, so its multiplier keeps growing.
    """
    data = {
        "env": "tabular-chain",
        "algo": "qrsac-l",
        "reward_mode": "car",
        "constraints": [
            {"kind": "episode-value", "name": "position", "value_fn": "tabular-position", "epsilon": -1.0},
        ],
        "trainer": {
            "model_lr": 1e-3,
            "batch_size": 8,
            "gamma": 0.9,
            "num_quantiles": 4,
            "multiplier_interval": 10,
            "total_iterations": 40,
            "warmup_steps": 10,
            "eval_interval": 20,
            "eval_episodes": 2,
            "buffer_capacity": 500,
            "hidden_sizes": [8],
        },
        "seeds": [0],
    }
    data.update(overrides)
    return data
