"""
Pendulum swing-up with the standard classic-control constants. The angle is 0
when upright; observations are (cos, sin, angular velocity, t/T) followed by
the optional action history.
"""

import logging
import math

import numpy as np

from carl.constraints import register_predicate, register_value_fn
from carl.exceptions import NumericFault
from carl.mdp import StepResult

GRAVITY = 10.0
MASS = 1.0
LENGTH = 1.0
DT = 0.05
MAX_SPEED = 8.0
MAX_TORQUE = 2.0
HORIZON = 200

logger = logging.getLogger(__name__)


def wrap_angle(theta):
    """
    theta mapped into (-pi, pi]
    """
    return math.pi - (math.pi - theta) % (2 * math.pi)


def pendulum_step(theta, theta_dot, torque):
    """
    One semi-implicit Euler step; torque is clipped to the motor bounds first.
    Returns the new (theta, theta_dot).
    """
    if not all(math.isfinite(x) for x in (theta, theta_dot, torque)):
        raise NumericFault(f"non-finite pendulum input {(theta, theta_dot, torque)}")
    u = min(max(torque, -MAX_TORQUE), MAX_TORQUE)
    acceleration = 3 * GRAVITY / (2 * LENGTH) * math.sin(theta) + 3.0 * u / (MASS * LENGTH**2)
    new_theta_dot = min(max(theta_dot + acceleration * DT, -MAX_SPEED), MAX_SPEED)
    return wrap_angle(theta + new_theta_dot * DT), new_theta_dot


def pendulum_reward(theta, theta_dot, torque):
    u = min(max(torque, -MAX_TORQUE), MAX_TORQUE)
    return -(wrap_angle(theta) ** 2 + 0.1 * theta_dot**2 + 0.001 * u**2)


def pendulum_energy(theta, theta_dot):
    # rod about its pivot: I = m l^2 / 3, centre of mass at l / 2
    return MASS * LENGTH**2 / 6.0 * theta_dot**2 + MASS * GRAVITY * LENGTH / 2.0 * math.cos(theta)


def observed_angle(state):
    return math.atan2(state[1], state[0])


@register_value_fn("abs-angle")
def abs_angle(state, action):
    return abs(observed_angle(state))


@register_value_fn("abs-angular-velocity")
def abs_angular_velocity(state, action):
    return abs(state[2])


@register_value_fn("abs-torque")
def abs_torque(state, action):
    return abs(float(np.clip(action[0], -1.0, 1.0))) * MAX_TORQUE


@register_predicate("pendulum-lower-half")
def pendulum_lower_half(state, action):
    return abs(observed_angle(state)) > math.pi / 2


class PendulumEnv:
    name = "pendulum"
    action_dim = 1
    task_metric_name = "final_segment_abs_angle"

    def __init__(self, horizon=HORIZON, action_history=0, seed=None):
        self.horizon = int(horizon)
        self.action_history = int(action_history)
        self.observation_dim = 4 + self.action_history
        self._rng = np.random.default_rng(seed)
        self.theta = math.pi
        self.theta_dot = 0.0
        self.t = 0
        self._history = np.zeros(self.action_history)

    def observation(self):
        head = [math.cos(self.theta), math.sin(self.theta), self.theta_dot, self.t / self.horizon]
        return np.concatenate([np.array(head), self._history])

    def reset(self, seed=None):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.theta = wrap_angle(self._rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(self._rng.uniform(-1.0, 1.0))
        self.t = 0
        self._history = np.zeros(self.action_history)
        return self.observation()

    def step(self, action):
        a = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
        torque = a * MAX_TORQUE
        reward = pendulum_reward(self.theta, self.theta_dot, torque)
        self.theta, self.theta_dot = pendulum_step(self.theta, self.theta_dot, torque)
        self.t += 1
        if self.action_history:
            self._history = np.concatenate([self._history[1:], [a]])
        return StepResult(self.observation(), reward, False)

    def state_dict(self):
        return {
            "theta": self.theta,
            "theta_dot": self.theta_dot,
            "t": self.t,
            "history": self._history.tolist(),
            "rng": self._rng.bit_generator.state,
        }

    def load_state_dict(self, state):
        self.theta = state["theta"]
        self.theta_dot = state["theta_dot"]
        self.t = state["t"]
        self._history = np.array(state["history"], dtype=np.float64)
        self._rng = np.random.default_rng()
        self._rng.bit_generator.state = state["rng"]

    def task_metrics(self, trajectory):
        """
        Mean |angle| over the final 20% of the episode, and |angle| at t = T.
        """
        if not len(trajectory):
            return {}
        angles = [abs(observed_angle(tr.state)) for tr in trajectory.transitions]
        segment = max(1, math.ceil(0.2 * len(angles)))
        last = trajectory.transitions[-1]
        final = angles[-1] if last.timestep == self.horizon else abs(observed_angle(last.next_state))
        return {
            "final_segment_abs_angle": float(np.mean(angles[-segment:])),
            "final_abs_angle": final,
        }
