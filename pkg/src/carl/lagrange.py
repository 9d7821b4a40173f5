"""
Lagrange multipliers for the constraint channels: scalarization of the
Lagrangian and the periodic projected dual-descent step.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from carl.exceptions import EmptyWindowError, StructuralError
from carl.mdp import RewardMode, get_reward_mode

# defaults of the reference experiments
DEFAULT_ALPHA_LAMBDA = 0.1
DEFAULT_UPDATE_INTERVAL = 5000
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_ADAM_EPS = 1e-8

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LagrangeState:
    lambdas: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    adam_step: int = 0
    alpha_lambda: float = DEFAULT_ALPHA_LAMBDA
    update_interval: int = DEFAULT_UPDATE_INTERVAL
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    adam_eps: float = DEFAULT_ADAM_EPS
    # frozen multipliers never move; used for fixed-weight baselines
    frozen: bool = False

    @property
    def num_constraints(self):
        return len(self.lambdas)

    def snapshot(self):
        """
        read-only copy of the multipliers, fixed for one training step
        """
        lambdas = self.lambdas.copy()
        lambdas.setflags(write=False)
        return lambdas


def init_multipliers(
    M,
    alpha_lambda=DEFAULT_ALPHA_LAMBDA,
    d=DEFAULT_UPDATE_INTERVAL,
    beta1=DEFAULT_BETA1,
    beta2=DEFAULT_BETA2,
    adam_eps=DEFAULT_ADAM_EPS,
):
    if M < 1:
        raise StructuralError(f"need at least one multiplier, got M={M}")
    if alpha_lambda <= 0:
        raise StructuralError(f"alpha_lambda must be positive, got {alpha_lambda}")
    if d < 1:
        raise StructuralError(f"update interval d must be at least 1, got {d}")
    return LagrangeState(
        lambdas=np.zeros(M),
        adam_m=np.zeros(M),
        adam_v=np.zeros(M),
        adam_step=0,
        alpha_lambda=float(alpha_lambda),
        update_interval=int(d),
        beta1=beta1,
        beta2=beta2,
        adam_eps=adam_eps,
    )


def frozen_multipliers(values, d=DEFAULT_UPDATE_INTERVAL):
    """
    Multipliers pinned to ``values`` (an empty sequence is allowed).
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise StructuralError(f"frozen multipliers must be finite and non-negative, got {values.tolist()}")
    zeros = np.zeros_like(values)
    return LagrangeState(lambdas=values, adam_m=zeros, adam_v=zeros.copy(), update_interval=int(d), frozen=True)


def scalarize(reward, g, state, mode):
    """
    Effective reward of the Lagrangian: sum_m lambda_m g_m, plus ``reward``
    unless ``mode`` is CaR. Accepts a single step or a batch with ``g`` of shape
    (batch, M).
    """
    g = np.asarray(g, dtype=np.float64)
    lambdas = state.lambdas if isinstance(state, LagrangeState) else np.asarray(state, dtype=np.float64)
    if g.shape[-1:] != lambdas.shape:
        raise StructuralError(f"constraint values of shape {g.shape} do not match {len(lambdas)} multipliers")
    weighted = g @ lambdas if lambdas.size else np.zeros(g.shape[:-1])
    if get_reward_mode(mode) is RewardMode.CAR:
        return weighted if np.ndim(weighted) else float(weighted)
    total = np.asarray(reward, dtype=np.float64) + weighted
    return total if np.ndim(total) else float(total)


def multiplier_gradient(recent, gamma):
    """
    dL/dlambda_m estimated as the mean discounted return of constraint m over
    the episodes in ``recent``.
    """
    if not recent:
        raise EmptyWindowError("no completed episodes in the multiplier window, skip this update")
    returns = [np.asarray(traj.constraint_returns, dtype=np.float64) for traj in recent]
    if len({r.shape for r in returns}) > 1:
        raise StructuralError("trajectories in the multiplier window disagree on the number of constraints")
    return np.mean(np.stack(returns), axis=0)


def update_multipliers(state, grad):
    """
    One bias-corrected Adam descent step on every multiplier followed by the
    projection lambda_m <- max(lambda_m, 0).
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.lambdas.shape:
        raise StructuralError(f"gradient of shape {grad.shape} for {state.num_constraints} multipliers")
    if state.frozen:
        return state
    if not np.all(np.isfinite(grad)):
        logger.error("non-finite multiplier gradient %s, update skipped", grad.tolist())
        return state

    step = state.adam_step + 1
    m = state.beta1 * state.adam_m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.adam_v + (1.0 - state.beta2) * grad**2
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    lambdas = state.lambdas - state.alpha_lambda * m_hat / (np.sqrt(v_hat) + state.adam_eps)
    lambdas = np.maximum(lambdas, 0.0)
    return replace(state, lambdas=lambdas, adam_m=m, adam_v=v, adam_step=step)


def lagrange_to_archive(state, prefix="lagrange"):
    tensors = {
        f"{prefix}.lambdas": state.lambdas,
        f"{prefix}.adam_m": state.adam_m,
        f"{prefix}.adam_v": state.adam_v,
    }
    meta = {
        "adam_step": state.adam_step,
        "alpha_lambda": state.alpha_lambda,
        "update_interval": state.update_interval,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "adam_eps": state.adam_eps,
        "frozen": state.frozen,
    }
    return tensors, meta


def lagrange_from_archive(tensors, meta, prefix="lagrange"):
    return LagrangeState(
        lambdas=np.array(tensors[f"{prefix}.lambdas"], dtype=np.float64),
        adam_m=np.array(tensors[f"{prefix}.adam_m"], dtype=np.float64),
        adam_v=np.array(tensors[f"{prefix}.adam_v"], dtype=np.float64),
        **meta,
    )
