"""
Function approximators used by the trainers: the tanh-squashed Gaussian
policy, quantile (and scalar) critics, their losses, and a finite-difference
gradient checker.
"""

import logging
from typing import Callable, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from carl.exceptions import NumericFault, StructuralError

DTYPE = torch.float64

HIDDEN_SIZES = (256, 256, 256)
NUM_QUANTILES = 32
LOG_VAR_MIN = -20.0
LOG_VAR_MAX = 2.0
# floor inside log(1 - tanh(u)^2 + eta)
TANH_EPS = 1e-6
# output layers start near zero
HEAD_INIT = 3e-3

logger = logging.getLogger(__name__)


def _mlp(in_dim: int, hidden_sizes: Tuple[int, ...]) -> nn.Sequential:
    layers = []
    last_dim = in_dim
    for size in hidden_sizes:
        layers.append(nn.Linear(last_dim, size))
        layers.append(nn.ReLU())
        last_dim = size
    return nn.Sequential(*layers)


def _head(in_dim, out_dim):
    layer = nn.Linear(in_dim, out_dim)
    nn.init.uniform_(layer.weight, -HEAD_INIT, HEAD_INIT)
    nn.init.uniform_(layer.bias, -HEAD_INIT, HEAD_INIT)
    return layer


class GaussianTanhPolicy(nn.Module):
    """
    Observation -> (mean, log-variance) of a diagonal Gaussian over pre-squash
    actions; actions are tanh of a sample, i.e. inside (-1, 1).
    """

    def __init__(self, obs_dim: int, action_dim: int, hidden_sizes: Sequence[int] = HIDDEN_SIZES):
        super().__init__()
        hidden_sizes = tuple(hidden_sizes)
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.trunk = _mlp(obs_dim, hidden_sizes)
        self.mean = _head(hidden_sizes[-1], action_dim)
        self.log_var = _head(hidden_sizes[-1], action_dim)
        self.to(DTYPE)

    def forward(self, obs: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if obs.shape[-1] != self.obs_dim:
            raise StructuralError(f"policy expects observations of size {self.obs_dim}, got {obs.shape[-1]}")
        h = self.trunk(obs)
        log_var = torch.clamp(self.log_var(h), LOG_VAR_MIN, LOG_VAR_MAX)
        return self.mean(h), log_var


def squashed_log_prob(mean, log_var, pre_tanh):
    """
    log density of tanh(u) for u ~ N(mean, exp(log_var)), summed over action
    dimensions, including the change-of-variables correction.
    """
    std = torch.exp(0.5 * log_var)
    normal = torch.distributions.Normal(mean, std)
    log_prob = normal.log_prob(pre_tanh)
    log_prob = log_prob - torch.log(1.0 - torch.tanh(pre_tanh).pow(2) + TANH_EPS)
    return log_prob.sum(dim=-1)


def action_log_prob(mean, log_var, action):
    action = torch.clamp(action, -1.0 + 1e-12, 1.0 - 1e-12)
    return squashed_log_prob(mean, log_var, torch.atanh(action))


def policy_sample(policy, obs, noise):
    """
    Reparameterized sample: action = tanh(mean + std * noise). Returns the
    action and its log-probability.
    """
    obs = torch.as_tensor(obs, dtype=DTYPE)
    noise = torch.as_tensor(noise, dtype=DTYPE)
    mean, log_var = policy(obs)
    if not (torch.isfinite(mean).all() and torch.isfinite(log_var).all()):
        raise NumericFault("policy network produced non-finite output")
    pre_tanh = mean + torch.exp(0.5 * log_var) * noise
    return torch.tanh(pre_tanh), squashed_log_prob(mean, log_var, pre_tanh)


def policy_mean_action(policy, obs):
    with torch.no_grad():
        mean, _ = policy(torch.as_tensor(obs, dtype=DTYPE))
    if not torch.isfinite(mean).all():
        raise NumericFault("policy network produced non-finite output")
    return torch.tanh(mean)


class QuantileCritic(nn.Module):
    """
    (observation, action) -> K quantile estimates of the return distribution.
    """

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        num_quantiles: int = NUM_QUANTILES,
        hidden_sizes: Sequence[int] = HIDDEN_SIZES,
    ):
        super().__init__()
        hidden_sizes = tuple(hidden_sizes)
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.num_quantiles = num_quantiles
        self.trunk = _mlp(obs_dim + action_dim, hidden_sizes)
        self.head = _head(hidden_sizes[-1], num_quantiles)
        self.to(DTYPE)

    def forward(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        if obs.shape[-1] != self.obs_dim or action.shape[-1] != self.action_dim:
            raise StructuralError(
                f"critic expects ({self.obs_dim}, {self.action_dim}) inputs, got ({obs.shape[-1]}, {action.shape[-1]})"
            )
        return self.head(self.trunk(torch.cat([obs, action], dim=-1)))

    def q_value(self, obs, action):
        return self(obs, action).mean(dim=-1)


class ScalarCritic(QuantileCritic):
    """
    Conventional critic: a single output read as the expected return.
    """

    def __init__(self, obs_dim: int, action_dim: int, hidden_sizes: Sequence[int] = HIDDEN_SIZES):
        super().__init__(obs_dim, action_dim, num_quantiles=1, hidden_sizes=hidden_sizes)


def quantile_forward(critic, obs, action):
    obs = torch.as_tensor(obs, dtype=DTYPE)
    action = torch.as_tensor(action, dtype=DTYPE)
    return critic(obs, action)


def quantile_midpoints(num_quantiles):
    return (2 * torch.arange(num_quantiles, dtype=DTYPE) + 1) / (2 * num_quantiles)


def quantile_huber_loss(pred, targets, tau_hat, kappa=1.0):
    """
    Mean over (i, j) of |tau_i - 1{u < 0}| * huber_kappa(u) / kappa with
    u = targets_j - pred_i. ``pred`` is (..., K), ``targets`` is (..., K').
    """
    if targets.shape[-1] == 0:
        raise StructuralError("quantile loss needs at least one target")
    if kappa <= 0:
        raise StructuralError(f"kappa must be positive, got {kappa}")
    if pred.shape[-1] != tau_hat.shape[-1]:
        raise StructuralError(f"{pred.shape[-1]} predictions for {tau_hat.shape[-1]} quantile midpoints")
    u = targets.unsqueeze(-2) - pred.unsqueeze(-1)
    abs_u = u.abs()
    huber = torch.where(abs_u <= kappa, 0.5 * u.pow(2), kappa * (abs_u - 0.5 * kappa))
    weight = (tau_hat.unsqueeze(-1) - (u.detach() < 0).to(u.dtype)).abs()
    return (weight * huber / kappa).mean()


def soft_update(target, online, tau):
    with torch.no_grad():
        for target_param, param in zip(target.parameters(), online.parameters()):
            target_param.mul_(1.0 - tau).add_(param, alpha=tau)


def temperature_loss(log_temperature, log_prob, target_entropy):
    """
    Zero gradient exactly when the batch estimate of entropy, -mean(log_prob),
    equals ``target_entropy``.
    """
    return -(log_temperature * (log_prob.detach() + target_entropy)).mean()


def gradient_check(
    loss: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    probes: int = 10,
    eps: float = 1e-5,
    seed: int = 0,
    exclude: Callable[[int, int], bool] = None,
):
    """
    Largest relative difference between autograd and central finite
    differences over ``probes`` random coordinates of ``params``. ``exclude``
    may veto a (param index, flat index) probe, e.g. near a kink.
    """
    params = list(params)
    for p in params:
        p.grad = None
    value = loss()
    grads = torch.autograd.grad(value, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]

    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params], dtype=np.float64)
    worst = 0.0
    checked = 0
    attempts = 0
    while checked < probes and attempts < probes * 20:
        attempts += 1
        index = int(rng.choice(len(params), p=sizes / sizes.sum()))
        flat = int(rng.integers(params[index].numel()))
        if exclude is not None and exclude(index, flat):
            continue
        checked += 1
        with torch.no_grad():
            view = params[index].view(-1)
            original = view[flat].item()
            view[flat] = original + eps
            upper = loss().item()
            view[flat] = original - eps
            lower = loss().item()
            view[flat] = original
        numeric = (upper - lower) / (2 * eps)
        analytic = grads[index].view(-1)[flat].item()
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, error)
    if checked < probes:
        logger.warning("gradient check ran %s of %s probes", checked, probes)
    return worst


def parameters_to_archive(module, prefix):
    return {f"{prefix}.{name}": tensor.detach().cpu().numpy().copy() for name, tensor in module.state_dict().items()}


def parameters_from_archive(module, tensors, prefix):
    state = {}
    for name, current in module.state_dict().items():
        key = f"{prefix}.{name}"
        if key not in tensors:
            raise StructuralError(f"snapshot has no tensor {key}")
        if tuple(tensors[key].shape) != tuple(current.shape):
            raise StructuralError(f"{key} has shape {tuple(tensors[key].shape)}, expected {tuple(current.shape)}")
        state[name] = torch.from_numpy(np.array(tensors[key])).to(current.dtype)
    module.load_state_dict(state)


def optimizer_to_archive(optimizer, prefix):
    state = optimizer.state_dict()
    tensors = {}
    for index, values in state["state"].items():
        for key, value in values.items():
            tensors[f"{prefix}.state.{index}.{key}"] = torch.as_tensor(value).detach().cpu().numpy().copy()
    groups = []
    for group in state["param_groups"]:
        groups.append({key: (list(value) if isinstance(value, tuple) else value) for key, value in group.items()})
    return tensors, {"param_groups": groups}


def optimizer_from_archive(optimizer, tensors, meta, prefix):
    state = {}
    marker = f"{prefix}.state."
    for key, array in tensors.items():
        if not key.startswith(marker):
            continue
        index, name = key[len(marker) :].split(".", 1)
        state.setdefault(int(index), {})[name] = torch.from_numpy(np.array(array))
    groups = [
        {key: (tuple(value) if key == "betas" else value) for key, value in group.items()}
        for group in meta["param_groups"]
    ]
    optimizer.load_state_dict({"state": state, "param_groups": groups})
