"""
Trainer checkpoints: everything needed to continue a run bit-exactly, stored
in the flat tensor archive.
"""

import logging

import numpy as np
import torch

from carl.approx import optimizer_from_archive, optimizer_to_archive, parameters_from_archive, parameters_to_archive
from carl.archive import load_archive, save_archive
from carl.buffer import ReplayBuffer
from carl.engine import TrainerConfig, build_state
from carl.exceptions import CheckpointError, StructuralError
from carl.lagrange import lagrange_from_archive, lagrange_to_archive
from carl.mdp import Trajectory, pack_transitions, unpack_transitions

logger = logging.getLogger(__name__)

OPTIMIZERS = ("policy_optimizer", "critic_optimizer", "temperature_optimizer")


def _modules(state):
    modules = {"policy": state.policy}
    for k, critic in enumerate(state.critics):
        modules[f"critic{k}"] = critic
    for k, target in enumerate(state.target_critics):
        modules[f"target{k}"] = target
    return modules


def save_checkpoint(directory, state, env):
    tensors = {}
    meta = {
        "algorithm": state.algorithm.value,
        "config": state.cfg.as_dict(),
        "state_dim": state.spec.state_dim,
        "action_dim": state.spec.action_dim,
        "constraints": state.spec.constraint_names,
        "iteration": state.iteration,
        "episode": state.episode,
        "window": len(state.window),
        "last_losses": state.last_losses,
        "act_rng": state.act_rng.bit_generator.state,
        "sample_rng": state.sample_rng.bit_generator.state,
        "env": env.state_dict(),
    }
    for prefix, module in _modules(state).items():
        tensors.update(parameters_to_archive(module, prefix))
    for name in OPTIMIZERS:
        optimizer_tensors, meta[name] = optimizer_to_archive(getattr(state, name), name)
        tensors.update(optimizer_tensors)
    tensors["log_temperature"] = state.log_temperature.detach().numpy().copy()
    lagrange_tensors, meta["lagrange"] = lagrange_to_archive(state.lagrange)
    tensors.update(lagrange_tensors)
    buffer_tensors, meta["buffer"] = state.buffer.to_archive()
    tensors.update(buffer_tensors)
    for k, trajectory in enumerate(state.window):
        tensors.update(pack_transitions(trajectory.transitions, f"window.{k}"))
    tensors.update(pack_transitions(state.episode_transitions, "episode"))
    if state.observation is not None:
        tensors["observation"] = np.asarray(state.observation, dtype=np.float64)
    tensors["noise_generator"] = state.noise_generator.get_state().numpy().copy()

    save_archive(directory, tensors, meta)
    logger.info("checkpoint written to %s", directory, extra={"iteration": state.iteration})
    return directory


def load_checkpoint(directory, spec, env):
    """
    Rebuild the trainer state saved in ``directory`` and restore ``env`` to
    where it was. ``spec`` must describe the same problem the run used.
    """
    tensors, meta = load_archive(directory)
    if meta.get("constraints") != spec.constraint_names:
        raise CheckpointError(f"checkpoint constraints {meta.get('constraints')} differ from {spec.constraint_names}")
    if (meta["state_dim"], meta["action_dim"]) != (spec.state_dim, spec.action_dim):
        raise CheckpointError(f"checkpoint dims ({meta['state_dim']}, {meta['action_dim']}) differ from the problem")

    cfg = TrainerConfig(**meta["config"])
    state = build_state(spec, cfg, meta["algorithm"])
    try:
        for prefix, module in _modules(state).items():
            parameters_from_archive(module, tensors, prefix)
        for name in OPTIMIZERS:
            optimizer_from_archive(getattr(state, name), tensors, meta[name], name)
        with torch.no_grad():
            state.log_temperature.copy_(torch.from_numpy(np.array(tensors["log_temperature"])))
        state.lagrange = lagrange_from_archive(tensors, meta["lagrange"])
        state.buffer = ReplayBuffer.from_archive(tensors, meta["buffer"])
        state.window = [
            Trajectory.build(unpack_transitions(tensors, f"window.{k}"), spec.discount) for k in range(meta["window"])
        ]
        state.episode_transitions = unpack_transitions(tensors, "episode")
        state.observation = tensors["observation"].copy() if "observation" in tensors else None
        state.noise_generator.set_state(torch.from_numpy(np.array(tensors["noise_generator"], dtype=np.uint8)))
    except (KeyError, StructuralError) as exc:
        raise CheckpointError(f"checkpoint in {directory} is incomplete: {exc}")

    state.act_rng.bit_generator.state = meta["act_rng"]
    state.sample_rng.bit_generator.state = meta["sample_rng"]
    state.iteration = meta["iteration"]
    state.episode = meta["episode"]
    state.last_losses = meta["last_losses"]
    env.load_state_dict(meta["env"])
    logger.info("checkpoint loaded from %s", directory, extra={"iteration": state.iteration})
    return state
