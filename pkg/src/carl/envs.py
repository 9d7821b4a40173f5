"""
Environments the harness can build by name. Importing this module also
registers the built-in predicates and value functions.
"""

import logging

from carl.exceptions import ConfigError, StructuralError
from carl.pendulum import PendulumEnv
from carl.tabular import TabularEnv, chain_mdp

logger = logging.getLogger(__name__)


def _pendulum(seed=None, horizon=200, action_history=0):
    return PendulumEnv(horizon=horizon, action_history=action_history, seed=seed)


def _tabular_chain(seed=None, n_states=4, horizon=4, slip=0.1):
    return TabularEnv(chain_mdp(n_states=n_states, horizon=horizon, slip=slip), seed=seed)


ENVIRONMENTS = {
    "pendulum": _pendulum,
    "tabular-chain": _tabular_chain,
}


def make_environment(name, seed=None, **options):
    try:
        factory = ENVIRONMENTS[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}, expected one of {sorted(ENVIRONMENTS)}")
    try:
        env = factory(seed=seed, **options)
    except (TypeError, StructuralError) as exc:
        raise ConfigError(f"bad options for environment {name!r}: {exc}")
    logger.debug("built environment %s with options %s", name, options)
    return env
