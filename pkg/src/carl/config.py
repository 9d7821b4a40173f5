"""
Experiment configuration files. A config is a YAML mapping; see
docs/usage.rst for the schema. Unknown keys are errors.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import yaml

from carl.conf import get_setting
from carl.constraints import make_constraint
from carl.engine import TrainerConfig, get_algorithm
from carl.envs import ENVIRONMENTS, make_environment
from carl.exceptions import ConfigError, ConstraintError, StructuralError
from carl.mdp import ProblemSpec, get_reward_mode

logger = logging.getLogger(__name__)

FLOAT_FIELDS = {
    "p_epsilon",
    "epsilon",
    "model_lr",
    "gamma",
    "tau",
    "alpha_lambda",
    "target_entropy",
    "kappa",
    "initial_temperature",
}
INT_FIELDS = {
    "target_timestep",
    "batch_size",
    "num_quantiles",
    "multiplier_interval",
    "total_iterations",
    "warmup_steps",
    "eval_interval",
    "eval_episodes",
    "buffer_capacity",
}


def _coerce(where, name, value):
    # YAML reads 1e-2 (no dot) as a string
    if value is None:
        return None
    try:
        if name in FLOAT_FIELDS:
            return float(value)
        if name in INT_FIELDS:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError(value)
            return int(float(value))
        if name == "hidden_sizes":
            return [int(v) for v in value]
        if name == "frozen_multipliers":
            return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{name}: expected a number, got {value!r}")
    return value


def _check_keys(where, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}, allowed are {sorted(allowed)}")


@dataclass
class ConstraintDecl:
    kind: str
    name: Optional[str] = None
    target_timestep: Optional[int] = None
    p_epsilon: Optional[float] = None
    epsilon: Optional[float] = None
    # registered predicate name
    event: Optional[str] = None
    # registered value function name
    value_fn: Optional[str] = None
    reversed: bool = False

    def build(self, horizon=None):
        return make_constraint(
            self.kind,
            name=self.name,
            target_timestep=self.target_timestep,
            p_epsilon=self.p_epsilon,
            epsilon=self.epsilon,
            event=self.event,
            value_fn=self.value_fn,
            reversed=self.reversed,
            horizon=horizon,
        )

    def as_dict(self):
        return {key: value for key, value in asdict(self).items() if value is not None and value is not False}


@dataclass
class ExperimentConfig:
    env: str
    algo: str = "qrsac-l"
    reward_mode: str = "car"
    env_options: dict = field(default_factory=dict)
    constraints: List[ConstraintDecl] = field(default_factory=list)
    # TrainerConfig overrides
    trainer: dict = field(default_factory=dict)
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = ""

    def as_dict(self):
        return {
            "env": self.env,
            "env_options": dict(self.env_options),
            "algo": self.algo,
            "reward_mode": self.reward_mode,
            "constraints": [c.as_dict() for c in self.constraints],
            "trainer": dict(self.trainer),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }


def parse_config(data, source="config"):
    """
    Validate a decoded config mapping and fill in defaults.
    """
    if data is None:
        raise ConfigError(f"{source}: empty configuration")
    _check_keys(source, data, [f.name for f in fields(ExperimentConfig)])
    if "env" not in data:
        raise ConfigError(f"{source}: missing required key 'env'")
    env = data["env"]
    if env not in ENVIRONMENTS:
        raise ConfigError(f"{source}.env: unknown environment {env!r}, expected one of {sorted(ENVIRONMENTS)}")

    algo = get_algorithm(data.get("algo", "qrsac-l")).value
    try:
        reward_mode = get_reward_mode(data.get("reward_mode", "car")).value
    except ValueError as exc:
        raise ConfigError(f"{source}.reward_mode: {exc}")

    env_options = data.get("env_options") or {}
    if not isinstance(env_options, dict):
        raise ConfigError(f"{source}.env_options: expected a mapping")

    constraints = []
    allowed = [f.name for f in fields(ConstraintDecl)]
    for index, item in enumerate(data.get("constraints") or []):
        where = f"{source}.constraints[{index}]"
        _check_keys(where, item, allowed)
        if "kind" not in item:
            raise ConfigError(f"{where}: missing required key 'kind'")
        values = {key: _coerce(where, key, value) for key, value in item.items()}
        values["reversed"] = bool(values.get("reversed", False))
        constraints.append(ConstraintDecl(**values))

    trainer = data.get("trainer") or {}
    trainer_fields = [name for name in TrainerConfig.field_names() if name != "seed"]
    _check_keys(f"{source}.trainer", trainer, trainer_fields)
    trainer = {key: _coerce(f"{source}.trainer", key, value) for key, value in trainer.items()}

    seeds = data.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        raise ConfigError(f"{source}.seeds: expected a non-empty list of non-negative integers, got {seeds!r}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"{source}.seeds: duplicate seeds {seeds}")

    config = ExperimentConfig(
        env=env,
        algo=algo,
        reward_mode=reward_mode,
        env_options=dict(env_options),
        constraints=constraints,
        trainer=trainer,
        seeds=list(seeds),
        output_dir=str(data.get("output_dir") or f"{env}-{algo}"),
    )
    # build everything once so errors surface at load time
    problem_spec(config, make_environment(config.env, **config.env_options))
    trainer_config(config, seeds[0])
    return config


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{where}: {problem}")
    config = parse_config(data, source=path.name)
    logger.debug("loaded config %s", path, extra={"env": config.env, "algo": config.algo})
    return config


def dump_config(config):
    return yaml.safe_dump(config.as_dict(), sort_keys=False, default_flow_style=False)


def save_config(config, path):
    Path(path).write_text(dump_config(config))


def problem_spec(config, env):
    """
    The ProblemSpec of ``config`` on an environment built from it.
    """
    constraints = []
    for index, decl in enumerate(config.constraints):
        try:
            constraints.append(decl.build(horizon=env.horizon))
        except ConstraintError as exc:
            raise ConfigError(f"constraints[{index}].{exc}")
    names = [c.name for c in constraints]
    duplicates = sorted({name for name in names if names.count(name) > 1})
    if duplicates:
        raise ConfigError(f"constraints: duplicate names {duplicates}, give each a distinct name")
    gamma = config.trainer.get("gamma", get_setting("CARL_TRAINER_DEFAULTS", {}).get("gamma", TrainerConfig.gamma))
    try:
        return ProblemSpec(
            horizon=env.horizon,
            discount=gamma,
            reward_mode=config.reward_mode,
            constraints=constraints,
            state_dim=env.observation_dim,
            action_dim=env.action_dim,
        )
    except StructuralError as exc:
        raise ConfigError(str(exc))


def trainer_config(config, seed):
    """
    TrainerConfig for one seed: built-in defaults, then the site-wide
    CARL_TRAINER_DEFAULTS setting, then the config's own overrides.
    """
    site = dict(get_setting("CARL_TRAINER_DEFAULTS", {}))
    _check_keys("CARL_TRAINER_DEFAULTS", site, TrainerConfig.field_names())
    values = {**site, **config.trainer, "seed": seed}
    try:
        return TrainerConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc))
