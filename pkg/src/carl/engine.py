"""
Lagrangian soft actor-critic trainers. ``qrsac-l`` uses twin quantile critics
with the quantile Huber loss, ``sac-l`` twin scalar critics with a squared
loss; every other code path is shared.
"""

import copy
import enum
import itertools
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, List, Optional

import numpy as np
import torch

from carl.approx import (
    DTYPE,
    HIDDEN_SIZES,
    NUM_QUANTILES,
    GaussianTanhPolicy,
    QuantileCritic,
    ScalarCritic,
    policy_mean_action,
    policy_sample,
    quantile_huber_loss,
    quantile_midpoints,
    soft_update,
    temperature_loss,
)
from carl.buffer import ReplayBuffer
from carl.conf import get_setting
from carl.exceptions import ConfigError, EmptyWindowError, NumericFault, StructuralError, TrainingFault
from carl.lagrange import (
    DEFAULT_ALPHA_LAMBDA,
    DEFAULT_UPDATE_INTERVAL,
    frozen_multipliers,
    init_multipliers,
    multiplier_gradient,
    scalarize,
    update_multipliers,
)
from carl.mdp import Trajectory, collect_step, rollout
from carl.metrics import MetricsRow

# evaluation episodes are seeded away from the training stream
EVAL_SEED_OFFSET = 1_000_000

logger = logging.getLogger(__name__)


class Algorithm(str, enum.Enum):
    QRSAC_L = "qrsac-l"
    SAC_L = "sac-l"


def get_algorithm(algo):
    try:
        return Algorithm(algo)
    except ValueError:
        raise ConfigError(f"Invalid algorithm {algo!r}, expected one of {[a.value for a in Algorithm]}")


@dataclass(frozen=True)
class TrainerConfig:
    model_lr: float = 3e-4
    batch_size: int = 256
    gamma: float = 0.99
    tau: float = 0.005
    num_quantiles: int = NUM_QUANTILES
    alpha_lambda: float = DEFAULT_ALPHA_LAMBDA
    # d: environment steps between multiplier updates
    multiplier_interval: int = DEFAULT_UPDATE_INTERVAL
    # None means -action_dim
    target_entropy: Optional[float] = None
    total_iterations: int = 200_000
    warmup_steps: int = 1000
    eval_interval: int = 5000
    eval_episodes: int = 10
    seed: int = 0
    buffer_capacity: int = 1_000_000
    kappa: float = 1.0
    hidden_sizes: tuple = HIDDEN_SIZES
    initial_temperature: float = 1.0
    # pins lambda to these values and disables dual descent
    frozen_multipliers: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.frozen_multipliers is not None:
            object.__setattr__(self, "frozen_multipliers", tuple(float(v) for v in self.frozen_multipliers))

        positive = ("model_lr", "batch_size", "num_quantiles", "alpha_lambda", "multiplier_interval", "eval_interval")
        for name in positive + ("buffer_capacity", "kappa", "initial_temperature"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"trainer setting {name} must be positive, got {getattr(self, name)!r}")
        for name in ("total_iterations", "warmup_steps", "eval_episodes"):
            if getattr(self, name) < 0:
                raise ConfigError(f"trainer setting {name} must not be negative, got {getattr(self, name)!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"trainer setting gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"trainer setting tau must lie in [0, 1], got {self.tau}")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ConfigError(f"trainer setting hidden_sizes must list positive widths, got {self.hidden_sizes}")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def as_dict(self):
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["hidden_sizes"] = list(self.hidden_sizes)
        if self.frozen_multipliers is not None:
            data["frozen_multipliers"] = list(self.frozen_multipliers)
        return data


class TrainerState:
    """
    Everything the training loop mutates. ``iteration`` counts environment
    steps; ``window`` holds the episodes completed since the last multiplier
    update and ``episode_transitions`` the episode in progress.
    """

    def __init__(self, spec, cfg, algorithm, policy, critics, target_critics, lagrange, buffer):
        self.spec = spec
        self.cfg = cfg
        self.algorithm = algorithm
        self.policy = policy
        self.critics = critics
        self.target_critics = target_critics
        self.log_temperature = torch.nn.Parameter(torch.tensor(math.log(cfg.initial_temperature), dtype=DTYPE))
        self.policy_optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.model_lr)
        self.critic_optimizer = torch.optim.Adam(
            itertools.chain.from_iterable(c.parameters() for c in critics), lr=cfg.model_lr
        )
        self.temperature_optimizer = torch.optim.Adam([self.log_temperature], lr=cfg.model_lr)
        self.lagrange = lagrange
        self.buffer = buffer
        self.iteration = 0
        self.episode = 0
        self.window: List[Trajectory] = []
        self.episode_transitions = []
        self.observation: Optional[np.ndarray] = None

        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        self.act_rng = np.random.default_rng(seeds[0])
        self.sample_rng = np.random.default_rng(seeds[1])
        self.noise_generator = torch.Generator()
        self.noise_generator.manual_seed(int(seeds[2].generate_state(1, dtype=np.uint64)[0]))

        self.target_entropy = -float(spec.action_dim) if cfg.target_entropy is None else float(cfg.target_entropy)
        self.last_losses = {"critic_loss": math.nan, "policy_loss": math.nan}

    @property
    def temperature(self):
        return float(torch.exp(self.log_temperature.detach()))

    def noise(self, *shape):
        return torch.randn(*shape, generator=self.noise_generator, dtype=DTYPE)


def _init_seed(seed):
    child = np.random.SeedSequence(seed).spawn(4)[3]
    return int(child.generate_state(1, dtype=np.uint64)[0])


def _initial_multipliers(spec, cfg):
    if cfg.frozen_multipliers is not None:
        if len(cfg.frozen_multipliers) != spec.num_constraints:
            raise StructuralError(
                f"{len(cfg.frozen_multipliers)} frozen multipliers for {spec.num_constraints} constraints"
            )
        return frozen_multipliers(cfg.frozen_multipliers, cfg.multiplier_interval)
    if spec.num_constraints == 0:
        return frozen_multipliers([], cfg.multiplier_interval)
    return init_multipliers(spec.num_constraints, cfg.alpha_lambda, cfg.multiplier_interval)


def build_state(spec, cfg, algorithm=Algorithm.QRSAC_L):
    """
    Fresh networks, zero multipliers and an empty replay buffer. Network
    weights depend only on ``cfg.seed``.
    """
    algorithm = get_algorithm(algorithm)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(_init_seed(cfg.seed))
        policy = GaussianTanhPolicy(spec.state_dim, spec.action_dim, cfg.hidden_sizes)
        if algorithm is Algorithm.QRSAC_L:
            critics = [
                QuantileCritic(spec.state_dim, spec.action_dim, cfg.num_quantiles, cfg.hidden_sizes) for _ in range(2)
            ]
        else:
            critics = [ScalarCritic(spec.state_dim, spec.action_dim, cfg.hidden_sizes) for _ in range(2)]
    target_critics = [copy.deepcopy(c) for c in critics]
    for target in target_critics:
        target.requires_grad_(False)
    buffer = ReplayBuffer(cfg.buffer_capacity, spec.state_dim, spec.action_dim, spec.num_constraints)
    return TrainerState(spec, cfg, algorithm, policy, critics, target_critics, _initial_multipliers(spec, cfg), buffer)


def scalarized_batch(batch, lambdas, mode):
    """
    The batch with each reward replaced by its Lagrangian-scalarized value
    under ``lambdas``. Stored constraint values are left untouched.
    """
    effective = scalarize(batch.reward, batch.constraint_values, lambdas, mode)
    return replace(batch, reward=np.asarray(effective, dtype=np.float64).reshape(len(batch)))


def _tensor(array):
    return torch.as_tensor(np.asarray(array), dtype=DTYPE)


def critic_targets(state, batch, noise):
    """
    Bootstrap targets, shape (batch, K): r + gamma * (1 - done) * (Z'(s', a') -
    temperature * log pi(a' | s')), where Z' comes from whichever target critic
    has the smaller mean at each sample.
    """
    with torch.no_grad():
        next_obs = _tensor(batch.next_state)
        next_action, next_log_prob = policy_sample(state.policy, next_obs, noise)
        z1 = state.target_critics[0](next_obs, next_action)
        z2 = state.target_critics[1](next_obs, next_action)
        pick_first = (z1.mean(dim=-1) <= z2.mean(dim=-1)).unsqueeze(-1)
        z = torch.where(pick_first, z1, z2)
        temperature = torch.exp(state.log_temperature)
        not_done = 1.0 - _tensor(batch.done.astype(np.float64)).unsqueeze(-1)
        bootstrap = z - temperature * next_log_prob.unsqueeze(-1)
        return _tensor(batch.reward).unsqueeze(-1) + state.cfg.gamma * not_done * bootstrap


def critic_loss(state, batch, noise):
    """
    Summed loss of both online critics against the shared targets. ``batch``
    must already carry effective rewards.
    """
    targets = critic_targets(state, batch, noise)
    obs = _tensor(batch.state)
    action = _tensor(batch.action)
    total = 0.0
    for critic in state.critics:
        pred = critic(obs, action)
        if state.algorithm is Algorithm.QRSAC_L:
            total = total + quantile_huber_loss(pred, targets, quantile_midpoints(pred.shape[-1]), state.cfg.kappa)
        else:
            total = total + 0.5 * (pred - targets).pow(2).mean()
    return total


def policy_loss(state, batch, noise):
    """
    E[temperature * log pi(a | s) - min_k Q_k(s, a)] with a reparameterized.
    Returns the loss and the log-probabilities of the sampled actions.
    """
    obs = _tensor(batch.state)
    action, log_prob = policy_sample(state.policy, obs, noise)
    q = torch.min(state.critics[0].q_value(obs, action), state.critics[1].q_value(obs, action))
    temperature = torch.exp(state.log_temperature).detach()
    return (temperature * log_prob - q).mean(), log_prob


def _check_loss(loss, what, iteration):
    if not torch.isfinite(loss):
        raise NumericFault(f"non-finite {what}", step=iteration)


def critic_update(state, batch):
    noise = state.noise(len(batch), state.spec.action_dim)
    loss = critic_loss(state, batch, noise)
    _check_loss(loss, "critic loss", state.iteration)
    state.critic_optimizer.zero_grad()
    loss.backward()
    state.critic_optimizer.step()
    return loss.item()


def policy_and_temperature_update(state, batch):
    """
    One policy step followed by one temperature step toward the target
    entropy. Returns (policy loss, temperature after the step).
    """
    noise = state.noise(len(batch), state.spec.action_dim)
    loss, log_prob = policy_loss(state, batch, noise)
    _check_loss(loss, "policy loss", state.iteration)
    state.policy_optimizer.zero_grad()
    loss.backward()
    state.policy_optimizer.step()

    alpha_loss = temperature_loss(state.log_temperature, log_prob, state.target_entropy)
    _check_loss(alpha_loss, "temperature loss", state.iteration)
    state.temperature_optimizer.zero_grad()
    alpha_loss.backward()
    state.temperature_optimizer.step()
    return loss.item(), state.temperature


def update_step(state):
    """
    One gradient update from a fresh buffer sample, scalarized under the
    multipliers as they stand now.
    """
    batch = state.buffer.sample(state.cfg.batch_size, state.sample_rng)
    batch = scalarized_batch(batch, state.lagrange.snapshot(), state.spec.reward_mode)
    critic = critic_update(state, batch)
    policy, _ = policy_and_temperature_update(state, batch)
    for target, online in zip(state.target_critics, state.critics):
        soft_update(target, online, state.cfg.tau)
    state.last_losses = {"critic_loss": critic, "policy_loss": policy}


def _act(state, observation):
    if state.iteration < state.cfg.warmup_steps:
        return state.act_rng.uniform(-1.0, 1.0, size=state.spec.action_dim)
    with torch.no_grad():
        action, _ = policy_sample(state.policy, _tensor(observation), state.noise(state.spec.action_dim))
    return action.numpy()


def _multiplier_step(state):
    iteration = state.iteration
    if state.lagrange.frozen:
        state.window = []
        return
    try:
        grad = multiplier_gradient(state.window, state.spec.discount)
    except EmptyWindowError:
        logger.warning(
            "no episode completed in the last %s iterations, multiplier update at %s skipped",
            state.lagrange.update_interval,
            iteration,
        )
    else:
        state.lagrange = update_multipliers(state.lagrange, grad)
        logger.info(
            "multipliers updated",
            extra={
                "iteration": iteration,
                "episodes": len(state.window),
                "gradient": grad.tolist(),
                "lambdas": state.lagrange.lambdas.tolist(),
            },
        )
    state.window = []


def iterate(state, env):
    """
    One environment step followed, outside warmup, by one gradient update.
    """
    cfg = state.cfg
    t = len(state.episode_transitions)
    transition = collect_step(env, state.spec, state.observation, _act(state, state.observation), t)
    state.buffer.add(transition)
    state.episode_transitions.append(transition)
    state.iteration += 1

    if transition.done:
        state.window.append(Trajectory.build(state.episode_transitions, state.spec.discount))
        state.episode += 1
        state.episode_transitions = []
        state.observation = np.asarray(env.reset(), dtype=np.float64)
    else:
        state.observation = transition.next_state

    if cfg.warmup_steps and state.iteration == cfg.warmup_steps:
        logger.info("warmup finished after %s random steps", cfg.warmup_steps)
    if state.iteration >= cfg.warmup_steps and len(state.buffer) >= cfg.batch_size:
        update_step(state)
    if state.iteration % state.lagrange.update_interval == 0:
        _multiplier_step(state)


def deterministic_policy(state):
    def act(observation, rng):
        return policy_mean_action(state.policy, observation).numpy()

    return act


@dataclass
class EvaluationReport:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def evaluate(state, env, episodes, seed):
    """
    Run ``episodes`` deterministic-mean-action episodes, the k-th reset with
    ``seed + k``. Rows carry the native score, the discounted return of each
    constraint and the environment's task metrics.
    """
    spec = state.spec
    report = EvaluationReport(summary={"episodes": episodes})
    if episodes == 0:
        return report
    policy = deterministic_policy(state)
    for k in range(episodes):
        trajectory = rollout(env, policy, spec, seed + k)
        report.rows.append(
            {
                "episode": k,
                "seed": seed + k,
                "length": len(trajectory),
                "score": trajectory.score,
                "constraint_returns": dict(zip(spec.constraint_names, trajectory.constraint_returns.tolist())),
                "task_metrics": env.task_metrics(trajectory),
            }
        )

    scores = [row["score"] for row in report.rows]
    report.summary["mean_score"] = float(np.mean(scores))
    report.summary["median_score"] = float(np.median(scores))
    constraints = {}
    for name in spec.constraint_names:
        returns = np.array([row["constraint_returns"][name] for row in report.rows])
        constraints[name] = {"mean_return": float(returns.mean()), "satisfaction_rate": float(np.mean(returns >= 0.0))}
    report.summary["constraints"] = constraints
    metrics = {}
    for name in sorted({key for row in report.rows for key in row["task_metrics"]}):
        values = np.array([row["task_metrics"][name] for row in report.rows if name in row["task_metrics"]])
        metrics[name] = {"mean": float(values.mean()), "median": float(np.median(values))}
    report.summary["task_metrics"] = metrics
    return report


def metrics_row(state, report, task_metric_name):
    summary = report.summary
    constraints = summary.get("constraints", {})
    task = summary.get("task_metrics", {}).get(task_metric_name)
    return MetricsRow(
        iteration=state.iteration,
        episode=state.episode,
        episode_return=summary.get("mean_score", math.nan),
        constraint_returns={
            name: constraints.get(name, {}).get("mean_return", math.nan) for name in state.spec.constraint_names
        },
        lambdas=dict(zip(state.spec.constraint_names, state.lagrange.lambdas.tolist())),
        critic_loss=state.last_losses["critic_loss"],
        policy_loss=state.last_losses["policy_loss"],
        temperature=state.temperature,
        eval_task_metric=task["median"] if task else math.nan,
    )


@dataclass
class TrainResult:
    state: TrainerState
    rows: list


def _check_dims(env, spec, cfg):
    if env.observation_dim != spec.state_dim or env.action_dim != spec.action_dim:
        raise StructuralError(
            f"environment has dims ({env.observation_dim}, {env.action_dim}), "
            f"problem expects ({spec.state_dim}, {spec.action_dim})"
        )
    if spec.discount != cfg.gamma:
        raise StructuralError(f"problem discount {spec.discount} differs from trainer gamma {cfg.gamma}")


def train(
    env,
    spec,
    cfg,
    algorithm=Algorithm.QRSAC_L,
    state: Optional[TrainerState] = None,
    metrics: Optional[Callable[[MetricsRow], None]] = None,
    checkpoint: Optional[Callable[[TrainerState], None]] = None,
):
    """
    Run the training loop until ``cfg.total_iterations`` environment steps
    have been taken. Passing ``state`` (with ``env`` restored alongside it)
    continues an earlier run. Every ``cfg.eval_interval`` steps an evaluation
    row goes to ``metrics`` and the state to ``checkpoint``; a fresh run also
    hands its starting state to ``checkpoint`` before the first step.

    Any fault raised inside the loop is re-raised as TrainingFault, carrying
    the iteration of the last state handed to ``checkpoint``.
    """
    _check_dims(env, spec, cfg)
    torch.set_num_threads(get_setting("CARL_TORCH_THREADS", 1))
    if state is None:
        state = build_state(spec, cfg, algorithm)
    if state.observation is None:
        state.observation = np.asarray(env.reset(seed=cfg.seed), dtype=np.float64)

    saved = None
    if checkpoint is not None and state.iteration == 0:
        checkpoint(state)
        saved = 0

    rows = []
    logger.info(
        "training %s on %s from iteration %s",
        state.algorithm.value,
        getattr(env, "name", type(env).__name__),
        state.iteration,
        extra={"total_iterations": cfg.total_iterations, "seed": cfg.seed},
    )
    while state.iteration < cfg.total_iterations:
        completed = state.iteration
        try:
            iterate(state, env)
            if state.iteration % cfg.eval_interval == 0:
                report = evaluate(state, copy.deepcopy(env), cfg.eval_episodes, cfg.seed + EVAL_SEED_OFFSET)
                row = metrics_row(state, report, getattr(env, "task_metric_name", None))
                logger.debug("metrics %s", row)
                rows.append(row)
                if metrics is not None:
                    metrics(row)
                if checkpoint is not None:
                    checkpoint(state)
                    saved = state.iteration
        except Exception as exc:
            logger.error("training halted at iteration %s: %s", completed, exc, extra={"checkpoint": saved})
            raise TrainingFault(exc, state, completed, checkpoint_iteration=saved) from exc
    return TrainResult(state, rows)
