"""
Run directories: one per (config, seed), holding the metrics file, the latest
checkpoint, a manifest and, after a fault, a FAILED marker.
"""

import contextlib
import hashlib
import json
import logging
import shutil
from dataclasses import replace
from pathlib import Path

import lockfile

import carl
from carl.checkpoint import load_checkpoint, save_checkpoint
from carl.conf import get_setting, output_root
from carl.config import dump_config, parse_config, problem_spec, trainer_config
from carl.engine import EVAL_SEED_OFFSET, evaluate, train
from carl.envs import make_environment
from carl.exceptions import CheckpointError, ConfigError, RunLockedError, TrainingFault
from carl.metrics import MetricsWriter, truncate_metrics

METRICS_FILE = "metrics.csv"
CHECKPOINT_DIR = "checkpoint"
MANIFEST_FILE = "run.json"
FAILED_FILE = "FAILED"
EVALUATION_FILE = "evaluation.json"
LOCK_NAME = "run"

logger = logging.getLogger(__name__)


def run_directory(config, seed, root=None):
    return Path(root if root is not None else output_root()) / config.output_dir / f"seed-{seed}"


def _blob_hash(data):
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def code_hash():
    """
    Git-style content hash of the installed carl sources: a sha1 over the
    sorted (path, blob sha1) pairs of every module.
    """
    package = Path(carl.__file__).parent
    tree = hashlib.sha1()
    for path in sorted(package.rglob("*.py")):
        relative = path.relative_to(package).as_posix()
        tree.update(f"{relative} {_blob_hash(path.read_bytes())}\n".encode())
    return tree.hexdigest()


def run_hash(config, seed, code):
    return hashlib.sha1(f"{dump_config(config)}\nseed {seed}\ncode {code}\n".encode()).hexdigest()


def write_manifest(run_dir, config, seed, cfg):
    code = code_hash()
    manifest = {
        "carl_version": carl.__version__,
        "config": config.as_dict(),
        "seed": seed,
        "trainer": cfg.as_dict(),
        "code_hash": code,
        "run_hash": run_hash(config, seed, code),
    }
    (Path(run_dir) / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(run_dir):
    path = Path(run_dir) / MANIFEST_FILE
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"{run_dir} has no {MANIFEST_FILE}, is it a run directory?")
    except ValueError as exc:
        raise CheckpointError(f"corrupt run manifest {path}: {exc}")


def acquire_lock(run_dir):
    logger.debug("acquiring lock...")
    lock = lockfile.FileLock(str(Path(run_dir) / LOCK_NAME))
    try:
        lock.acquire(get_setting("CARL_LOCK_WAIT_TIMEOUT", -1))
    except lockfile.AlreadyLocked:
        raise RunLockedError(f"{run_dir} is locked by another run")
    except lockfile.LockTimeout:
        raise RunLockedError(f"waiting for the lock on {run_dir} timed out")
    logger.debug("acquired.")
    return lock


def release_lock(lock):
    logger.debug("releasing lock...")
    lock.release()
    logger.debug("released.")


@contextlib.contextmanager
def run_lock(run_dir):
    if not get_setting("CARL_USE_FILE_LOCK", True):
        yield None
        return
    lock = acquire_lock(run_dir)
    try:
        yield lock
    finally:
        release_lock(lock)


def experiment_identity(config, trainer):
    """
    The config and resolved trainer settings a run directory is bound to.
    ``total_iterations`` is left out so a finished run can be extended.
    """
    config = {key: value for key, value in config.items() if key not in ("seeds", "output_dir", "trainer")}
    trainer = {key: value for key, value in trainer.items() if key != "total_iterations"}
    return json.loads(json.dumps({"config": config, "trainer": trainer}, sort_keys=True))


def _changed_keys(old, new):
    changed = []
    for section in ("config", "trainer"):
        for key in sorted(set(old[section]) | set(new[section])):
            if old[section].get(key) != new[section].get(key):
                changed.append(key if section == "config" else f"trainer.{key}")
    return changed


def check_same_experiment(run_dir, config, cfg):
    """
    Refuse to reuse ``run_dir`` for anything but the experiment recorded in
    its manifest.
    """
    if not (Path(run_dir) / MANIFEST_FILE).exists():
        return
    previous = read_manifest(run_dir)
    old = experiment_identity(previous.get("config", {}), previous.get("trainer", {}))
    new = experiment_identity(config.as_dict(), cfg.as_dict())
    if old != new:
        raise ConfigError(
            f"{run_dir} holds a different experiment ({', '.join(_changed_keys(old, new))} changed); "
            "set output_dir to train it elsewhere or remove the directory"
        )


def _check_checkpoint_settings(state, cfg):
    old = experiment_identity({}, state.cfg.as_dict())
    new = experiment_identity({}, cfg.as_dict())
    if old != new:
        raise ConfigError(f"checkpoint was trained with other settings ({', '.join(_changed_keys(old, new))})")


def _clear_outputs(run_dir):
    for name in (METRICS_FILE, FAILED_FILE, EVALUATION_FILE):
        (run_dir / name).unlink(missing_ok=True)
    shutil.rmtree(run_dir / CHECKPOINT_DIR, ignore_errors=True)


def cmd_train(config, seed, root=None, resume=False):
    """
    Train one seed of ``config`` into its run directory and return the
    directory. With ``resume`` the run continues from its checkpoint and
    metrics rows written after it are dropped.
    """
    run_dir = run_directory(config, seed, root)
    run_dir.mkdir(parents=True, exist_ok=True)
    with run_lock(run_dir):
        env = make_environment(config.env, seed=seed, **config.env_options)
        spec = problem_spec(config, env)
        cfg = trainer_config(config, seed)
        checkpoint_dir = run_dir / CHECKPOINT_DIR
        metrics_path = run_dir / METRICS_FILE

        check_same_experiment(run_dir, config, cfg)
        state = None
        if resume:
            state = load_checkpoint(checkpoint_dir, spec, env)
            if state.algorithm.value != config.algo:
                raise ConfigError(f"checkpoint was trained with {state.algorithm.value}, config asks for {config.algo}")
            _check_checkpoint_settings(state, cfg)
            # a resumed run may be extended past its original length
            state.cfg = replace(state.cfg, total_iterations=cfg.total_iterations)
            if metrics_path.exists():
                truncate_metrics(metrics_path, state.iteration)
            (run_dir / FAILED_FILE).unlink(missing_ok=True)
        else:
            _clear_outputs(run_dir)
        write_manifest(run_dir, config, seed, cfg)
        writer = MetricsWriter(metrics_path, spec.constraint_names)

        try:
            result = train(
                env,
                spec,
                cfg,
                config.algo,
                state=state,
                metrics=writer,
                checkpoint=lambda s: save_checkpoint(checkpoint_dir, s, env),
            )
        except TrainingFault as fault:
            (run_dir / FAILED_FILE).write_text(
                f"iteration: {fault.iteration}\n"
                f"category: {fault.category}\n"
                f"error: {type(fault.cause).__name__}: {fault.cause}\n"
                f"checkpoint: {fault.checkpoint_iteration}\n"
            )
            raise
        save_checkpoint(checkpoint_dir, result.state, env)
    logger.info(
        "run finished",
        extra={"run_dir": str(run_dir), "iterations": result.state.iteration, "rows": len(result.rows)},
    )
    return run_dir


def cmd_train_all(config, seeds=None, root=None, resume=False):
    return [cmd_train(config, seed, root, resume) for seed in (seeds or config.seeds)]


def cmd_eval(run_dir, episodes, seed=None):
    """
    Evaluate the checkpoint in ``run_dir`` and write evaluation.json next to
    it. The default seed is the one training evaluations use.
    """
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    config = parse_config(manifest["config"], source=str(run_dir / MANIFEST_FILE))
    env = make_environment(config.env, seed=manifest["seed"], **config.env_options)
    spec = problem_spec(config, env)
    state = load_checkpoint(run_dir / CHECKPOINT_DIR, spec, env)
    if seed is None:
        seed = manifest["seed"] + EVAL_SEED_OFFSET
    eval_env = make_environment(config.env, **config.env_options)
    report = evaluate(state, eval_env, episodes, seed)
    path = run_dir / EVALUATION_FILE
    payload = {
        "run_hash": manifest["run_hash"],
        "iteration": state.iteration,
        "episodes": episodes,
        "seed": seed,
        "rows": report.rows,
        "summary": report.summary,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    logger.info("evaluation written to %s", path, extra={"episodes": episodes, "iteration": state.iteration})
    return path


def cmd_plot(run_dirs, metric, out, group=False):
    from carl.plots import plot_runs

    return plot_runs(run_dirs, metric, out, group=group)
