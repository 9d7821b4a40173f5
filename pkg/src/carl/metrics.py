"""
Metrics rows and their comma-separated persistence. A metrics file has a
fixed header chosen when the run starts; rows are only ever appended.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from carl.exceptions import StructuralError

logger = logging.getLogger(__name__)

LEADING_COLUMNS = ["iteration", "episode", "episode_return"]
TRAILING_COLUMNS = ["critic_loss", "policy_loss", "temperature", "eval_task_metric"]


def metric_columns(constraint_names):
    return (
        LEADING_COLUMNS
        + [f"constraint_return_{name}" for name in constraint_names]
        + [f"lambda_{name}" for name in constraint_names]
        + TRAILING_COLUMNS
    )


def format_value(value):
    if isinstance(value, (bool, int)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    # repr is the shortest text that parses back to the same float
    return repr(value)


@dataclass
class MetricsRow:
    iteration: int
    episode: int
    episode_return: float
    constraint_returns: dict = field(default_factory=dict)
    lambdas: dict = field(default_factory=dict)
    critic_loss: float = math.nan
    policy_loss: float = math.nan
    temperature: float = math.nan
    eval_task_metric: float = math.nan

    def as_record(self):
        record = {
            "iteration": self.iteration,
            "episode": self.episode,
            "episode_return": self.episode_return,
        }
        record.update({f"constraint_return_{name}": value for name, value in self.constraint_returns.items()})
        record.update({f"lambda_{name}": value for name, value in self.lambdas.items()})
        record.update(
            {
                "critic_loss": self.critic_loss,
                "policy_loss": self.policy_loss,
                "temperature": self.temperature,
                "eval_task_metric": self.eval_task_metric,
            }
        )
        return record


class MetricsWriter:
    """
    Appends rows to ``path``. A new file gets the header; an existing one must
    already carry exactly ``columns``.
    """

    def __init__(self, path, constraint_names):
        self.path = Path(path)
        self.columns = metric_columns(constraint_names)
        self.last_iteration = -1
        if self.path.exists() and self.path.stat().st_size:
            header, rows = read_metrics(self.path)
            if header != self.columns:
                raise StructuralError(f"{self.path} has columns {header}, expected {self.columns}")
            if rows:
                self.last_iteration = int(rows[-1]["iteration"])
        else:
            with open(self.path, "w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(self.columns)

    def write(self, row):
        record = row.as_record()
        if sorted(record) != sorted(self.columns):
            raise StructuralError(f"row columns {sorted(record)} do not match {self.path}")
        if row.iteration < self.last_iteration:
            raise StructuralError(f"iteration {row.iteration} written after {self.last_iteration}")
        with open(self.path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow([format_value(record[c]) for c in self.columns])
        self.last_iteration = row.iteration

    __call__ = write


def read_metrics(path):
    """
    Returns ``(header, rows)`` with every value parsed as a float.
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise StructuralError(f"{path} is empty")
        rows = []
        for number, values in enumerate(reader, start=2):
            if len(values) != len(header):
                raise StructuralError(f"{path}:{number} has {len(values)} fields, header has {len(header)}")
            rows.append({column: float(value) for column, value in zip(header, values)})
    return header, rows


def truncate_metrics(path, iteration):
    """
    Drop rows written after ``iteration``, for resuming from a checkpoint.
    """
    path = Path(path)
    lines = path.read_text().splitlines(keepends=True)
    header, rows = read_metrics(path)
    kept = [line for line, row in zip(lines[1:], rows) if row["iteration"] <= iteration]
    dropped = len(rows) - len(kept)
    if dropped:
        logger.info("discarding %s metrics rows after iteration %s", dropped, iteration)
    path.write_text("".join(lines[:1] + kept))
    return dropped
