"""
Learning-curve charts from run directories: an SVG line chart plus the
resampled table it was drawn from.
"""

import csv
import logging
from collections import Counter, OrderedDict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from carl.exceptions import ConfigError  # noqa: E402
from carl.metrics import format_value, read_metrics  # noqa: E402

logger = logging.getLogger(__name__)


def metric_column(metric):
    """
    ``episode-return`` and ``episode_return`` name the same column.
    """
    return metric.replace("-", "_")


def _load_run(run_dir, column):
    from carl.runner import METRICS_FILE, read_manifest

    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    header, rows = read_metrics(run_dir / METRICS_FILE)
    if column not in header:
        raise ConfigError(f"{run_dir / METRICS_FILE} has no column {column!r}, available: {', '.join(header)}")
    iterations = np.array([row["iteration"] for row in rows])
    values = np.array([row[column] for row in rows])
    return {
        "label": f"{manifest['config']['algo']} seed {manifest['seed']}",
        "experiment": run_dir.parent.name,
        "group": manifest["config"]["algo"],
        "run_hash": manifest["run_hash"],
        "iterations": iterations,
        "values": values,
    }


def _unique_labels(runs):
    """
    Runs sharing an algorithm and seed get their experiment directory
    appended to the label, and a counter if that still collides.
    """
    counts = Counter(run["label"] for run in runs)
    for run in runs:
        if counts[run["label"]] > 1:
            run["label"] = f"{run['label']} ({run['experiment']})"
    seen = Counter()
    for run in runs:
        seen[run["label"]] += 1
        if seen[run["label"]] > 1:
            run["label"] = f"{run['label']} #{seen[run['label']]}"
    return runs


def resample(runs):
    """
    Every run interpolated onto the union of their iterations; NaN outside a
    run's own range.
    """
    grid = np.unique(np.concatenate([run["iterations"] for run in runs]))
    table = OrderedDict(iteration=grid)
    for run in runs:
        if len(run["iterations"]):
            values = np.interp(grid, run["iterations"], run["values"], left=np.nan, right=np.nan)
        else:
            values = np.full(len(grid), np.nan)
        table[run["label"]] = values
    return table


def group_bands(runs, table):
    groups = OrderedDict()
    for run in runs:
        groups.setdefault(run["group"], []).append(table[run["label"]])
    bands = OrderedDict()
    with np.errstate(all="ignore"):
        for name, columns in groups.items():
            stacked = np.vstack(columns)
            bands[name] = {
                "mean": np.nanmean(stacked, axis=0),
                "min": np.nanmin(stacked, axis=0),
                "max": np.nanmax(stacked, axis=0),
            }
    return bands


def write_table(path, table, bands=None):
    columns = list(table)
    series = [table[c] for c in columns]
    for name, band in (bands or {}).items():
        for stat in ("mean", "min", "max"):
            columns.append(f"{name}_{stat}")
            series.append(band[stat])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for i in range(len(series[0])):
            writer.writerow([format_value(s[i]) for s in series])


def plot_runs(run_dirs, metric, out, group=False):
    """
    Draw ``metric`` for every run in ``run_dirs`` into the SVG ``out``; with
    ``group`` runs sharing an algorithm collapse into a mean line with a
    min-max band. The table lands next to it with a .csv suffix.
    """
    run_dirs = list(run_dirs)
    if not run_dirs:
        raise ConfigError("no runs to plot")
    column = metric_column(metric)
    runs = _unique_labels([_load_run(run_dir, column) for run_dir in run_dirs])
    table = resample(runs)
    bands = group_bands(runs, table) if group else None

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    grid = table["iteration"]
    if group:
        for name, band in bands.items():
            (line,) = ax.plot(grid, band["mean"], label=name)
            ax.fill_between(grid, band["min"], band["max"], color=line.get_color(), alpha=0.25, linewidth=0)
    else:
        for run in runs:
            ax.plot(grid, table[run["label"]], label=run["label"])
    ax.set_xlabel("iteration")
    ax.set_ylabel(column)
    ax.legend()
    fig.tight_layout()

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    provenance = "runs: " + ", ".join(run["run_hash"] for run in runs)
    fig.savefig(out, format="svg", metadata={"Description": provenance, "Date": None})
    plt.close(fig)
    table_path = out.with_suffix(".csv")
    write_table(table_path, table, bands)
    logger.info("plotted %s for %s runs to %s", column, len(runs), out)
    return out
