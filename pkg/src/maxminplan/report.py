"""CSV and figure output for experiment records.

Every run directory holds ``rewards.csv`` (one row per timestep and agent),
``meta.json`` (schema version and run metadata) and ``worst.svg``. The
comparison directory holds ``summary.csv`` and ``overlay.svg``.

CSV schema, version 1::

    timestep,agent,reward,cumulative,worst_flag

``timestep`` starts at 0, ``agent`` is the 1-based label, ``cumulative`` is
the discounted running sum and ``worst_flag`` is 1 on the agent(s) holding
the minimum reward of that timestep.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .game import agent_label  # noqa: E402
from .harness import RunRecord, steady_state  # noqa: E402

SCHEMA_VERSION = 1
CSV_COLUMNS = ("timestep", "agent", "reward", "cumulative", "worst_flag")
SUMMARY_COLUMNS = ("algorithm", "topology", "seed", "horizon", "worst_cumulative",
                   "final_worst", "steady_state_worst", "wall_clock_s", "locality_violations")
FIG_FORMAT = "svg"
# keep svg output byte-stable across runs
plt.rcParams["svg.hashsalt"] = "maxminplan"
plt.rcParams["svg.fonttype"] = "none"

_STYLE = {
    "proposed": dict(color="tab:blue"),
    "pomcpow_baseline": dict(color="tab:orange"),
    "rollout_baseline": dict(color="tab:green"),
    "optimal": dict(color="black", linestyle="--"),
}


def _ensure_dir(out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc.strerror}") from exc
    return out


def write_csv(record: RunRecord, path) -> None:
    cum = record.cumulative
    worst = record.worst
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for t in range(record.horizon):
            for i in range(record.n_agents):
                r = record.rewards[t, i]
                w.writerow((t, agent_label(i), repr(float(r)), repr(float(cum[t, i])), int(r == worst[t])))


def read_csv(path) -> dict:
    """Load a rewards CSV into ``rewards``/``cumulative``/``worst_flag`` arrays of shape (T, N)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {k: np.zeros((0, 0)) for k in ("rewards", "cumulative", "worst_flag")}
    T = max(int(r["timestep"]) for r in rows) + 1
    N = max(int(r["agent"]) for r in rows)
    out = {k: np.zeros((T, N)) for k in ("rewards", "cumulative", "worst_flag")}
    for r in rows:
        t, i = int(r["timestep"]), int(r["agent"]) - 1
        out["rewards"][t, i] = float(r["reward"])
        out["cumulative"][t, i] = float(r["cumulative"])
        out["worst_flag"][t, i] = int(r["worst_flag"])
    return out


def summary_row(record: RunRecord) -> dict:
    return {
        "algorithm": record.algorithm,
        "topology": record.topology_name,
        "seed": record.seed,
        "horizon": record.horizon,
        "worst_cumulative": record.worst_cumulative,
        "final_worst": float(record.worst[-1]) if record.horizon else 0.0,
        "steady_state_worst": steady_state(record),
        "wall_clock_s": float(np.sum(record.wall_clock)),
        "locality_violations": len(record.audit),
    }


def plot_worst(record: RunRecord, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(record.horizon), record.worst, **_STYLE.get(record.algorithm, {}))
    ax.set_xlabel("timestep")
    ax.set_ylabel("worst-agent reward")
    ax.set_title(f"{record.algorithm}, {record.topology_name}, seed {record.seed}")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format=FIG_FORMAT, metadata={"Date": None})
    plt.close(fig)


def plot_overlay(records: list[RunRecord], path) -> None:
    """Worst-agent reward of every record on one axis.

    An ``optimal`` record is drawn as a horizontal line at its steady-state
    value, which is what the online methods should approach.
    """
    fig, ax = plt.subplots(figsize=(7, 4))
    for rec in records:
        label = f"{rec.algorithm} (seed {rec.seed})"
        style = _STYLE.get(rec.algorithm, {})
        if rec.algorithm == "optimal":
            ax.axhline(steady_state(rec), label=f"optimal steady state (seed {rec.seed})", **style)
        else:
            ax.plot(np.arange(rec.horizon), rec.worst, label=label, alpha=0.85, **style)
    ax.set_xlabel("timestep")
    ax.set_ylabel("worst-agent reward")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format=FIG_FORMAT, metadata={"Date": None})
    plt.close(fig)


def write_run(record: RunRecord, out) -> dict[str, Path]:
    """CSV, metadata and worst-agent plot for one record."""
    out = _ensure_dir(out)
    paths = {"csv": out / "rewards.csv", "meta": out / "meta.json", "plot": out / f"worst.{FIG_FORMAT}"}
    write_csv(record, paths["csv"])
    meta = {"schema_version": SCHEMA_VERSION, "columns": list(CSV_COLUMNS), "gamma": record.gamma,
            **summary_row(record)}
    paths["meta"].write_text(json.dumps(meta, indent=2) + "\n")
    plot_worst(record, paths["plot"])
    return paths


def report(records: list[RunRecord], out) -> dict[str, Path]:
    """Per-record output in ``out/<algorithm>-<topology>-s<seed>/`` plus an overlay."""
    if not records:
        raise ValueError("report needs at least one record")
    out = _ensure_dir(out)
    written: dict[str, Path] = {}
    for rec in records:
        sub = out / f"{rec.algorithm}-{rec.topology_name}-s{rec.seed}"
        for k, p in write_run(rec, sub).items():
            written[f"{sub.name}/{k}"] = p
    written["summary"] = out / "summary.csv"
    with open(written["summary"], "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS)
        w.writeheader()
        for rec in records:
            w.writerow(summary_row(rec))
    written["overlay"] = out / f"overlay.{FIG_FORMAT}"
    plot_overlay(records, written["overlay"])
    return written


def load_run(run_dir) -> RunRecord:
    """Rebuild a (rewards-only) record from a run directory."""
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "meta.json").read_text())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{run_dir}: unsupported schema version {meta.get('schema_version')}")
    data = read_csv(run_dir / "rewards.csv")
    T, N = data["rewards"].shape
    return RunRecord(meta["algorithm"], int(meta["seed"]), meta["topology"], float(meta["gamma"]),
                     data["rewards"], np.zeros((T, N, 2)), np.zeros((T + 1, N, 2)),
                     np.full(T, meta["wall_clock_s"] / max(T, 1)), [None] * meta["locality_violations"])
