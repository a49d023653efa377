"""Run orchestration, metric files and plot tables.

Output directory layout for a run of policy P with N servers::

    config_P_nN.cfg        effective configuration (loadable with --config)
    metrics_P_nN.csv       one record per report window (training)
    episodes_P_nN.csv      one record per episode (training)
    eval_P_nN.csv          one record per report window (evaluation)
    checkpoint_P_nN.bin    network parameters
    audit_P_nN.csv         per-task constraint log, with --audit
"""
from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config
from .nn import load_checkpoint, save_checkpoint
from .training import EpisodeStats, Runner, TrainingDiverged

log = logging.getLogger(__name__)

HEADER = ("episode", "reward", "energy_j", "latency_eq10_s", "latency_total_s", "completion_rate",
          "cum_objective")
METRICS = HEADER[1:6]


@dataclass(frozen=True)
class MetricRecord:
    episode: int
    reward: float
    energy_j: float
    latency_eq10_s: float
    latency_total_s: float
    completion_rate: float
    cum_objective: float

    def row(self) -> list[str]:
        return [str(self.episode)] + [_num(getattr(self, k)) for k in HEADER[1:]]


def _num(x: float) -> str:
    return repr(float(x))


def summarize(window: list[EpisodeStats], cum_objective: float) -> MetricRecord:
    gen = sum(s.generated for s in window)
    return MetricRecord(
        episode=window[-1].episode + 1,
        reward=float(np.mean([s.reward for s in window])),
        energy_j=float(np.mean([s.energy_j for s in window])),
        latency_eq10_s=float(np.mean([s.latency_eq10_s for s in window])),
        latency_total_s=float(np.mean([s.latency_total_s for s in window])),
        completion_rate=sum(s.completed for s in window) / gen if gen else 0.0,
        cum_objective=cum_objective,
    )


class MetricWriter:
    """Append-only CSV writer, flushed after every record."""

    def __init__(self, path: Path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(HEADER)
        self._fh.flush()
        self.count = 0

    def write(self, rec: MetricRecord):
        self._w.writerow(rec.row())
        self._fh.flush()
        self.count += 1

    def close(self):
        self._fh.close()


def stem(cfg: RunConfig) -> str:
    return f"{cfg.policy}_n{cfg.env.n_servers}"


def run(cfg: RunConfig, mode: str = "train") -> dict[str, Path]:
    """Train (or evaluate) one configuration; returns the files written."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    name = stem(cfg)
    paths = {"config": out / f"config_{name}.cfg", "checkpoint": out / f"checkpoint_{name}.bin"}
    paths["config"].write_text(dump_config(cfg))
    runner = Runner(cfg)
    learn = mode == "train"
    if not learn and paths["checkpoint"].exists() and runner.kind.learns:
        runner.load_arrays(load_checkpoint(paths["checkpoint"]))
    if learn:
        paths["metrics"] = out / f"metrics_{name}.csv"
        paths["episodes"] = out / f"episodes_{name}.csv"
    else:
        paths["metrics"] = out / f"eval_{name}.csv"
    writer = MetricWriter(paths["metrics"])
    ep_writer = MetricWriter(paths["episodes"]) if learn else None
    window: list[EpisodeStats] = []
    cum = 0.0

    def on_episode(s: EpisodeStats):
        nonlocal cum
        cum += s.cost
        window.append(s)
        if ep_writer is not None:
            ep_writer.write(summarize([s], cum))
        if len(window) == cfg.report_stride:
            writer.write(summarize(window, cum))
            window.clear()

    try:
        runner.run(cfg.episodes, learn=learn, explore=learn, callback=on_episode)
        if window:
            writer.write(summarize(window, cum))
    except TrainingDiverged:
        log.error("run %s diverged; metrics up to the last report are kept in %s", name, paths["metrics"])
        raise
    finally:
        writer.close()
        if ep_writer is not None:
            ep_writer.close()
    if learn:
        save_checkpoint(paths["checkpoint"], runner.checkpoint_arrays())
    if cfg.audit:
        paths["audit"] = out / f"{'' if learn else 'eval_'}audit_{name}.csv"
        write_audit(paths["audit"], runner)
    return paths


def write_audit(path: Path, runner: Runner):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("episode", "slot", "device", "completed", "violations"))
        for r in runner.audit_rows:
            w.writerow((r.episode, r.slot, r.device, int(r.completed),
                        ";".join(f"{v.rule}:{v.index}" for v in r.violations)))


def sweep(cfg: RunConfig, mode: str = "train", jobs: int = 1) -> list[dict[str, Path]]:
    configs = [cfg.replace(n_servers=n) for n in cfg.sweep_servers]
    if jobs <= 1:
        return [run(c, mode) for c in configs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(run, configs, [mode] * len(configs)))


# ---- plot tables --------------------------------------------------------

_NAME = re.compile(r"^(metrics|episodes)_(?P<policy>[a-z]+)_n(?P<n>\d+)\.csv$")


class MetricFileError(ValueError):
    pass


def read_metrics(path: Path) -> dict[str, list[float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MetricFileError(f"{path}: empty file")
    header = rows[0]
    missing = [c for c in HEADER if c not in header]
    if missing:
        raise MetricFileError(f"{path}: missing column(s) {', '.join(missing)}")
    cols = {h: [] for h in header}
    for row in rows[1:]:
        for h, v in zip(header, row):
            cols[h].append(float(v))
    return cols


def _write_table(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def final_window_mean(values, window: int = 50) -> float:
    tail = list(values)[-window:]
    return float(sum(tail) / len(tail)) if tail else math.nan


def emit_plot_data(out_dir, final_window: int = 50) -> list[Path]:
    """Curve tables (episode vs metric, one column per policy) for each server count,
    and bar tables (servers vs final-window mean, one column per policy)."""
    out = Path(out_dir)
    found: dict[tuple[str, int], dict[str, Path]] = {}
    for p in sorted(out.glob("*.csv")):
        m = _NAME.match(p.name)
        if m:
            found.setdefault((m["policy"], int(m["n"])), {})[m.group(1)] = p
    found = {k: v for k, v in found.items() if "metrics" in v}
    if not found:
        raise MetricFileError(f"{out}: no metrics_*.csv files")
    policies = sorted({k[0] for k in found})
    servers = sorted({k[1] for k in found})
    data = {k: read_metrics(v["metrics"]) for k, v in found.items()}
    per_ep = {k: read_metrics(v["episodes"]) for k, v in found.items() if "episodes" in v}
    written = []
    for metric in METRICS:
        for n in servers:
            cols = [p for p in policies if (p, n) in data]
            episodes = sorted({int(e) for p in cols for e in data[(p, n)]["episode"]})
            lookup = {p: dict(zip(data[(p, n)]["episode"], data[(p, n)][metric])) for p in cols}
            rows = [[str(e)] + [_num(lookup[p][e]) if e in lookup[p] else "" for p in cols]
                    for e in episodes]
            path = out / f"curves_{metric}_n{n}.csv"
            _write_table(path, ["episode"] + cols, rows)
            written.append(path)
        rows = []
        for n in servers:
            row = [str(n)]
            for p in policies:
                src = per_ep.get((p, n))
                if src is None and (p, n) in data:
                    raise MetricFileError(f"{found[(p, n)]['metrics']}: no matching episodes_ file "
                                          "for the final-window mean")
                row.append(_num(final_window_mean(src[metric], final_window)) if src else "")
            rows.append(row)
        path = out / f"bars_{metric}.csv"
        _write_table(path, ["servers"] + policies, rows)
        written.append(path)
    return written
