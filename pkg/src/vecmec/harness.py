"""Experiment orchestration: single runs, parameter sweeps and their output files."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agents import MADDPGOffloader, MultihopGreedyPolicy, SingleHopPolicy
from .config import POLICIES, ScenarioConfig
from .env import OffloadingEnv

EVAL_SEED_BASE = 1_000_000  # evaluation episodes never reuse a training seed
METRIC_COLUMNS = ("slot", "generated_bits", "completed_bits", "expired_bits", "success_rate")
AXES = {
    "beta": "beta",
    "mds": "n_devices",
    "vehicles": "n_vehicles",
    "servers": "n_servers",
    "I": "n_devices",
    "N": "n_vehicles",
    "J": "n_servers",
}


def make_policy(cfg: ScenarioConfig, log_path=None):
    if cfg.policy == "maddpg":
        return MADDPGOffloader.from_config(cfg, log_path=log_path)
    if cfg.policy == "single_hop":
        return SingleHopPolicy()
    if cfg.policy == "multihop_greedy":
        return MultihopGreedyPolicy()
    raise ValueError(f"unknown policy {cfg.policy!r}")


@dataclass
class RunReport:
    """Evaluation rows plus their summary.

    ``rows`` holds one dict per evaluated slot; ``slot`` counts on across
    evaluation episodes. ``generated_tasks`` / ``completed_tasks`` per row let
    the summary be recomputed.
    """

    config: dict
    config_hash: str
    seed: int
    policy: str
    rows: list = field(default_factory=list)
    throughput: float = 0.0  # bit per slot
    success_rate: float = 1.0
    wall_clock_s: float = 0.0

    @staticmethod
    def summarize(rows) -> tuple[float, float]:
        if not rows:
            return 0.0, 1.0
        thr = float(np.mean([r["completed_bits"] for r in rows]))
        gen = sum(r["generated_tasks"] for r in rows)
        done = sum(r["completed_tasks"] for r in rows)
        return thr, (done / gen if gen else 1.0)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def read_json(cls, path) -> "RunReport":
        with open(path) as fh:
            return cls(**json.load(fh))

    def write_metrics_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_COLUMNS)
            for r in self.rows:
                w.writerow([r["slot"]] + [repr(float(r[c])) for c in METRIC_COLUMNS[1:]])


def evaluate(env: OffloadingEnv, policy, episodes: int) -> list[dict]:
    """Run ``episodes`` noise-free episodes and collect per-slot ledger rows."""
    T = env.config.n_slots
    rows = []
    for k in range(episodes):
        env.reset(seed=EVAL_SEED_BASE + k)
        done = False
        while not done:
            done = env.step(policy.act(env, explore=False)).done
        for r in env.ledger.rows:
            row = dataclasses.asdict(r)
            row["slot"] = k * T + r.slot
            rows.append(row)
    return rows


def run_experiment(cfg: ScenarioConfig, out_dir=None, ckpt_dir=None) -> RunReport:
    """Train (learned policy only), evaluate with exploration off, and report.

    With ``out_dir`` the report JSON, metric CSV and (for the learned policy)
    the training log are written there.
    """
    cfg = cfg.validate()
    t0 = time.perf_counter()
    log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if cfg.policy == "maddpg":
            log_path = os.path.join(out_dir, "train_log.csv")
    env = OffloadingEnv(cfg)
    policy = make_policy(cfg, log_path).fit(env)
    if ckpt_dir is not None and cfg.policy == "maddpg":
        policy.save(ckpt_dir)
    rows = evaluate(env, policy, cfg.eval_episodes)
    thr, sr = RunReport.summarize(rows)
    report = RunReport(cfg.to_dict(), cfg.digest(), cfg.seed, cfg.policy, rows, thr, sr)
    report.wall_clock_s = time.perf_counter() - t0
    if out_dir is not None:
        report.write_json(os.path.join(out_dir, "report.json"))
        report.write_metrics_csv(os.path.join(out_dir, "metrics.csv"))
    return report


# ---- sweeps ----------------------------------------------------------------
@dataclass
class SweepCell:
    x: float
    policy: str
    mean: float
    stderr: float
    n: int
    metric: str = "throughput"


def _stderr(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0


def _cell_job(args):
    cfg, = args
    rep = run_experiment(cfg)
    return rep.throughput, rep.success_rate


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("VECMEC_THREADS", "1")))
    except ValueError:
        return 1


def run_sweep(axis, values, base: ScenarioConfig, repeats=1, policies=POLICIES) -> dict[str, list[SweepCell]]:
    """Mean and standard error per (value, policy) for throughput and success rate.

    Repeat ``r`` uses seed ``base.seed + r``. Cells run in up to
    ``VECMEC_THREADS`` worker processes.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {sorted(AXES)}")
    if not len(values):
        raise ValueError("values must be non-empty")
    name = AXES[axis]
    cast = float if name == "beta" else int
    jobs = [
        (cast(v), p, base.replace(**{name: cast(v)}, policy=p, seed=base.seed + r))
        for v in values
        for p in policies
        for r in range(repeats)
    ]
    workers = min(max_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_cell_job, [(c,) for _, _, c in jobs]))
    else:
        results = [_cell_job((c,)) for _, _, c in jobs]
    table = {"throughput": [], "success_rate": []}
    for v in values:
        for p in policies:
            got = [res for (x, q, _), res in zip(jobs, results) if x == cast(v) and q == p]
            for k, metric in enumerate(("throughput", "success_rate")):
                vals = [g[k] for g in got]
                table[metric].append(SweepCell(cast(v), p, float(np.mean(vals)), _stderr(vals), len(vals), metric))
    return table


def emit_plot_data(cells, path) -> str | None:
    """Write ``x,policy,mean,stderr`` rows; nothing is written for an empty table."""
    cells = list(cells)
    if not cells:
        return None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "policy", "mean", "stderr"])
        for c in cells:
            w.writerow([repr(c.x), c.policy, repr(c.mean), repr(c.stderr)])
    return path


def read_plot_data(path) -> list[tuple[float, str, float, float]]:
    with open(path, newline="") as fh:
        return [(float(r["x"]), r["policy"], float(r["mean"]), float(r["stderr"])) for r in csv.DictReader(fh)]
