"""Multi-seed orchestration and CSV reporting for training runs and sweeps."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from dgae import approx
from dgae._io import atomic_write_text, read_csv, write_csv
from dgae.advantage import GaeParams
from dgae.agents import train_seed
from dgae.config import ExperimentConfig, serialize_config

logger = logging.getLogger(__name__)

CURVE_HEADER = ["seed", "timesteps", "mean_return", "std_return"]
AGGREGATE_HEADER = ["timesteps", "mean_over_seeds", "std_over_seeds"]
DIAG_HEADER = ["iter", "timesteps", "policy_loss", "value_loss", "mean_advantage", "mean_return_eval"]
SUMMARY_HEADER = ["gamma", "lambda", "final_mean_return"]


def curve_path(out_dir, seed) -> Path:
    return Path(out_dir) / f"curve_seed_{seed}.csv"


def _write_curve(out_dir, seed, curve):
    rows = [(seed, ts, float(m), float(s)) for ts, m, s in curve]
    write_csv(curve_path(out_dir, seed), CURVE_HEADER, rows)


def run_seed(config: ExperimentConfig, seed: int, out_dir) -> Path:
    """Train one seed, streaming diagnostics and curve CSVs into ``out_dir``.

    Each CSV is rewritten atomically after every update, so a crash leaves the
    rows written so far intact.
    """
    out_dir = Path(out_dir)
    diag_rows = []

    def on_update(row, run):
        diag_rows.append([row[k] if k in ("iter", "timesteps") else float(row[k]) for k in DIAG_HEADER])
        write_csv(out_dir / f"diagnostics_seed_{seed}.csv", DIAG_HEADER, diag_rows)
        if not np.isnan(row["mean_return_eval"]):
            _write_curve(out_dir, seed, run.curve)

    run = train_seed(config, seed, on_update=on_update)
    _write_curve(out_dir, seed, run.curve)
    approx.save_checkpoint(out_dir / "checkpoints" / f"seed_{seed}.npz",
                           run.learner.policy, run.learner.value,
                           extra={"seed": seed, "algorithm": config.agent.algorithm})
    return curve_path(out_dir, seed)


def aggregate_curves(paths) -> list:
    """Mean and population std across seeds at each evaluation timestep.

    Pure function of the per-seed CSVs, so it can be recomputed offline.
    """
    paths = list(paths)
    series = {}
    for p in paths:
        header, rows = read_csv(p)
        if header != CURVE_HEADER:
            raise ValueError(f"{p}: unexpected header {header}")
        for row in rows:
            series.setdefault(int(row[1]), []).append(float(row[2]))
    n = len(paths)
    out = []
    for ts in sorted(series):
        vals = np.array(series[ts])
        if vals.size != n:
            raise ValueError(f"timestep {ts} is missing from some seeds")
        out.append((ts, float(vals.mean()), float(vals.std())))
    return out


def write_aggregate(out_dir, seeds) -> Path:
    out_dir = Path(out_dir)
    rows = aggregate_curves([curve_path(out_dir, s) for s in seeds])
    path = out_dir / "aggregate.csv"
    write_csv(path, AGGREGATE_HEADER, rows)
    return path


def run_train(config: ExperimentConfig, out_dir=None, seeds=None, jobs=1) -> Path:
    """Train every seed and write curve, aggregate and checkpoint artifacts."""
    config.validate_budget()
    out_dir = Path(out_dir or config.output_dir)
    seeds = list(seeds) if seeds is not None else list(config.seeds)
    config = replace(config, seeds=seeds, output_dir=str(out_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "config.txt", serialize_config(config))
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_seed, config, s, out_dir) for s in seeds]
            for f in futures:
                f.result()
    else:
        for s in seeds:
            run_seed(config, s, out_dir)
    return write_aggregate(out_dir, seeds)


def _cell_name(gamma, lam) -> str:
    return f"gamma_{gamma!r}_lambda_{lam!r}"


def run_sweep(config: ExperimentConfig, gammas, lambdas, out_dir=None, seeds=None, jobs=1) -> Path:
    """Train every (gamma, lambda) cell and write ``summary.csv``."""
    out_dir = Path(out_dir or config.output_dir)
    rows = []
    for gamma in gammas:
        for lam in lambdas:
            agent = replace(config.agent, gae=GaeParams(float(gamma), float(lam)))
            cell = replace(config, agent=agent)
            agg = run_train(cell, out_dir / _cell_name(gamma, lam), seeds=seeds, jobs=jobs)
            _, agg_rows = read_csv(agg)
            final = float(agg_rows[-1][1]) if agg_rows else float("nan")
            rows.append((float(gamma), float(lam), final))
            logger.info("gamma=%s lambda=%s final mean return %.4f", gamma, lam, final)
    path = out_dir / "summary.csv"
    write_csv(path, SUMMARY_HEADER, rows)
    return path


def run_eval(config: ExperimentConfig, checkpoint, episodes=10, seed=0):
    from dgae.agents import evaluate_policy
    from dgae.envs import make_env

    policy, _, _ = approx.load_checkpoint(checkpoint)
    env = make_env(config.env_name, **config.env_params)
    return evaluate_policy(env, lambda obs: approx.action_mean(policy, obs), episodes=episodes, seed=seed)
