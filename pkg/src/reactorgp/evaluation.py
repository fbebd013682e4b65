"""Closed-loop comparison of a policy against the default T-hat = S controller."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import GRID_SECONDS, NormalizationStats
from .expr import Expr
from .fitness import PolicyBinding
from .reactor import (DEFAULT_MHAT, Action, ReactorParams, Recipe, SimulationDiverged,
                      Trajectory, default_controller, run_batch)

log = logging.getLogger(__name__)

EVAL_SETPOINTS = (352.0, 358.0, 362.0, 365.0)


def control_deviation(trajectory, S: float, from_feed_start: bool = True, dt: float = 1.0):
    """Integrated squared tracking error (K^2 s) and the matching RMSE (K).

    ``trajectory`` is a :class:`Trajectory` or an array whose first column is
    time and fifth column is T (the logged layout). With ``from_feed_start``
    the sum starts at the first sample with T >= S - 1 K.
    """
    data = trajectory.data if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    if len(data) == 0:
        raise ValueError("empty trajectory")
    T = data[:, 4]
    start = 0
    if from_feed_start:
        hit = np.nonzero(T >= S - 1.0)[0]
        start = int(hit[0]) if len(hit) else 0
    err = S - T[start:]
    integral = float(np.sum(err * err) * dt)
    rmse = math.sqrt(integral / (len(err) * dt))
    return integral, rmse


def policy_controller(expr: Expr, stats: NormalizationStats, grid: int = GRID_SECONDS):
    """Controller for :func:`run_batch` reading 10 s dead-time taps off the live log."""
    binding = PolicyBinding(expr, stats, grid=grid)

    def ctrl(history):
        rows = history[::grid, 1:9]  # grid samples up to now, channel order
        z = stats.normalize_series(rows)
        return Action(float(binding.setpoint(z)), DEFAULT_MHAT)
    return ctrl


@dataclass
class SetpointResult:
    setpoint: float
    dev_default: float = math.nan
    dev_policy: float = math.nan
    rmse_default: float = math.nan
    rmse_policy: float = math.nan
    reduction_pct: float = math.nan
    status: str = "ok"
    traj_default: Optional[Trajectory] = None
    traj_policy: Optional[Trajectory] = None


@dataclass
class EvalReport:
    results: List[SetpointResult] = field(default_factory=list)

    @property
    def mean_reduction(self) -> float:
        vals = [r.reduction_pct for r in self.results if r.status == "ok"]
        return float(np.mean(vals)) if vals else math.nan

    def reduction(self, S: float) -> float:
        for r in self.results:
            if r.setpoint == S:
                return r.reduction_pct
        raise KeyError(S)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["setpoint", "dev_default", "dev_policy", "rmse_default", "rmse_policy",
                        "reduction_pct", "status"])
            for r in self.results:
                w.writerow([format(r.setpoint, ".17g")] +
                           [format(v, ".17g") for v in (r.dev_default, r.dev_policy,
                                                        r.rmse_default, r.rmse_policy,
                                                        r.reduction_pct)] + [r.status])

    def summary(self) -> str:
        lines = ["setpoint_K  dev_default_K2s  dev_policy_K2s  rmse_default_K  rmse_policy_K  reduction_%",
                 "-" * 86]
        for r in self.results:
            if r.status != "ok":
                lines.append(f"{r.setpoint:10.1f}  {r.status}")
                continue
            lines.append(f"{r.setpoint:10.1f}  {r.dev_default:15.2f}  {r.dev_policy:14.2f}  "
                         f"{r.rmse_default:14.4f}  {r.rmse_policy:13.4f}  {r.reduction_pct:11.2f}")
        lines.append("-" * 86)
        lines.append(f"mean reduction: {self.mean_reduction:.2f} %")
        return "\n".join(lines) + "\n"

    def dump_trajectories(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        for r in self.results:
            tag = format(r.setpoint, "g")
            if r.traj_default is not None:
                r.traj_default.to_csv(os.path.join(directory, f"traj_{tag}_default.csv"))
            if r.traj_policy is not None:
                r.traj_policy.to_csv(os.path.join(directory, f"traj_{tag}_policy.csv"))


def reduction_pct(dev_default: float, dev_policy: float) -> float:
    if not dev_default > 0:
        return math.nan
    return 100.0 * (dev_default - dev_policy) / dev_default


def evaluate_pair(expr: Expr, stats: NormalizationStats, params: ReactorParams = ReactorParams(),
                  setpoints: Sequence[float] = EVAL_SETPOINTS, seed: int = 0,
                  from_feed_start: bool = True, grid: int = GRID_SECONDS) -> EvalReport:
    """Run default and candidate on identical recipes at each setpoint."""
    report = EvalReport()
    for i, S in enumerate(setpoints):
        recipe = Recipe.sampled(S, int(np.random.SeedSequence([seed, i]).generate_state(1)[0]),
                                params)
        res = SetpointResult(float(S))
        try:
            td = run_batch(recipe, default_controller(recipe), params, control_period=grid)
            tp = run_batch(recipe, policy_controller(expr, stats, grid), params, control_period=grid)
        except (SimulationDiverged, ValueError, FloatingPointError) as exc:
            log.warning("setpoint %s failed: %s", S, exc)
            res.status = "failed"
            report.results.append(res)
            continue
        res.traj_default, res.traj_policy = td, tp
        res.dev_default, res.rmse_default = control_deviation(td, S, from_feed_start, params.dt)
        res.dev_policy, res.rmse_policy = control_deviation(tp, S, from_feed_start, params.dt)
        res.reduction_pct = reduction_pct(res.dev_default, res.dev_policy)
        report.results.append(res)
    return report
