"""Exploration data: step-attempt batches, 10 s grid, normalization, windows."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .reactor import (DEFAULT_MHAT, T_HAT_RANGE, TRAJECTORY_HEADER, Action, ReactorParams,
                      Recipe, read_trajectory_csv, run_batch, write_trajectory_csv)

GRID_SECONDS = 10
# per-series channel order on the grid (time column dropped)
CHANNELS = ("S", "That", "Mhat", "T", "M", "P", "UA", "Q")
STATE_CHANNELS = ("T", "M", "P", "UA", "Q")
ACTION_CHANNELS = ("That", "Mhat")
TEMPERATURE_CHANNELS = ("S", "That", "T")
CH = {name: i for i, name in enumerate(CHANNELS)}
STATE_IDX = [CH[c] for c in STATE_CHANNELS]
ACTION_IDX = [CH[c] for c in ACTION_CHANNELS]
SPLITS = ("train", "validation", "generalization")


class DegenerateChannel(ValueError):
    pass


@dataclass(frozen=True)
class StepAttemptPlan:
    recipe: Recipe
    step_time: float
    step_value: float

    def controller(self):
        S, t_step, value = self.recipe.setpoint, self.step_time, self.step_value

        def ctrl(history):
            # history[-1, 0] is the time at which the new action starts
            That = value if history[-1, 0] >= t_step else S
            return Action(That, DEFAULT_MHAT)
        return ctrl


def plan_exploration(n: int, master_seed: int, params: ReactorParams = ReactorParams()
                     ) -> List[StepAttemptPlan]:
    """Draw ``n`` step-attempt recipes: S, step value ~ U[352, 365] K, step time ~ U[100, 600] s."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(master_seed)
    lo, hi = T_HAT_RANGE
    plans = []
    for i in range(n):
        S = float(rng.uniform(lo, hi))
        step_time = float(rng.uniform(100.0, 600.0))
        step_value = float(rng.uniform(lo, hi))
        impurity = float(rng.uniform(params.impurity_min, params.impurity_max))
        seed = int(rng.integers(2**31 - 1))
        recipe = Recipe(setpoint=S, start_temp=params.start_temp, impurity=impurity, seed=seed)
        plans.append(StepAttemptPlan(recipe, step_time, step_value))
    return plans


def simulate_plan(plan: StepAttemptPlan, params: ReactorParams = ReactorParams()):
    return run_batch(plan.recipe, plan.controller(), params)


def resample_grid(trajectory: np.ndarray, grid: int = GRID_SECONDS) -> np.ndarray:
    """Every ``grid``-th row of a 1 s log, starting at t = 0."""
    trajectory = np.asarray(trajectory)
    if trajectory.ndim != 2 or len(trajectory) == 0:
        raise ValueError("empty trajectory")
    times = trajectory[:, 0]
    keep = np.isclose(np.mod(times, grid), 0.0) | np.isclose(np.mod(times, grid), grid)
    return trajectory[keep]


def to_series(trajectory_data: np.ndarray) -> np.ndarray:
    """Grid-resampled log -> (n, 8) array in ``CHANNELS`` order."""
    grid = resample_grid(trajectory_data)
    return grid[:, 1:1 + len(CHANNELS)].copy()


@dataclass
class NormalizationStats:
    mean: Dict[str, float]
    std: Dict[str, float]

    def __post_init__(self):
        for c in CHANNELS:
            if not self.std[c] > 0:
                raise DegenerateChannel(f"degenerate channel {c}")
        self._mu = np.array([self.mean[c] for c in CHANNELS])
        self._sd = np.array([self.std[c] for c in CHANNELS])

    def normalize(self, x, channel: str):
        return (x - self.mean[channel]) / self.std[channel]

    def denormalize(self, z, channel: str):
        return z * self.std[channel] + self.mean[channel]

    def normalize_series(self, series: np.ndarray) -> np.ndarray:
        return (series - self._mu) / self._sd

    def denormalize_series(self, z: np.ndarray) -> np.ndarray:
        return z * self._sd + self._mu

    def to_dict(self) -> dict:
        return {"channels": {c: {"mean": self.mean[c], "std": self.std[c]} for c in CHANNELS}}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        ch = d["channels"]
        return cls({c: float(ch[c]["mean"]) for c in CHANNELS},
                   {c: float(ch[c]["std"]) for c in CHANNELS})

    def __eq__(self, other):
        return (isinstance(other, NormalizationStats) and self.mean == other.mean
                and self.std == other.std)


def fit_normalization(series_set: Sequence[np.ndarray]) -> NormalizationStats:
    """Population mean/std per channel; S, T-hat and T share one pooled statistic."""
    data = np.concatenate([np.asarray(s) for s in series_set], axis=0)
    mean, std = {}, {}
    temp = data[:, [CH[c] for c in TEMPERATURE_CHANNELS]].ravel()
    for c in CHANNELS:
        col = temp if c in TEMPERATURE_CHANNELS else data[:, CH[c]]
        mu = float(np.mean(col))
        sd = float(np.std(col))
        if not sd > 1e-12 * max(1.0, abs(mu)):
            raise DegenerateChannel(f"degenerate channel {c}")
        mean[c], std[c] = mu, sd
    return NormalizationStats(mean, std)


@dataclass
class Window:
    history: np.ndarray          # (H, 7): states then actions
    future_actions: np.ndarray   # (F, 2)
    future_states: np.ndarray    # (F, 5)
    setpoint: float = 0.0        # normalized S of the series


@dataclass
class WindowBatch:
    """Stacked windows; indexing yields :class:`Window`."""
    history: np.ndarray
    future_actions: np.ndarray
    future_states: np.ndarray
    setpoint: np.ndarray
    context: Optional[np.ndarray] = None  # (n, H, 8) raw channel rows of the history

    def __len__(self):
        return len(self.history)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return Window(self.history[i], self.future_actions[i], self.future_states[i],
                          float(self.setpoint[i]))
        ctx = None if self.context is None else self.context[i]
        return WindowBatch(self.history[i], self.future_actions[i], self.future_states[i],
                           self.setpoint[i], ctx)

    @staticmethod
    def concat(batches: Sequence["WindowBatch"], H: int = 10, F: int = 10) -> "WindowBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return WindowBatch(np.zeros((0, H, 7)), np.zeros((0, F, 2)), np.zeros((0, F, 5)),
                               np.zeros(0), np.zeros((0, H, len(CHANNELS))))
        return WindowBatch(*(np.concatenate([getattr(b, k) for b in batches])
                             for k in ("history", "future_actions", "future_states",
                                       "setpoint", "context")))


def model_inputs(rows: np.ndarray) -> np.ndarray:
    """(…, 8) channel rows -> (…, 7) network inputs (states then actions)."""
    return np.concatenate([rows[..., STATE_IDX], rows[..., ACTION_IDX]], axis=-1)


def windowize(series: np.ndarray, H: int = 10, F: int = 10) -> WindowBatch:
    """All (history, future) windows of one normalized series.

    Anchor ``t`` uses rows ``t-H+1 .. t`` as history and rows ``t+1 .. t+F``
    as the targets and their actions.
    """
    series = np.asarray(series, dtype=np.float64)
    n = len(series) - H - F + 1
    if n <= 0:
        return WindowBatch.concat([], H, F)
    idx_h = np.arange(n)[:, None] + np.arange(H)[None, :]
    idx_f = np.arange(n)[:, None] + H + np.arange(F)[None, :]
    ctx = series[idx_h]
    fut = series[idx_f]
    return WindowBatch(history=model_inputs(ctx), future_actions=fut[..., ACTION_IDX],
                       future_states=fut[..., STATE_IDX], setpoint=ctx[:, -1, CH["S"]].copy(),
                       context=ctx)


def split_counts(n: int, ratios=(0.7, 0.2, 0.1)) -> List[int]:
    if n < 3:
        raise ValueError("need at least 3 series to split")
    counts = largest_remainder(n, ratios)
    # every split gets at least one series
    for i in range(len(counts)):
        if counts[i] == 0:
            j = int(np.argmax(counts))
            counts[j] -= 1
            counts[i] += 1
    return counts


def largest_remainder(n: int, ratios: Sequence[float]) -> List[int]:
    raw = [n * r / sum(ratios) for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    rem = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in rem[:n - sum(counts)]:
        counts[i] += 1
    return counts


def split(n_series: int, seed: int, ratios=(0.7, 0.2, 0.1)) -> List[str]:
    """Split labels per series index, assigned at series granularity."""
    counts = split_counts(n_series, ratios)
    order = np.random.default_rng(seed).permutation(n_series)
    labels = [""] * n_series
    pos = 0
    for name, c in zip(SPLITS, counts):
        for i in order[pos:pos + c]:
            labels[int(i)] = name
        pos += c
    return labels


@dataclass
class TransitionBatch:
    """Raw grid series with split tags and the stats fitted on the training split."""
    series: List[np.ndarray]
    labels: List[str]
    stats: NormalizationStats
    meta: dict = field(default_factory=dict)

    def normalized(self, i: int) -> np.ndarray:
        return self.stats.normalize_series(self.series[i])

    def indices(self, split_name: str) -> List[int]:
        return [i for i, l in enumerate(self.labels) if l == split_name]

    def windows(self, split_name: str, H: int = 10, F: int = 10) -> WindowBatch:
        return WindowBatch.concat([windowize(self.normalized(i), H, F)
                                   for i in self.indices(split_name)], H, F)

    def rewards(self, i: int) -> np.ndarray:
        z = self.normalized(i)
        return -(z[:, CH["S"]] - z[:, CH["T"]]) ** 2

    # -- on-disk layout -------------------------------------------------------
    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        entries = []
        for i, (s, label) in enumerate(zip(self.series, self.labels)):
            name = f"series_{i:03d}.csv"
            t = np.arange(len(s), dtype=np.float64)[:, None] * GRID_SECONDS
            write_trajectory_csv(os.path.join(directory, name), np.hstack([t, s]))
            entries.append({"file": name, "split": label, "rows": len(s)})
        manifest = {"grid_s": GRID_SECONDS, "series": entries, "meta": self.meta}
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(directory, "normalization.json"), "w") as fh:
            json.dump(self.stats.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "TransitionBatch":
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
        with open(os.path.join(directory, "normalization.json")) as fh:
            stats = NormalizationStats.from_dict(json.load(fh))
        series, labels = [], []
        for e in manifest["series"]:
            header, rows = read_trajectory_csv(os.path.join(directory, e["file"]))
            if header != TRAJECTORY_HEADER:
                raise ValueError(f"{e['file']}: unexpected header {header}")
            series.append(rows[:, 1:])
            labels.append(e["split"])
        return cls(series, labels, stats, manifest.get("meta", {}))


def build_dataset(n: int, master_seed: int, params: ReactorParams = ReactorParams(),
                  ratios=(0.7, 0.2, 0.1)) -> TransitionBatch:
    plans = plan_exploration(n, master_seed, params)
    series = [to_series(simulate_plan(p, params).data) for p in plans]
    labels = split(n, master_seed, ratios)
    stats = fit_normalization([s for s, l in zip(series, labels) if l == "train"])
    return TransitionBatch(series, labels, stats, {"n_recipes": n, "seed": master_seed})
