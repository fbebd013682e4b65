"""Model-based policy scoring: closed-loop rollouts on the surrogate."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import CH, GRID_SECONDS, NormalizationStats, TransitionBatch
from .expr import Expr, eval_expr, variables
from .reactor import DEFAULT_MHAT, T_HAT_RANGE, Action
from .surrogate import SurrogateModel, rollout

log = logging.getLogger(__name__)

WORST_FITNESS = float("-inf")


def reward(S_norm, T_norm):
    return -(S_norm - T_norm) ** 2


@dataclass
class PolicyBinding:
    """An expression wired up as a T-hat controller on normalized variables."""
    expr: Expr
    stats: NormalizationStats
    mhat: float = DEFAULT_MHAT
    bounds: tuple = T_HAT_RANGE
    grid: int = GRID_SECONDS
    monomer_target: float = 9.0

    def __post_init__(self):
        self._taps = variables(self.expr)

    def lagged_values(self, history: np.ndarray) -> dict:
        """Bindings from normalized channel rows (…, n, 8); lags clamp to the oldest row."""
        n = history.shape[-2]
        out = {}
        for name, lag in self._taps:
            row = max(n - 1 - lag // self.grid, 0)
            out[(name, lag)] = history[..., row, CH[name]]
        return out

    def setpoint(self, history: np.ndarray):
        """Clipped T-hat in kelvin for each history in the batch."""
        z = eval_expr(self.expr, self.lagged_values(history))
        z = np.broadcast_to(np.asarray(z, dtype=np.float64), history.shape[:-2])
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("policy produced non-finite output")
        return np.clip(self.stats.denormalize(z, "That"), *self.bounds)

    def model_action(self, history: np.ndarray) -> np.ndarray:
        """Normalized (T-hat, applied feed) inputs for the surrogate.

        The feed follows the recipe logic: it is on once the reactor has
        reached S - 1 K (or was already on) and until the fed mass, read off
        M + P, reaches the monomer target.
        """
        s = self.stats
        That = self.setpoint(history)
        last = history[..., -1, :]
        S = s.denormalize(last[..., CH["S"]], "S")
        T = s.denormalize(last[..., CH["T"]], "T")
        fed = s.denormalize(last[..., CH["M"]], "M") + s.denormalize(last[..., CH["P"]], "P")
        was_on = np.any(s.denormalize(history[..., CH["Mhat"]], "Mhat") > 1e-9, axis=-1)
        started = was_on | (T >= S - 1.0)
        feed = np.where(started & (fed < self.monomer_target), self.mhat, 0.0)
        return np.stack([s.normalize(That, "That"), s.normalize(feed, "Mhat")], axis=-1)


def policy_action(binding: PolicyBinding, history: np.ndarray) -> Action:
    """Action for a single normalized history (n, 8)."""
    return Action(float(binding.setpoint(np.asarray(history))), binding.mhat)


@dataclass
class FitnessSpec:
    start_states: np.ndarray   # (B, H, 8) normalized channel rows
    horizon: int = 10
    gamma: float = 1.0

    def __post_init__(self):
        if len(self.start_states) < 1 or self.horizon < 1 or not 0 <= self.gamma <= 1:
            raise ValueError("need >= 1 start state, horizon >= 1 and 0 <= gamma <= 1")


def select_start_states(dataset: TransitionBatch, n: int, seed: int, H: int = 10,
                        split: str = "train") -> np.ndarray:
    """``n`` histories of length H from one split, drawn without replacement."""
    contexts = []
    for i in dataset.indices(split):
        z = dataset.normalized(i)
        for t in range(H - 1, len(z)):
            contexts.append(z[t - H + 1:t + 1])
    if not contexts:
        raise ValueError(f"no {split} history windows available")
    contexts = np.stack(contexts)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(contexts), size=min(n, len(contexts)), replace=False))
    return contexts[idx]


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    disc = gamma ** np.arange(rewards.shape[-1])
    return rewards @ disc


def estimate_return(binding: PolicyBinding, model: SurrogateModel, spec: FitnessSpec) -> float:
    """Mean over start states of the discounted horizon-T return on the model."""
    try:
        trace = rollout(model, spec.start_states, binding.model_action, spec.horizon)
        value = float(np.mean(discounted_returns(trace.rewards, spec.gamma)))
    except (FloatingPointError, ValueError, OverflowError) as exc:
        log.debug("rollout failed: %s", exc)
        return WORST_FITNESS
    if not math.isfinite(value):
        return WORST_FITNESS
    return value


class ModelFitness:
    """Picklable ``Expr -> average return`` callable for the GA."""

    def __init__(self, model: SurrogateModel, stats: NormalizationStats, spec: FitnessSpec,
                 monomer_target: float = 9.0):
        self.model = model
        self.stats = stats
        self.spec = spec
        self.monomer_target = monomer_target

    def __call__(self, expr: Expr) -> float:
        binding = PolicyBinding(expr, self.stats, monomer_target=self.monomer_target)
        return estimate_return(binding, self.model, self.spec)


def choose_policy(front, score, max_complexity: int):
    """Front entry with complexity <= ``max_complexity`` maximizing ``score(expr)``.

    ``score`` is typically the model return on held-out start states, which
    guards against picking the level that overfits the evolution states.
    Ties go to the simpler policy.
    """
    cands = [f for f in front if f[0] <= max_complexity]
    if not cands:
        raise ValueError(f"no front policy with complexity <= {max_complexity}")
    scored = [(score(e), c, p, e) for c, p, e in cands]
    best = max(scored, key=lambda t: (t[0], -t[1]))
    return best[1], best[2], best[3], best[0]
