"""Recurrent multi-step dynamics model trained with an overshooting loss.

The past branch consumes (state, action) rows; the future branch sees only
the actions (state inputs are zero) and emits one state prediction per step.
Both branches share the cell weights. The output head predicts the
displacement from the last observed state, so every forecast is
``s_t + head(h)``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import _rnn
from .data import (ACTION_IDX, CH, CHANNELS, STATE_IDX, NormalizationStats, TransitionBatch,
                   WindowBatch, model_inputs)

log = logging.getLogger(__name__)

N_STATE = 5
N_ACTION = 2


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, curve=None):
        super().__init__(msg)
        self.curve = curve


@dataclass
class SurrogateModel:
    theta: np.ndarray
    hidden: Tuple[int, int] = (20, 20)
    H: int = 10
    F: int = 10
    stats: Optional[NormalizationStats] = None

    @property
    def dims(self):
        return (N_STATE + N_ACTION, self.hidden[0], self.hidden[1], N_STATE)

    @property
    def n_params(self) -> int:
        return _rnn.param_count(*self.dims)

    def params(self):
        """Named views (W1, U1, b1, W2, U2, b2, Wo, bo) into ``theta``."""
        return _rnn.unpack(self.theta, *self.dims)

    def with_theta(self, theta) -> "SurrogateModel":
        return SurrogateModel(np.asarray(theta, dtype=np.float64).copy(), self.hidden,
                              self.H, self.F, self.stats)

    # -- checkpoint ------------------------------------------------------------
    def save(self, path) -> None:
        doc = {
            "architecture": {"cell": "tanh-rnn", "hidden": list(self.hidden), "H": self.H,
                             "F": self.F, "inputs": N_STATE + N_ACTION, "outputs": N_STATE},
            "theta": [format(float(v), ".17g") for v in self.theta],
            "normalization": None if self.stats is None else self.stats.to_dict(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path, expected_stats: Optional[NormalizationStats] = None) -> "SurrogateModel":
        with open(path) as fh:
            doc = json.load(fh)
        arch = doc["architecture"]
        stats = None
        if doc.get("normalization") is not None:
            stats = NormalizationStats.from_dict(doc["normalization"])
        if expected_stats is not None and stats != expected_stats:
            raise ValueError("checkpoint normalization does not match the dataset statistics")
        model = cls(np.array([float(v) for v in doc["theta"]]), tuple(arch["hidden"]),
                    int(arch["H"]), int(arch["F"]), stats)
        if len(model.theta) != model.n_params:
            raise ValueError("checkpoint parameter count does not match its architecture")
        return model


def init(seed: int, scale: float = 1.0, hidden=(20, 20), H: int = 10, F: int = 10,
         stats: Optional[NormalizationStats] = None) -> SurrogateModel:
    """Uniform init in +-scale/sqrt(fan_in) per layer, biases included."""
    if not scale >= 0:
        raise ValueError("scale must be non-negative")
    dims = (N_STATE + N_ACTION, hidden[0], hidden[1], N_STATE)
    rng = np.random.default_rng(seed)
    fan_in = [dims[0], dims[1], dims[1], dims[1], dims[2], dims[2], dims[2], dims[2]]
    chunks = []
    for shape, fi in zip(_rnn.param_shapes(*dims), fan_in):
        bound = scale / math.sqrt(fi)
        chunks.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
    return SurrogateModel(np.concatenate(chunks), tuple(hidden), H, F, stats)


def _sequence(history, future_actions):
    """Stack history rows and action-only future rows into network inputs."""
    B, F = future_actions.shape[0], future_actions.shape[1]
    fut = np.zeros((B, F, N_STATE + N_ACTION))
    fut[..., N_STATE:] = future_actions
    return np.concatenate([history, fut], axis=1)


def forward(model: SurrogateModel, history, future_actions) -> np.ndarray:
    """Predict the next ``len(future_actions)`` states.

    ``history`` is (H, 7) or (B, H, 7); ``future_actions`` is (F, 2) or (B, F, 2).
    """
    history = np.asarray(history, dtype=np.float64)
    future_actions = np.asarray(future_actions, dtype=np.float64)
    single = history.ndim == 2
    if single:
        history, future_actions = history[None], future_actions[None]
    if history.ndim != 3 or history.shape[1:] != (model.H, N_STATE + N_ACTION):
        raise ValueError(f"history must be (H={model.H}, 7), got {history.shape[-2:]}")
    if (future_actions.ndim != 3 or future_actions.shape[2] != N_ACTION
            or future_actions.shape[0] != history.shape[0] or future_actions.shape[1] < 1):
        raise ValueError(f"future actions must be (F, 2), got {future_actions.shape}")
    F = future_actions.shape[1]
    y = _rnn.forward(model.theta, _sequence(history, future_actions), F, model.dims)
    y += history[:, -1:, :N_STATE]
    return y[0] if single else y


def loss_and_grad(model: SurrogateModel, batch: WindowBatch):
    """Mean squared overshooting error over windows, steps and channels, and its gradient."""
    if len(batch) == 0:
        raise ValueError("empty minibatch")
    X = _sequence(batch.history, batch.future_actions)
    target = batch.future_states - batch.history[:, -1:, :N_STATE]
    loss, grad = _rnn.loss_and_grad(model.theta, X, target, model.dims)
    if not math.isfinite(loss):
        raise TrainingDiverged("training diverged")
    return loss, grad


def mse(model: SurrogateModel, batch: WindowBatch, chunk: int = 4096) -> float:
    if len(batch) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(batch), chunk):
        b = batch[i:i + chunk]
        y = forward(model, b.history, b.future_actions)
        total += float(np.sum((y - b.future_states) ** 2))
    return total / (len(batch) * model.F * N_STATE)


def step_errors(model: SurrogateModel, batch: WindowBatch, channel: str = "T") -> np.ndarray:
    """Mean absolute error of one state channel at each forecast step."""
    k = ("T", "M", "P", "UA", "Q").index(channel)
    y = forward(model, batch.history, batch.future_actions)
    return np.mean(np.abs(y[..., k] - batch.future_states[..., k]), axis=0)


@dataclass
class TrainingConfig:
    episodes: int = 300
    learning_rate: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 32
    clip_norm: float = 5.0
    seed: int = 0
    hidden: Tuple[int, int] = (20, 20)
    H: int = 10
    F: int = 10
    init_scale: float = 1.0

    def __post_init__(self):
        if self.episodes < 0 or self.batch_size < 1:
            raise ValueError("episodes must be >= 0 and batch_size >= 1")
        if not (self.learning_rate > 0 and self.clip_norm > 0 and 0 <= self.momentum < 1):
            raise ValueError("learning rate, clip norm must be positive; momentum in [0, 1)")
        self.hidden = tuple(self.hidden)

    def lr_at(self, episode: int) -> float:
        if self.episodes == 0:
            return self.learning_rate
        return self.learning_rate * 0.5 ** min(2, (3 * episode) // self.episodes)


@dataclass
class LearningCurve:
    episode: List[int] = field(default_factory=list)
    train: List[float] = field(default_factory=list)
    validation: List[float] = field(default_factory=list)
    generalization: List[float] = field(default_factory=list)

    def record(self, episode, tr, va, ge):
        self.episode.append(episode)
        self.train.append(tr)
        self.validation.append(va)
        self.generalization.append(ge)

    def __len__(self):
        return len(self.episode)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("episode,train,validation,generalization\n")
            for row in zip(self.episode, self.train, self.validation, self.generalization):
                fh.write(f"{row[0]},{row[1]:.17g},{row[2]:.17g},{row[3]:.17g}\n")


def train(dataset: TransitionBatch, config: TrainingConfig = TrainingConfig(),
          progress: Optional[Callable[[int, float, float], None]] = None):
    """Minibatch SGD with momentum; returns the best-validation model and the curve."""
    H, F = config.H, config.F
    splits = {s: dataset.windows(s, H, F) for s in ("train", "validation", "generalization")}
    if any(len(w) == 0 for w in splits.values()):
        raise ValueError("dataset needs windows in all three splits")
    tr = splits["train"]
    model = init(config.seed, config.init_scale, config.hidden, H, F, dataset.stats)
    rng = np.random.default_rng(config.seed + 1)
    curve = LearningCurve()

    def evaluate(m, episode, train_loss=None):
        # after episode 0 the train entry is the mean minibatch loss of the episode
        if train_loss is None:
            train_loss = mse(m, tr)
        vals = [train_loss] + [mse(m, splits[s]) for s in ("validation", "generalization")]
        if not all(math.isfinite(v) for v in vals):
            raise TrainingDiverged("training diverged", curve)
        curve.record(episode, *vals)
        return vals[1]

    best_val = evaluate(model, 0)
    best_theta = model.theta.copy()
    theta = model.theta.copy()
    velocity = np.zeros_like(theta)
    n = len(tr)
    for ep in range(config.episodes):
        lr = config.lr_at(ep)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            mb = tr[order[start:start + config.batch_size]]
            try:
                loss, g = loss_and_grad(model.with_theta(theta), mb)
            except TrainingDiverged as exc:
                raise TrainingDiverged(str(exc), curve) from None
            total += loss * len(mb)
            norm = float(np.sqrt(g @ g))
            if norm > config.clip_norm:
                g *= config.clip_norm / norm
            velocity = config.momentum * velocity - lr * g
            theta = theta + velocity
        val = evaluate(model.with_theta(theta), ep + 1, total / n)
        if progress is not None:
            progress(ep + 1, curve.train[-1], val)
        if val < best_val:
            best_val = val
            best_theta = theta.copy()
    return model.with_theta(best_theta), curve


# ---------------------------------------------------------------------------
# closed-loop rollouts

@dataclass
class RolloutTrace:
    states: np.ndarray    # (B, T, 5) predicted, normalized
    actions: np.ndarray   # (B, T, 2) applied, normalized
    rewards: np.ndarray   # (B, T)


Policy = Callable[[np.ndarray], np.ndarray]


def rollout(model: SurrogateModel, history: np.ndarray, policy: Policy, horizon: int
            ) -> RolloutTrace:
    """Closed-loop simulation on the model.

    ``history`` holds (B, n >= H, 8) normalized channel rows (``CHANNELS``
    order). At each step the policy maps the rolling history (start rows plus
    every prediction so far) to normalized model actions (B, 2). The model
    then continues its future branch: the H rows before the branch start go
    through the past branch and all actions chosen since feed the future
    branch, whose last output is the next state. This is the mode the model
    was trained in. Once the branch would exceed F steps its start slides
    forward, so the past branch then also sees earlier predictions. The new
    row (S, action, prediction) is appended and rewarded with -(S - T)^2.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    hist = np.asarray(history, dtype=np.float64)
    if hist.ndim == 2:
        hist = hist[None]
    if hist.shape[1] < model.H or hist.shape[2] != len(CHANNELS):
        raise ValueError("history must be (B, >= H, 8)")
    B, n0, _ = hist.shape
    rows = np.empty((B, n0 + horizon, len(CHANNELS)))
    rows[:, :n0] = hist
    states = np.empty((B, horizon, N_STATE))
    actions = np.empty((B, horizon, N_ACTION))
    rewards = np.empty((B, horizon))
    n1, n2 = model.hidden
    window = model_inputs(rows[:, n0 - model.H:n0])
    h1, h2 = np.zeros((B, n1)), np.zeros((B, n2))
    for t in range(model.H):
        h1, h2, _ = _rnn.cell_step(model.theta, window[:, t], h1, h2, model.dims)
    x = np.zeros((B, N_STATE + N_ACTION))
    for k in range(horizon):
        cur = n0 + k
        a = np.asarray(policy(rows[:, :cur]), dtype=np.float64).reshape(B, N_ACTION)
        rows[:, cur, ACTION_IDX] = a
        if k < model.F:
            # carry the future branch one more step
            x[:, N_STATE:] = a
            h1, h2, y = _rnn.cell_step(model.theta, x, h1, h2, model.dims)
            s_next = y + window[:, -1, :N_STATE]
        else:
            start = n0 + k - model.F + 1
            past = model_inputs(rows[:, start - model.H:start])
            s_next = forward(model, past, rows[:, start:cur + 1][:, :, ACTION_IDX])[:, -1, :]
        rows[:, cur, CH["S"]] = rows[:, cur - 1, CH["S"]]
        rows[:, cur, STATE_IDX] = s_next
        states[:, k] = s_next
        actions[:, k] = a
        rewards[:, k] = -(rows[:, cur, CH["S"]] - s_next[:, 0]) ** 2
    return RolloutTrace(states, actions, rewards)
