"""Desk-scale semi-batch polymerization reactor with an inner PI(D) loop.

Lumped balances::

    dM/dt   = feed - k(T) M
    dP/dt   = k(T) M
    C dT/dt = Q + UA (Tj - T),        Q = dH k(T) M
    dTj/dt  = (jacket_cmd - Tj) / jacket_lag
    dUA/dt  = -fouling_rate k(T) M UA  (floored at ua_floor)

The PID runs once per integration step (1 s) and its jacket command is held
over the RK4 step. Trajectories are logged on the 1 s grid; the action columns
of row ``t`` hold the setpoints that were in force over the second ending at
``t`` (row 0 carries the default action), and ``Mhat`` is the feed actually
applied after the recipe's feeding logic.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from ._accel import maybe_njit

T_HAT_RANGE = (352.0, 365.0)
M_HAT_RANGE = (0.005, 0.015)
DEFAULT_MHAT = 0.015
MAX_BATCH_DURATION = 2400.0

TRAJECTORY_HEADER = ("time_s", "S", "That", "Mhat", "T", "M", "P", "UA", "Q")
# full log layout; the CSV export keeps the first nine columns
LOG_COLUMNS = TRAJECTORY_HEADER + ("Tj", "fed")


class SimulationDiverged(RuntimeError):
    pass


class InvalidAction(ValueError):
    pass


@dataclass(frozen=True)
class ReactorParams:
    rate_ref: float = 0.002
    activation_ratio: float = 7217.0
    reaction_heat: float = 1500.0
    heat_capacity: float = 600.0
    jacket_lag: float = 40.0
    jacket_cmd_min: float = 280.0
    jacket_cmd_max: float = 420.0
    fouling_rate: float = 0.01
    ua_init: float = 1.0
    ua_floor: float = 0.2
    pid_kp: float = 8.0
    pid_ki: float = 0.05
    pid_kd: float = 0.0
    integrator_clamp: float = 400.0
    dt: float = 1.0
    monomer_target: float = 9.0
    start_temp: float = 345.0
    impurity_min: float = 0.8
    impurity_max: float = 1.2

    def __post_init__(self):
        positive = ("rate_ref", "activation_ratio", "reaction_heat", "heat_capacity",
                    "jacket_lag", "ua_init", "ua_floor", "dt", "monomer_target",
                    "start_temp", "integrator_clamp")
        for name in positive:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        for name in ("fouling_rate", "pid_kp", "pid_ki", "pid_kd"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.jacket_cmd_min < self.jacket_cmd_max:
            raise ValueError("jacket_cmd_min must be below jacket_cmd_max")
        if not self.ua_floor < self.ua_init:
            raise ValueError("ua_floor must be below ua_init")
        if not 0 <= self.impurity_min <= self.impurity_max:
            raise ValueError("bad impurity range")

    @property
    def impurity_range(self):
        return (self.impurity_min, self.impurity_max)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ReactorParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown reactor parameter(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    @classmethod
    def from_json(cls, text: str) -> "ReactorParams":
        return cls.from_dict(json.loads(text))

    def as_array(self) -> np.ndarray:
        return np.array([self.rate_ref, self.activation_ratio, self.reaction_heat,
                         self.heat_capacity, self.jacket_lag, self.jacket_cmd_min,
                         self.jacket_cmd_max, self.fouling_rate, self.ua_init,
                         self.ua_floor, self.pid_kp, self.pid_ki, self.pid_kd,
                         self.integrator_clamp, self.monomer_target], dtype=np.float64)


# indices into ReactorParams.as_array()
_RATE, _EA, _DH, _CAP, _LAG, _CMIN, _CMAX, _FOUL, _UA0, _UAF, _KP, _KI, _KD, _ICLAMP, _TARGET = range(15)

# indices into the packed state vector
(IX_TIME, IX_T, IX_M, IX_P, IX_UA, IX_Q, IX_TJ, IX_FED,
 IX_INT, IX_PREV, IX_FEEDING) = range(11)
STATE_SIZE = 11


@dataclass
class ReactorState:
    time: float
    T: float
    M: float
    P: float
    UA: float
    Q: float
    Tj: float
    fed: float = 0.0
    pid_integral: float = 0.0
    prev_error: float = 0.0
    feeding_started: bool = False

    @classmethod
    def initial(cls, params: ReactorParams, start_temp: Optional[float] = None):
        T0 = params.start_temp if start_temp is None else start_temp
        return cls(time=0.0, T=T0, M=0.0, P=0.0, UA=params.ua_init, Q=0.0, Tj=T0)

    def to_array(self) -> np.ndarray:
        return np.array([self.time, self.T, self.M, self.P, self.UA, self.Q, self.Tj,
                         self.fed, self.pid_integral, self.prev_error,
                         1.0 if self.feeding_started else 0.0])

    @classmethod
    def from_array(cls, x) -> "ReactorState":
        return cls(time=float(x[IX_TIME]), T=float(x[IX_T]), M=float(x[IX_M]),
                   P=float(x[IX_P]), UA=float(x[IX_UA]), Q=float(x[IX_Q]),
                   Tj=float(x[IX_TJ]), fed=float(x[IX_FED]),
                   pid_integral=float(x[IX_INT]), prev_error=float(x[IX_PREV]),
                   feeding_started=bool(x[IX_FEEDING] > 0.5))


@dataclass(frozen=True)
class Action:
    That: float
    Mhat: float = DEFAULT_MHAT

    def clipped(self) -> "Action":
        return Action(min(max(self.That, T_HAT_RANGE[0]), T_HAT_RANGE[1]),
                      min(max(self.Mhat, 0.0), M_HAT_RANGE[1]))

    def is_finite(self) -> bool:
        return math.isfinite(self.That) and math.isfinite(self.Mhat)


@dataclass(frozen=True)
class Recipe:
    setpoint: float
    start_temp: float = 345.0
    max_duration: float = MAX_BATCH_DURATION
    impurity: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not T_HAT_RANGE[0] <= self.setpoint <= T_HAT_RANGE[1]:
            raise ValueError(f"intended setpoint {self.setpoint} outside {T_HAT_RANGE}")
        if not 0 < self.max_duration <= MAX_BATCH_DURATION:
            raise ValueError("max_duration must be in (0, 2400] s")
        if not self.impurity >= 0:
            raise ValueError("impurity factor must be non-negative")

    @classmethod
    def sampled(cls, setpoint, seed, params: ReactorParams = ReactorParams(), **kw):
        """Recipe whose impurity factor is drawn from ``params.impurity_range``."""
        rng = np.random.default_rng(seed)
        impurity = float(rng.uniform(params.impurity_min, params.impurity_max))
        kw.setdefault("start_temp", params.start_temp)
        return cls(setpoint=float(setpoint), impurity=impurity, seed=int(seed), **kw)


# ---------------------------------------------------------------------------
# kernels (jitted when numba is on)

@maybe_njit
def _rate(T, impurity, p):
    return impurity * p[_RATE] * np.exp(p[_EA] * (1.0 / 360.0 - 1.0 / T))


@maybe_njit
def _pid(error, integral, prev_error, T, p, dt):
    integral = integral + error * dt
    clamp = p[_ICLAMP]
    if integral > clamp:
        integral = clamp
    elif integral < -clamp:
        integral = -clamp
    deriv = (error - prev_error) / dt
    cmd = T + p[_KP] * error + p[_KI] * integral + p[_KD] * deriv
    if cmd < p[_CMIN]:
        cmd = p[_CMIN]
    elif cmd > p[_CMAX]:
        cmd = p[_CMAX]
    return cmd, integral


@maybe_njit
def _deriv(T, M, UA, Tj, feed, cmd, impurity, p, out):
    k = _rate(T, impurity, p)
    r = k * M
    out[0] = (p[_DH] * r + UA * (Tj - T)) / p[_CAP]
    out[1] = feed - r
    out[2] = r
    out[3] = -p[_FOUL] * r * UA if UA > p[_UAF] else 0.0
    out[4] = (cmd - Tj) / p[_LAG]
    out[5] = feed


@maybe_njit
def _step(x, That, Mhat, impurity, p, dt):
    """Advance the packed state ``x`` by one PID update and one RK4 step.

    Returns the new state and the feed rate actually applied.
    """
    T = x[IX_T]
    error = That - T
    cmd, integral = _pid(error, x[IX_INT], x[IX_PREV], T, p, dt)

    feed = 0.0
    if x[IX_FEEDING] > 0.5 and x[IX_FED] < p[_TARGET]:
        feed = min(Mhat, (p[_TARGET] - x[IX_FED]) / dt)
        if feed < 0.0:
            feed = 0.0

    y0 = np.empty(6)
    y0[0] = x[IX_T]
    y0[1] = x[IX_M]
    y0[2] = x[IX_P]
    y0[3] = x[IX_UA]
    y0[4] = x[IX_TJ]
    y0[5] = x[IX_FED]
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    y = np.empty(6)
    _deriv(y0[0], y0[1], y0[3], y0[4], feed, cmd, impurity, p, k1)
    for i in range(6):
        y[i] = y0[i] + 0.5 * dt * k1[i]
    _deriv(y[0], y[1], y[3], y[4], feed, cmd, impurity, p, k2)
    for i in range(6):
        y[i] = y0[i] + 0.5 * dt * k2[i]
    _deriv(y[0], y[1], y[3], y[4], feed, cmd, impurity, p, k3)
    for i in range(6):
        y[i] = y0[i] + dt * k3[i]
    _deriv(y[0], y[1], y[3], y[4], feed, cmd, impurity, p, k4)
    for i in range(6):
        y[i] = y0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])

    out = x.copy()
    out[IX_TIME] = x[IX_TIME] + dt
    out[IX_T] = y[0]
    out[IX_M] = max(y[1], 0.0)
    out[IX_P] = max(y[2], x[IX_P])
    ua = min(y[3], x[IX_UA])
    out[IX_UA] = max(ua, p[_UAF])
    out[IX_TJ] = y[4]
    out[IX_FED] = y[5]
    out[IX_INT] = integral
    out[IX_PREV] = error
    out[IX_Q] = p[_DH] * _rate(y[0], impurity, p) * out[IX_M]
    return out, feed


@maybe_njit
def _run_interval(x, That, Mhat, S, impurity, p, dt, n_steps, max_time, done_mass, log, row):
    """Integrate up to ``n_steps`` steps with a held action, logging each.

    Stops early on termination. Returns (state, rows_written, status) with
    status 0 = running, 1 = terminated, -1 = diverged.
    """
    written = 0
    for _ in range(n_steps):
        x, feed = _step(x, That, Mhat, impurity, p, dt)
        if x[IX_FEEDING] < 0.5 and x[IX_T] >= S - 1.0:
            x[IX_FEEDING] = 1.0
        r = row + written
        log[r, 0] = x[IX_TIME]
        log[r, 1] = S
        log[r, 2] = That
        log[r, 3] = feed
        log[r, 4] = x[IX_T]
        log[r, 5] = x[IX_M]
        log[r, 6] = x[IX_P]
        log[r, 7] = x[IX_UA]
        log[r, 8] = x[IX_Q]
        log[r, 9] = x[IX_TJ]
        log[r, 10] = x[IX_FED]
        written += 1
        for i in range(STATE_SIZE):
            if not np.isfinite(x[i]):
                return x, written, -1
        if x[IX_P] >= done_mass or x[IX_TIME] >= max_time - 1e-9:
            return x, written, 1
    return x, written, 0


# ---------------------------------------------------------------------------
# public API

def reaction_rate(T: float, impurity: float, params: ReactorParams) -> float:
    if not math.isfinite(T) or T <= 0:
        raise ValueError(f"invalid temperature: {T}")
    return float(_rate(float(T), float(impurity), params.as_array()))


def pid_step(error: float, integral: float, prev_error: float, T: float,
             params: ReactorParams, dt: float):
    """One PID update. Returns ``(jacket_cmd, new_integral)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    cmd, integral = _pid(float(error), float(integral), float(prev_error), float(T),
                         params.as_array(), float(dt))
    return float(cmd), float(integral)


def step(state: ReactorState, action: Action, params: ReactorParams,
         dt: Optional[float] = None, impurity: float = 1.0) -> ReactorState:
    dt = params.dt if dt is None else dt
    x = state.to_array()
    if not np.all(np.isfinite(x)):
        raise SimulationDiverged("simulation diverged")
    a = action.clipped()
    out, _ = _step(x, a.That, a.Mhat, float(impurity), params.as_array(), float(dt))
    if not np.all(np.isfinite(out)):
        raise SimulationDiverged("simulation diverged")
    return ReactorState.from_array(out)


@dataclass
class Trajectory:
    """1 s log of one batch; ``data`` columns follow ``LOG_COLUMNS``."""
    data: np.ndarray
    recipe: Recipe
    terminated: str = "completed"
    feed_start_time: Optional[float] = None

    def __len__(self):
        return len(self.data)

    def column(self, name: str) -> np.ndarray:
        return self.data[:, LOG_COLUMNS.index(name)]

    @property
    def duration(self) -> float:
        return float(self.data[-1, 0])

    def to_csv(self, path) -> None:
        write_trajectory_csv(path, self.data[:, :len(TRAJECTORY_HEADER)])


def write_trajectory_csv(path, rows: np.ndarray, header=TRAJECTORY_HEADER) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format(float(v), ".17g") for v in row])


def read_trajectory_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        rows = [[float(v) for v in line] for line in r]
    return header, np.array(rows, dtype=np.float64).reshape(-1, len(header))


Controller = Callable[[np.ndarray], Action]


def default_controller(recipe: Recipe) -> Controller:
    """T-hat = S with full monomer feed."""
    return lambda history: Action(recipe.setpoint, DEFAULT_MHAT)


def run_batch(recipe: Recipe, controller: Controller, params: ReactorParams = ReactorParams(),
              control_period: int = 1) -> Trajectory:
    """Simulate one batch from ``recipe.start_temp`` until completion.

    ``controller`` receives the log so far (rows of ``LOG_COLUMNS``) and returns
    an :class:`Action`, which is held for ``control_period`` integration steps.
    The batch ends when polymer reaches 95 % of the monomer target or at
    ``recipe.max_duration``.
    """
    if control_period < 1:
        raise ValueError("control_period must be >= 1")
    p = params.as_array()
    dt = params.dt
    n_max = int(math.ceil(recipe.max_duration / dt)) + 1
    log = np.zeros((n_max, len(LOG_COLUMNS)))
    x = ReactorState.initial(params, recipe.start_temp).to_array()
    if x[IX_T] >= recipe.setpoint - 1.0:
        x[IX_FEEDING] = 1.0
    log[0] = (0.0, recipe.setpoint, recipe.setpoint, 0.0, x[IX_T], x[IX_M], x[IX_P],
              x[IX_UA], x[IX_Q], x[IX_TJ], x[IX_FED])
    done_mass = 0.95 * params.monomer_target
    row = 1
    status = 0
    while status == 0:
        a = controller(log[:row])
        if not a.is_finite():
            raise InvalidAction("policy produced invalid action")
        a = a.clipped()
        n = min(control_period, n_max - row)
        x, written, status = _run_interval(x, a.That, a.Mhat, recipe.setpoint, recipe.impurity,
                                           p, dt, n, recipe.max_duration, done_mass, log, row)
        row += written
        if status == -1:
            raise SimulationDiverged("simulation diverged")
        if row >= n_max:
            status = 1
    data = log[:row].copy()
    terminated = "completed" if data[-1, 6] >= done_mass else "max_duration"
    feeding = np.nonzero(data[:, 4] >= recipe.setpoint - 1.0)[0]
    feed_start = float(data[feeding[0], 0]) if len(feeding) else None
    return Trajectory(data=data, recipe=recipe, terminated=terminated, feed_start_time=feed_start)
