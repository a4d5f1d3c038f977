"""Closed-loop hybrid simulation: walker + human surrogate + exoskeleton.

The integrator runs on a fixed grid ``t0 + k*dt``.  A heel strike splits the
grid step at the event time; the following step finishes the interrupted
interval so controller ticks stay on the grid.  The exoskeleton torque is a
zero-order hold refreshed every ``1/control_rate`` seconds; the human PD is
evaluated continuously inside the RK4 stages.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    SimulationDiverged, WalkerFell, WalkerParams, WalkerState, hip_height, mass_matrix,
    sloped_ground, step, to_role_order,
)
from .human import HumanModel, human_torque
from .scenario import Scenario

CSV_COLUMNS = ("time_s", "q1_rad", "q2_rad", "dq1_rads", "dq2_rads", "tau_exo1_Nm",
               "tau_exo2_Nm", "tau_hum1_Nm", "tau_hum2_Nm", "event_flag")


class SchemaError(ValueError):
    """Input file does not follow the documented column layout."""


@dataclass
class HybridTrajectory:
    """Logged run.  Angles, velocities and torques are stored per physical
    leg (column 0 = leg A, column 1 = leg B); ``stance_leg`` says which of
    them plays the stance role at each sample."""

    time: np.ndarray
    angles: np.ndarray
    velocities: np.ndarray
    tau_exo: np.ndarray
    tau_hum: np.ndarray
    event: np.ndarray
    stance_leg: np.ndarray
    beta: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.time)

    @property
    def heel_strike_times(self) -> np.ndarray:
        return self.time[self.event]

    @property
    def heel_strike_indices(self) -> np.ndarray:
        return np.flatnonzero(self.event)

    def heel_strike_legs(self) -> np.ndarray:
        """Physical leg landing at each heel strike (it becomes the stance leg)."""
        return self.stance_leg[self.event]

    def physical_angles(self) -> np.ndarray:
        return self.angles

    def physical_velocities(self) -> np.ndarray:
        return self.velocities

    def states(self):
        for i in range(len(self.time)):
            st = int(self.stance_leg[i])
            q = self.angles[i] if st == 0 else self.angles[i, ::-1]
            dq = self.velocities[i] if st == 0 else self.velocities[i, ::-1]
            yield WalkerState(float(q[0]), float(q[1]), float(dq[0]), float(dq[1]),
                              time=float(self.time[i]), stance_leg=st)

    def window(self, t_start: float, t_stop: float) -> "HybridTrajectory":
        m = (self.time >= t_start) & (self.time < t_stop)
        return HybridTrajectory(self.time[m], self.angles[m], self.velocities[m], self.tau_exo[m],
                                self.tau_hum[m], self.event[m], self.stance_leg[m],
                                None if self.beta is None else self.beta[m], dict(self.meta))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(len(self.time)):
            w.writerow([repr(float(self.time[i])),
                        *(repr(float(v)) for v in self.angles[i]),
                        *(repr(float(v)) for v in self.velocities[i]),
                        *(repr(float(v)) for v in self.tau_exo[i]),
                        *(repr(float(v)) for v in self.tau_hum[i]),
                        int(self.event[i])])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "HybridTrajectory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(c.strip() for c in rows[0]) != CSV_COLUMNS:
            raise SchemaError(f"row 1: header must be {','.join(CSV_COLUMNS)}")
        data = []
        for n, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise SchemaError(f"row {n}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[:-1]]
                flag = int(row[-1])
            except ValueError as exc:
                raise SchemaError(f"row {n}: {exc}") from None
            if flag not in (0, 1) or not all(math.isfinite(v) for v in vals):
                raise SchemaError(f"row {n}: non-finite value or event_flag not 0/1")
            if data and vals[0] <= data[-1][0]:
                raise SchemaError(f"row {n}: time must be strictly increasing")
            data.append(vals + [flag])
        if not data:
            raise SchemaError("no data rows")
        arr = np.array(data, dtype=float)
        event = arr[:, 9].astype(bool)
        angles = arr[:, 1:3]
        velocities = arr[:, 3:5]
        return cls(time=arr[:, 0], angles=angles, velocities=velocities, tau_exo=arr[:, 5:7],
                   tau_hum=arr[:, 7:9], event=event,
                   stance_leg=infer_stance_leg(angles, velocities, event))

    @classmethod
    def read_csv(cls, path) -> "HybridTrajectory":
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv(fh.read())


def infer_stance_leg(angles: np.ndarray, velocities: np.ndarray, event: np.ndarray) -> np.ndarray:
    """Recover stance roles from per-leg logs: the landing leg is the one
    ahead at the heel-strike sample; before the first strike the leg with
    the lower velocity is taken as stance."""
    n = len(angles)
    out = np.empty(n, dtype=int)
    idx = np.flatnonzero(event)
    if len(idx) == 0:
        out[:] = 0 if velocities[0, 0] <= velocities[0, 1] else 1
        return out
    first = int(np.argmax(angles[idx[0]]))
    out[: idx[0]] = 1 - first
    bounds = list(idx) + [n]
    for k, i in enumerate(idx):
        out[i: bounds[k + 1]] = int(np.argmax(angles[i]))
    return out


class Simulation:
    """Incrementally advanced closed-loop run; see :func:`simulate`."""

    def __init__(self, initial: WalkerState, params: WalkerParams, human: HumanModel | None = None,
                 exo=None, scenario: Scenario | None = None, dt: float = 1e-3, seed: int = 0,
                 sensor_noise: float = 0.0):
        if not 0.0 < dt <= 0.01:
            raise ValueError("dt must lie in (0, 0.01] s")
        self.params = params
        self.human = human
        self.exo = exo
        self.scenario = scenario
        self.dt = dt
        self.state = initial
        self.t0 = initial.time
        self.sensor_noise = sensor_noise
        self.rng = np.random.default_rng(seed)
        self.ticks_per = 1
        if exo is not None:
            ratio = exo.period / dt
            self.ticks_per = int(round(ratio))
            if self.ticks_per < 1 or abs(self.ticks_per - ratio) > 1e-6:
                raise ValueError("control period must be an integer multiple of dt")
            exo.reset()
        self.k = 0
        self.held = (0.0, 0.0)
        self.n_events = 0
        self._log = {k: [] for k in ("t", "qa", "qb", "va", "vb", "ea", "eb", "ha", "hb", "ev", "st", "beta")}
        self.encoder_time: list = []
        self.encoder_angles: list = []
        self._tick()
        self._record(False)

    # -- pieces evaluated inside the integrator
    def _phase(self, t):
        h = self.human
        if self.scenario is not None:
            return self.scenario.phase_at(t, h.frequency, h.phase_offset)
        return h.phase(t), None

    def human_torque(self, s: WalkerState):
        if self.human is None:
            return (0.0, 0.0)
        ph, rate = self._phase(s.time)
        return human_torque(s, self.human, phase=ph, rate=rate)

    def _torque_fn(self, s: WalkerState):
        h = self.human_torque(s)
        e = self.held
        return to_role_order((h[0] + e[0], h[1] + e[1]), s.stance_leg)

    def ground_slope(self, t: float) -> float:
        if self.scenario is not None:
            return self.scenario.ground_slope_at(t)
        return self.params.ground_slope

    def _tick(self):
        if self.exo is None or self.k % self.ticks_per:
            return
        v = self.state.physical_velocities()
        if self.sensor_noise > 0.0:
            n = self.rng.normal(0.0, self.sensor_noise, 2)
            v = (v[0] + float(n[0]), v[1] + float(n[1]))
        self.held = self.exo.tick(v, self.state.time)
        self.encoder_time.append(self.state.time)
        self.encoder_angles.append(self.state.physical_angles())

    def _record(self, event: bool):
        s, L = self.state, self._log
        qa, qb = s.physical_angles()
        va, vb = s.physical_velocities()
        ha, hb = self.human_torque(s)
        beta = self.exo.beta if self.exo is not None else 0.0
        for key, val in zip(L, (s.time, qa, qb, va, vb, self.held[0], self.held[1], ha, hb, event, s.stance_leg, beta)):
            L[key].append(val)

    @property
    def time(self) -> float:
        return self.state.time

    def advance(self) -> bool:
        """Advance to the next grid point or heel strike, whichever is first."""
        target = self.t0 + (self.k + 1) * self.dt
        h = target - self.state.time
        terrain = sloped_ground(self.ground_slope(self.state.time))
        new, event = step(self.state, self.params, self._torque_fn, h, terrain)
        if event and self.human is not None and self.human.pushoff_impulse:
            m11, m12, m22 = mass_matrix(new.q1, new.q2, self.params)
            j = -self.human.pushoff_impulse
            det = m11 * m22 - m12 * m12
            new = WalkerState(new.q1, new.q2, new.dq1 + m22 * j / det, new.dq2 - m12 * j / det,
                              new.stance_foot_x, new.time, new.stance_foot_y, new.stance_leg)
        reached = not event or target - new.time < 1e-12
        if reached:
            new = WalkerState(new.q1, new.q2, new.dq1, new.dq2, new.stance_foot_x, target,
                              new.stance_foot_y, new.stance_leg)
            self.k += 1
        self.state = new
        if hip_height(new, self.params) < 0.5 * self.params.leg_length:
            raise WalkerFell(f"walker fell at t={new.time:.4f}s")
        if event:
            self.n_events += 1
        if reached:
            self._tick()
        self._record(event)
        return event

    def run_until(self, t_end: float):
        while self.state.time < t_end - 1e-12:
            self.advance()
        return self

    def trajectory(self, meta: dict | None = None) -> HybridTrajectory:
        L = self._log
        return HybridTrajectory(
            time=np.array(L["t"], dtype=float),
            angles=np.column_stack([L["qa"], L["qb"]]),
            velocities=np.column_stack([L["va"], L["vb"]]),
            tau_exo=np.column_stack([L["ea"], L["eb"]]),
            tau_hum=np.column_stack([L["ha"], L["hb"]]),
            event=np.array(L["ev"], dtype=bool),
            stance_leg=np.array(L["st"], dtype=int),
            beta=np.array(L["beta"], dtype=float),
            meta=dict(meta or {}),
        )


class SimulationStream:
    """Exposes a running simulation as a stream of encoder windows sampled at
    the controller rate, with a writable assistance gain."""

    def __init__(self, sim: Simulation):
        if sim.exo is None:
            raise ValueError("stream needs an exoskeleton controller")
        self.sim = sim
        self.sample_rate = sim.exo.config.control_rate
        self._t = sim.time
        self._cursor = 0

    @property
    def beta(self) -> float:
        return self.sim.exo.beta

    @beta.setter
    def beta(self, value: float):
        self.sim.exo.beta = value

    def next_window(self, span: float):
        t_start, t_end = self._t, self._t + span
        self.sim.run_until(t_end)
        times = self.sim.encoder_time
        i = self._cursor
        while i < len(times) and times[i] < t_start - 1e-9:
            i += 1
        j = i
        while j < len(times) and times[j] < t_end - 1e-9:
            j += 1
        self._cursor, self._t = j, t_end
        return t_start, np.array(self.sim.encoder_angles[i:j])


def simulate(initial: WalkerState, params: WalkerParams, human: HumanModel | None = None, exo=None,
             scenario: Scenario | None = None, duration: float = 10.0, dt: float = 1e-3,
             seed: int = 0, sensor_noise: float = 0.0) -> HybridTrajectory:
    """Closed-loop run of ``duration`` seconds from ``initial``."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    sim = Simulation(initial, params, human, exo, scenario, dt, seed, sensor_noise)
    sim.run_until(initial.time + duration)
    return sim.trajectory()


@dataclass
class LimitCycle:
    converged: bool
    fixed_point: WalkerState | None
    period: float | None
    strides: int
    residual: float
    reason: str = ""


def find_limit_cycle(params: WalkerParams, initial: WalkerState, human: HumanModel | None = None,
                     exo=None, steps_per_stride: int | None = None, tol: float = 1e-6,
                     max_strides: int = 500, dt: float = 1e-3, max_stride_time: float = 5.0) -> LimitCycle:
    """Iterate the stride-to-stride map on post-impact states.

    Without a human reference the walker is autonomous and the section is
    taken at every heel strike; with the time-periodic reference it is taken
    every second strike (one stride).  Falling, divergence or exhausting
    ``max_strides`` yields ``converged=False`` rather than an exception.
    """
    if steps_per_stride is None:
        steps_per_stride = 1 if human is None else 2
    sim = Simulation(initial, params, human, exo, None, dt)
    prev, prev_t = None, None
    residual = math.inf
    try:
        for k in range(max_strides + 1):
            t_start = sim.time
            target = sim.n_events + steps_per_stride
            while sim.n_events < target:
                sim.advance()
                if sim.time - t_start > max_stride_time:
                    return LimitCycle(False, None, None, k, residual, "no heel strike")
            x = sim.state.as_tuple()
            if prev is not None:
                residual = math.dist(x, prev)
                if residual < tol:
                    return LimitCycle(True, sim.state, sim.time - prev_t, k, residual)
            prev, prev_t = x, sim.time
    except SimulationDiverged as exc:
        return LimitCycle(False, None, None, k, residual, str(exc))
    return LimitCycle(False, None, None, max_strides, residual, "not converged")
