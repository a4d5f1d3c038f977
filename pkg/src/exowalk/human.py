"""Human wearer stand-in: per-leg PD tracking of a periodic hip reference.

The reference for leg A at phase ``theta`` is
``amplitude * sin(theta) + harmonic * sin(2 theta)``; leg B runs half a cycle
later.  The common second harmonic makes the swing thigh lead the stance
thigh in late swing so the point foot clears the ground before heel strike.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import WalkerState


class TooFewCycles(ValueError):
    pass


@dataclass(frozen=True)
class HumanModel:
    kp: float = 300.0
    kd: float = 30.0
    amplitude: float = 0.35
    frequency: float = 0.833
    phase_offset: float = math.pi / 2
    harmonic: float = 0.08
    pushoff_impulse: float = 0.0

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise ValueError("kp and kd must be non-negative")
        if not 0 <= self.amplitude < math.pi / 3:
            raise ValueError("reference amplitude must lie in [0, pi/3)")
        if not self.frequency > 0:
            raise ValueError("frequency must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HumanModel":
        return cls(**{k: float(v) for k, v in d.items()})

    def phase(self, t: float) -> float:
        return 2.0 * math.pi * self.frequency * t + self.phase_offset

    def reference(self, phase: float, rate: float | None = None):
        """Reference angles and velocities ``((qa, qb), (dqa, dqb))``."""
        if rate is None:
            rate = 2.0 * math.pi * self.frequency
        A, H = self.amplitude, self.harmonic
        out_q, out_dq = [], []
        for th in (phase, phase + math.pi):
            out_q.append(A * math.sin(th) + H * math.sin(2.0 * th))
            out_dq.append((A * math.cos(th) + 2.0 * H * math.cos(2.0 * th)) * rate)
        return tuple(out_q), tuple(out_dq)

    def initial_state(self, t0: float | None = None) -> WalkerState:
        """On-reference state at the leg-A heel-strike phase (A just became stance)."""
        if t0 is None:
            t0 = (0.5 * math.pi - self.phase_offset) / (2.0 * math.pi * self.frequency)
        (qa, qb), (dqa, dqb) = self.reference(self.phase(t0))
        return WalkerState(q1=qa, q2=qb, dq1=dqa, dq2=dqb, time=t0, stance_leg=0)


def human_torque(state: WalkerState, model: HumanModel, now: float | None = None,
                 phase: float | None = None, rate: float | None = None):
    """PD torque on the physical legs (A, B); no clamping."""
    if phase is None:
        phase = model.phase(state.time if now is None else now)
    (ra, rb), (dra, drb) = model.reference(phase, rate)
    qa, qb = state.physical_angles()
    va, vb = state.physical_velocities()
    return (model.kp * (ra - qa) + model.kd * (dra - va),
            model.kp * (rb - qb) + model.kd * (drb - vb))


def effort_proxy(trajectory, cycles=None):
    """Mean per-cycle human positive work [J] and squared-torque integral [N^2 m^2 s].

    Averages run over complete same-leg heel-strike cycles only.
    """
    from .metrics import cycle_bounds, _trapz

    if cycles is None:
        cycles = cycle_bounds(trajectory)
    if len(cycles) < 3:
        raise TooFewCycles(f"need at least 3 complete gait cycles, got {len(cycles)}")
    t = trajectory.time
    tau = trajectory.tau_hum
    vel = trajectory.physical_velocities()
    work, sq = [], []
    for start, stop in cycles:
        sl = slice(start, stop + 1)
        p = np.sum(tau[sl] * vel[sl], axis=1)
        work.append(_trapz(np.maximum(p, 0.0), t[sl]))
        sq.append(_trapz(np.sum(tau[sl] ** 2, axis=1), t[sl]))
    return float(np.mean(work)), float(np.mean(sq))
