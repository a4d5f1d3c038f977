"""Offline gait and energetics analysis.

Cycles run from one heel strike of a leg to its next heel strike.  Power is
``P = omega . tau_exo`` per leg; areas are integrated piecewise-linearly with
the zero crossings located, so positive minus negative area equals the
signed trapezoid integral exactly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import WalkerParams, com_height

N_POINTS = 101
WEIR_O2 = 3.941
WEIR_CO2 = 1.106


class InsufficientEvents(ValueError):
    pass


class UndefinedFraction(ValueError):
    pass


class DegenerateCycle(ValueError):
    pass


class GasSeriesError(ValueError):
    pass


def _trapz(y, t) -> float:
    return float(np.trapezoid(y, t))


def signed_areas(p: np.ndarray, t: np.ndarray) -> tuple[float, float]:
    """(positive area, negative-area magnitude) of a piecewise-linear signal."""
    p = np.asarray(p, dtype=float)
    t = np.asarray(t, dtype=float)
    if len(p) < 2:
        return 0.0, 0.0
    p0, p1, dt = p[:-1], p[1:], np.diff(t)
    same = p0 * p1 >= 0.0
    seg = 0.5 * (p0 + p1) * dt
    pos = np.where(same & (seg > 0), seg, 0.0)
    neg = np.where(same & (seg < 0), -seg, 0.0)
    cross = ~same
    if np.any(cross):
        a, b, h = p0[cross], p1[cross], dt[cross]
        frac = a / (a - b)
        first = 0.5 * a * frac * h
        second = 0.5 * b * (1.0 - frac) * h
        pos_c = np.where(first > 0, first, 0.0) + np.where(second > 0, second, 0.0)
        neg_c = np.where(first < 0, -first, 0.0) + np.where(second < 0, -second, 0.0)
        return float(pos.sum() + pos_c.sum()), float(neg.sum() + neg_c.sum())
    return float(pos.sum()), float(neg.sum())


def resample(t: np.ndarray, y: np.ndarray, n: int = N_POINTS) -> np.ndarray:
    """Linear interpolation onto ``n`` evenly spaced points spanning ``t``."""
    grid = np.linspace(t[0], t[-1], n)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return np.interp(grid, t, y)
    return np.column_stack([np.interp(grid, t, y[:, j]) for j in range(y.shape[1])])


# -- segmentation ---------------------------------------------------------

def cycle_bounds(traj, leg: int | None = None, t_min: float = -math.inf) -> list:
    """Sample-index pairs of consecutive same-leg heel strikes.

    ``leg`` defaults to the leg landing first at or after ``t_min``.
    """
    idx = traj.heel_strike_indices
    idx = idx[traj.time[idx] >= t_min]
    legs = traj.stance_leg[idx]
    if leg is None:
        if len(idx) == 0:
            return []
        leg = int(legs[0])
    own = idx[legs == leg]
    return [(int(a), int(b)) for a, b in zip(own[:-1], own[1:])]


@dataclass
class GaitCycle:
    """One stride.  Column 0 of every array is the cycle's own leg, column 1
    the contralateral leg."""

    start: float
    end: float
    leg: int
    stance_duration: float
    swing_duration: float
    time: np.ndarray
    angles: np.ndarray
    velocities: np.ndarray
    tau_exo: np.ndarray
    tau_hum: np.ndarray
    profiles: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.end - self.start


def segment_cycles(traj, leg: int | None = None, t_min: float = -math.inf) -> list:
    """Cut a trajectory into gait cycles; boundary fragments are dropped."""
    bounds = cycle_bounds(traj, leg, t_min)
    if not bounds:
        raise InsufficientEvents("need at least two heel strikes of the same leg")
    events = traj.heel_strike_indices
    cycles = []
    for a, b in bounds:
        own = int(traj.stance_leg[a])
        order = [own, 1 - own]
        sl = slice(a, b + 1)
        t = traj.time[sl]
        mid = events[(events > a) & (events < b)]
        if len(mid) == 0:
            raise InsufficientEvents("no contralateral heel strike inside a cycle")
        t_off = float(traj.time[mid[0]])
        c = GaitCycle(
            start=float(t[0]), end=float(t[-1]), leg=own,
            stance_duration=t_off - float(t[0]), swing_duration=float(t[-1]) - t_off,
            time=t, angles=traj.angles[sl][:, order], velocities=traj.velocities[sl][:, order],
            tau_exo=traj.tau_exo[sl][:, order], tau_hum=traj.tau_hum[sl][:, order],
        )
        c.profiles = {
            "angle": resample(t, c.angles),
            "velocity": resample(t, c.velocities),
            "tau_exo": resample(t, c.tau_exo),
            "power": resample(t, c.velocities * c.tau_exo),
        }
        cycles.append(c)
    return cycles


def segment_by_velocity_sign(time: np.ndarray, velocities: np.ndarray, deadband: float = 0.05):
    """Heel-strike estimate for logs without events: leg ``i`` lands where its
    velocity turns from positive (flexing) to negative while the other leg is
    still extending.  Returns a boolean event array."""
    v = np.asarray(velocities, dtype=float)
    event = np.zeros(len(time), dtype=bool)
    for i in (0, 1):
        other = v[:, 1 - i]
        turn = (v[:-1, i] > 0) & (v[1:, i] <= 0) & (other[1:] < -deadband)
        event[1:] |= turn
    return event


# -- power ---------------------------------------------------------------

@dataclass
class PowerProfile:
    time: np.ndarray
    power: np.ndarray
    positive_area: float
    negative_area: float
    per_kg: bool = False

    @property
    def net_area(self) -> float:
        return self.positive_area - self.negative_area


def power_profile(cycle: GaitCycle, body_mass: float | None = None) -> PowerProfile:
    p = cycle.velocities * cycle.tau_exo
    if body_mass is not None:
        if not body_mass > 0:
            raise ValueError("body_mass must be positive")
        p = p / body_mass
    pos = neg = 0.0
    for j in range(p.shape[1]):
        a, b = signed_areas(p[:, j], cycle.time)
        pos += a
        neg += b
    return PowerProfile(cycle.time, p, pos, neg, body_mass is not None)


def negative_power_fraction(profiles) -> float:
    """Negative power area as a percentage of the unsigned total area."""
    profiles = list(profiles)
    if not profiles:
        raise ValueError("need at least one power profile")
    neg = math.fsum(p.negative_area for p in profiles)
    tot = neg + math.fsum(p.positive_area for p in profiles)
    if not tot > 0:
        raise UndefinedFraction("total power area is zero")
    return 100.0 * neg / tot


# -- temporal ------------------------------------------------------------

def stance_swing_ratio(cycle: GaitCycle) -> float:
    if not cycle.swing_duration > 0:
        raise DegenerateCycle("swing duration is zero")
    return cycle.stance_duration / cycle.swing_duration


def cadence(traj, t_min: float = -math.inf) -> float:
    """Heel strikes per minute."""
    t = traj.heel_strike_times
    t = t[t >= t_min]
    if len(t) < 10:
        raise InsufficientEvents(f"need at least 10 steps, got {len(t)}")
    return 60.0 * (len(t) - 1) / float(t[-1] - t[0])


def cadence_ratio(assisted, unassisted, t_min: float = -math.inf) -> float:
    return cadence(assisted, t_min) / cadence(unassisted, t_min)


# -- energetics ----------------------------------------------------------

def weir_energy(vo2, vco2):
    """Energy expenditure in kcal/min from gas exchange in L/min."""
    vo2 = np.asarray(vo2, dtype=float)
    vco2 = np.asarray(vco2, dtype=float)
    if np.any(vo2 < 0) or np.any(vco2 < 0):
        raise GasSeriesError("gas volumes must be non-negative")
    out = WEIR_O2 * vo2 + WEIR_CO2 * vco2
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GasSeries:
    time_min: np.ndarray
    vo2: np.ndarray
    vco2: np.ndarray

    def final_mean(self, window_min: float = 2.0) -> float:
        """Mean Weir expenditure over the last ``window_min`` minutes."""
        t = self.time_min
        if len(t) < 2 or t[-1] - t[0] < window_min - 1e-9:
            raise GasSeriesError(f"series shorter than {window_min} min")
        m = t >= t[-1] - window_min - 1e-12
        return float(np.mean(weir_energy(self.vo2[m], self.vco2[m])))

    @classmethod
    def from_csv(cls, text: str) -> "GasSeries":
        from .simulation import SchemaError

        rows = list(csv.reader(io.StringIO(text)))
        header = ("time_min", "vo2_lmin", "vco2_lmin")
        if not rows or tuple(c.strip() for c in rows[0]) != header:
            raise SchemaError(f"row 1: header must be {','.join(header)}")
        data = []
        for n, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise SchemaError(f"row {n}: {exc}") from None
            if len(vals) != 3 or not all(math.isfinite(v) for v in vals):
                raise SchemaError(f"row {n}: expected 3 finite fields")
            if vals[1] < 0 or vals[2] < 0:
                raise SchemaError(f"row {n}: negative gas volume")
            data.append(vals)
        if not data:
            raise SchemaError("no data rows")
        a = np.array(data)
        return cls(a[:, 0], a[:, 1], a[:, 2])

    @classmethod
    def read_csv(cls, path) -> "GasSeries":
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv(fh.read())


def reduction_pct(mc_exo: float, mc_noexo: float) -> float:
    if mc_noexo == 0:
        raise ZeroDivisionError("unassisted metabolic cost is zero")
    return (mc_exo - mc_noexo) / mc_noexo * 100.0


@dataclass(frozen=True)
class EnergeticsReport:
    mc_exo: float
    mc_noexo: float
    resting: float
    reduction_pct: float

    def to_dict(self) -> dict:
        return {"mc_exo_kcal_min": self.mc_exo, "mc_noexo_kcal_min": self.mc_noexo,
                "resting_kcal_min": self.resting, "reduction_pct": self.reduction_pct}


SUMMARY_COLUMNS = ("subject", "reduction_pct", "max_torque_per_kg", "cadence_ratio")


@dataclass(frozen=True)
class SubjectSummary:
    """One participant's headline numbers: metabolic change, peak torque per
    kilogram and assisted/unassisted cadence ratio."""

    subject: str
    reduction_pct: float
    max_torque_per_kg: float
    cadence_ratio: float


def summary_table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow([r.subject, repr(float(r.reduction_pct)), repr(float(r.max_torque_per_kg)),
                    repr(float(r.cadence_ratio))])
    return buf.getvalue()


def parse_summary_table(text: str) -> list:
    from .simulation import SchemaError

    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != SUMMARY_COLUMNS:
        raise SchemaError(f"row 1: header must be {','.join(SUMMARY_COLUMNS)}")
    out = []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(SUMMARY_COLUMNS):
            raise SchemaError(f"row {n}: expected {len(SUMMARY_COLUMNS)} fields, got {len(row)}")
        try:
            out.append(SubjectSummary(row[0], *(float(v) for v in row[1:])))
        except ValueError as exc:
            raise SchemaError(f"row {n}: {exc}") from None
    return out


def net_metabolic_rate(series: GasSeries, resting: GasSeries | None = None) -> tuple[float, float]:
    """(activity rate, resting rate) in kcal/min."""
    rest = resting.final_mean() if resting is not None else 0.0
    return series.final_mean() - rest, rest


def metabolic_report(exo: GasSeries, noexo: GasSeries, resting: GasSeries | None = None) -> EnergeticsReport:
    mc_exo, rest = net_metabolic_rate(exo, resting)
    mc_noexo, _ = net_metabolic_rate(noexo, resting)
    return EnergeticsReport(mc_exo, mc_noexo, rest, reduction_pct(mc_exo, mc_noexo))


# -- kinematics ----------------------------------------------------------

def stance_foot_heights(traj, params: WalkerParams) -> np.ndarray:
    """World height of the stance foot, rebuilt from the landing geometry."""
    l = params.leg_length
    y = np.zeros(len(traj.time))
    acc = 0.0
    idx = traj.heel_strike_indices
    for k, i in enumerate(idx):
        st = int(traj.stance_leg[i])
        q_new_stance, q_new_swing = traj.angles[i, st], traj.angles[i, 1 - st]
        acc += l * (math.cos(q_new_swing) - math.cos(q_new_stance))
        stop = idx[k + 1] if k + 1 < len(idx) else len(y)
        y[i:stop] = acc
    return y


def com_heights(traj, params: WalkerParams) -> np.ndarray:
    st = traj.stance_leg
    q_st = np.where(st == 0, traj.angles[:, 0], traj.angles[:, 1])
    q_sw = np.where(st == 0, traj.angles[:, 1], traj.angles[:, 0])
    rel = np.array([com_height(a, b, params) for a, b in zip(q_st, q_sw)])
    return stance_foot_heights(traj, params) + rel


def mean_profile(cycles, key: str) -> np.ndarray:
    return np.mean([c.profiles[key] for c in cycles], axis=0)


def kinematic_summary(traj, params: WalkerParams, cycles=None) -> dict:
    """Hip ROM, COM vertical displacement about each cycle's mean, and peak
    exoskeleton torque per kilogram of model mass."""
    if cycles is None:
        cycles = segment_cycles(traj)
    com = com_heights(traj, params)
    span = (traj.time >= cycles[0].start) & (traj.time <= cycles[-1].end)
    disp = []
    for c in cycles:
        m = (traj.time >= c.start) & (traj.time <= c.end)
        t, y = traj.time[m], com[m]
        mean = _trapz(y, t) / (t[-1] - t[0])
        disp.append(resample(t, y - mean))
    disp = np.mean(disp, axis=0)
    angle = mean_profile(cycles, "angle")
    rom_legs = [float(np.ptp(np.concatenate([c.angles[:, j] for c in cycles]))) for j in (0, 1)]
    return {
        "hip_rom_rad": float(np.mean(rom_legs)),
        "hip_rom_per_leg_rad": rom_legs,
        "com_vertical_displacement_m": disp.tolist(),
        "com_vertical_excursion_m": float(np.ptp(disp)),
        "hip_angle_profile_rad": angle.tolist(),
        "max_torque_per_kg": float(np.max(np.abs(traj.tau_exo[span]))) / params.total_mass,
    }


def rms_profile_difference(cycles_a, cycles_b, key: str = "angle") -> float:
    """RMS difference of cycle-averaged profiles pooled over both legs."""
    d = mean_profile(cycles_a, key) - mean_profile(cycles_b, key)
    return float(np.sqrt(np.mean(d ** 2)))
