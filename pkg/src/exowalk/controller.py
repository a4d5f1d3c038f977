"""Negative-damping hip exoskeleton controller.

Per tick: low-pass the two hip velocities, decide which leg is in stance
from their signs, form ``beta * R @ [v_stance, v_swing]`` with
``R = [[1, -1], [0, 1]]``, map back to the physical legs and clamp.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Tuple

import numpy as np
from scipy import signal

Pair = Tuple[float, float]

STANCE_A, STANCE_B = 0, 1


@dataclass(frozen=True)
class ExoConfig:
    beta: float = 2.3
    beta_min: float = 1.0
    beta_max: float = 2.5
    filter_cutoff: float = 4.0
    control_rate: float = 500.0
    torque_limit: float = 32.0
    deadband: float = 0.05
    debounce: float = 0.2

    def __post_init__(self):
        if not self.beta_min <= self.beta_max:
            raise ValueError("beta_min must not exceed beta_max")
        self.validate_beta(self.beta)
        if not self.filter_cutoff < self.control_rate / 2:
            raise ValueError("filter_cutoff must be below the Nyquist rate")
        if not self.torque_limit > 0:
            raise ValueError("torque_limit must be positive")
        if self.deadband < 0 or self.debounce < 0:
            raise ValueError("deadband and debounce must be non-negative")

    def validate_beta(self, beta: float) -> float:
        """Raise unless ``beta`` is inside the configured bounds."""
        if not self.beta_min <= beta <= self.beta_max:
            raise ValueError(f"beta={beta} outside [{self.beta_min}, {self.beta_max}]")
        return beta

    def clip_beta(self, beta: float) -> float:
        return min(max(beta, self.beta_min), self.beta_max)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
            "filter_cutoff_hz": self.filter_cutoff,
            "control_rate_hz": self.control_rate,
            "torque_limit_nm": self.torque_limit,
            "deadband_rads": self.deadband,
            "debounce_s": self.debounce,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExoConfig":
        keys = {
            "beta": "beta", "beta_min": "beta_min", "beta_max": "beta_max",
            "filter_cutoff_hz": "filter_cutoff", "control_rate_hz": "control_rate",
            "torque_limit_nm": "torque_limit", "deadband_rads": "deadband", "debounce_s": "debounce",
        }
        unknown = set(d) - set(keys)
        if unknown:
            raise ValueError(f"unknown exo config keys: {sorted(unknown)}")
        return cls(**{keys[k]: float(v) for k, v in d.items()})

    @classmethod
    def load(cls, path) -> "ExoConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def butterworth_sos(cutoff: float, rate: float) -> np.ndarray:
    """Second-order Butterworth low-pass (bilinear transform) as one biquad row."""
    return signal.butter(2, cutoff, btype="low", fs=rate, output="sos")


@dataclass
class FilterState:
    """Transposed direct-form II biquad, one register pair per channel."""

    b: Tuple[float, float, float]
    a: Tuple[float, float]
    z: list = field(default_factory=lambda: [[0.0, 0.0], [0.0, 0.0]])

    @classmethod
    def design(cls, cutoff: float = 4.0, rate: float = 500.0) -> "FilterState":
        sos = butterworth_sos(cutoff, rate)[0]
        return cls(b=(sos[0], sos[1], sos[2]), a=(sos[4], sos[5]))

    def copy(self) -> "FilterState":
        return FilterState(self.b, self.a, [list(self.z[0]), list(self.z[1])])


def filter_sample(fs: FilterState, raw_velocity: Pair) -> tuple[FilterState, Pair]:
    """Push one sample per channel through the biquad."""
    b0, b1, b2 = fs.b
    a1, a2 = fs.a
    out = []
    z = []
    for x, (z1, z2) in zip(raw_velocity, fs.z):
        y = b0 * x + z1
        z.append([b1 * x - a1 * y + z2, b2 * x - a2 * y])
        out.append(y)
    return FilterState(fs.b, fs.a, z), (out[0], out[1])


@dataclass(frozen=True)
class LegRoleState:
    stance_leg: int = STANCE_A
    last_switch_time: float = -math.inf


def classify_legs(filtered_velocities: Pair, prev: LegRoleState, now: float,
                  deadband: float = 0.05, debounce: float = 0.2) -> LegRoleState:
    """The extending leg (negative velocity) is stance when the other flexes.

    Same-sign or near-zero patterns keep the previous role, as does any
    switch attempted within ``debounce`` seconds of the last one.
    """
    va, vb = filtered_velocities
    if abs(va) < deadband or abs(vb) < deadband:
        return prev
    if va < 0.0 < vb:
        candidate = STANCE_A
    elif vb < 0.0 < va:
        candidate = STANCE_B
    else:
        return prev
    if candidate == prev.stance_leg:
        return prev
    if now - prev.last_switch_time < debounce:
        return prev
    return LegRoleState(candidate, now)


def exo_torque(ordered_velocities: Pair, beta: float) -> Pair:
    """``beta * R @ [v_stance, v_swing]``, returned in (stance, swing) order."""
    v1, v2 = ordered_velocities
    return beta * (v1 - v2), beta * v2


def saturate(torque: Pair, limit: float) -> Pair:
    if not limit > 0:
        raise ValueError("limit must be positive")
    return tuple(min(max(t, -limit), limit) for t in torque)


@dataclass
class EnergyLedger:
    e_exo: float = 0.0
    e_human: float = 0.0

    @property
    def e_total(self) -> float:
        return self.e_exo + self.e_human


@dataclass
class ControllerState:
    filter: FilterState
    roles: LegRoleState = LegRoleState()
    ledger: EnergyLedger = field(default_factory=EnergyLedger)
    last_power: float | None = None
    last_time: float | None = None


def control_tick(raw_velocities: Pair, config: ExoConfig, state: ControllerState, now: float,
                 beta: float | None = None) -> tuple[Pair, ControllerState]:
    """One controller cycle; returns torques on (leg A, leg B).

    ``state`` is updated in place and also returned.  Exoskeleton energy is
    accumulated with the trapezoid rule on ``P = tau . raw_velocity``.
    """
    beta = config.beta if beta is None else beta
    state.filter, filtered = filter_sample(state.filter, raw_velocities)
    state.roles = classify_legs(filtered, state.roles, now, config.deadband, config.debounce)
    if state.roles.stance_leg == STANCE_A:
        t_st, t_sw = exo_torque(filtered, beta)
        torque = (t_st, t_sw)
    else:
        t_st, t_sw = exo_torque((filtered[1], filtered[0]), beta)
        torque = (t_sw, t_st)
    torque = saturate(torque, config.torque_limit)
    power = torque[0] * raw_velocities[0] + torque[1] * raw_velocities[1]
    if state.last_power is not None:
        state.ledger.e_exo += 0.5 * (power + state.last_power) * (now - state.last_time)
    state.last_power, state.last_time = power, now
    return torque, state


class ExoController:
    """Stateful wrapper used by the simulator; ``beta`` may be changed between ticks."""

    def __init__(self, config: ExoConfig | None = None, beta: float | None = None):
        self.config = config or ExoConfig()
        self.beta = self.config.beta if beta is None else beta
        self.reset()

    def reset(self):
        self.state = ControllerState(FilterState.design(self.config.filter_cutoff, self.config.control_rate))

    @property
    def period(self) -> float:
        return 1.0 / self.config.control_rate

    def tick(self, raw_velocities: Pair, now: float) -> Pair:
        torque, self.state = control_tick(raw_velocities, self.config, self.state, now, self.beta)
        return torque


class NullExo:
    """No device worn: zero torque, no sensing."""

    beta = 0.0
    period = 1.0 / 500.0

    def reset(self):
        pass

    def tick(self, raw_velocities: Pair, now: float) -> Pair:
        return (0.0, 0.0)
