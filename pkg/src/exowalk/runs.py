"""Experiment compositions: fixed-gain treadmill-style runs, the adaptive
multi-terrain run, and the metrics report shared by both."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from .controller import ExoConfig, ExoController
from .dynamics import SimulationDiverged, WalkerParams
from .human import HumanModel, TooFewCycles, effort_proxy
from .optimizer import WINDOW_SPAN, OptimizerState, adaptive_loop, suggest_beta
from .scenario import Scenario, flat
from .simulation import HybridTrajectory, Simulation, SimulationStream

SETTLE_S = 10.0


def analyze_trajectory(traj: HybridTrajectory, params: WalkerParams, settle: float = SETTLE_S,
                       body_mass: float | None = None) -> dict:
    """Full metric set over the cycles that start after ``settle`` seconds.

    Only the columns of the trajectory CSV are used, so the result is the
    same whether computed in-run or from an exported file.
    """
    cycles = M.segment_cycles(traj, leg=0, t_min=settle)
    bounds = M.cycle_bounds(traj, leg=0, t_min=settle)
    profiles = [M.power_profile(c, body_mass) for c in cycles]
    pos = math.fsum(p.positive_area for p in profiles)
    neg = math.fsum(p.negative_area for p in profiles)
    try:
        neg_pct = M.negative_power_fraction(profiles)
    except M.UndefinedFraction:
        neg_pct = None
    try:
        work, sq = effort_proxy(traj, bounds)
    except TooFewCycles:
        work = sq = None
    ratios = [M.stance_swing_ratio(c) for c in cycles]
    per_leg_ratio = []
    for leg in (0, 1):
        try:
            per_leg_ratio.append(float(np.mean([M.stance_swing_ratio(c)
                                                for c in M.segment_cycles(traj, leg=leg, t_min=settle)])))
        except M.InsufficientEvents:
            per_leg_ratio.append(None)
    kin = M.kinematic_summary(traj, params, cycles)
    n = len(profiles)
    return {
        "settle_s": settle,
        "n_cycles": len(cycles),
        "cycle_duration_s": float(np.mean([c.duration for c in cycles])),
        "cadence_steps_min": M.cadence(traj, t_min=settle),
        "stance_swing_ratio": float(np.mean(ratios)),
        "stance_swing_ratio_per_leg": per_leg_ratio,
        "positive_power_area_J": pos / n,
        "negative_power_area_J": neg / n,
        "negative_power_pct": neg_pct,
        "human_positive_work_J": work,
        "human_sq_torque_N2m2s": sq,
        **kin,
        "power_profile_W": M.mean_profile(cycles, "power").tolist(),
        "exo_torque_profile_Nm": M.mean_profile(cycles, "tau_exo").tolist(),
    }


@dataclass
class FixedRun:
    trajectory: HybridTrajectory
    metrics: dict


def run_fixed(beta: float, params: WalkerParams | None = None, human: HumanModel | None = None,
              exo_config: ExoConfig | None = None, duration: float = 40.0, dt: float = 1e-3,
              seed: int = 0, sensor_noise: float = 0.0, settle: float = SETTLE_S) -> FixedRun:
    """Constant-gain run on flat ground (the treadmill condition)."""
    params = params or WalkerParams()
    human = human or HumanModel()
    exo = ExoController(exo_config or ExoConfig(), beta=beta)
    sim = Simulation(human.initial_state(), params, human, exo, None, dt, seed, sensor_noise)
    sim.run_until(duration)
    traj = sim.trajectory({"beta": beta, "condition": "unassisted" if beta == 0 else "assisted"})
    return FixedRun(traj, analyze_trajectory(traj, params, settle))


@dataclass
class ScenarioRun:
    trajectory: HybridTrajectory
    windows: list
    optimizer: OptimizerState
    segments: list = field(default_factory=list)

    def trial_log(self) -> str:
        return "".join(w.trial().to_json() + "\n" for w in self.windows)


class ScenarioFailed(SimulationDiverged):
    pass


def segment_summary(scenario: Scenario, traj: HybridTrajectory, windows) -> list:
    """Per-segment mean gain, negative power share and window ROM."""
    out = []
    b = scenario.boundaries
    p = traj.velocities * traj.tau_exo
    for i, seg in enumerate(scenario.segments):
        last = i == len(scenario.segments) - 1
        m = (traj.time >= b[i]) & ((traj.time <= b[i + 1]) if last else (traj.time < b[i + 1]))
        t = traj.time[m]
        pos = neg = 0.0
        for j in (0, 1):
            a, c = M.signed_areas(p[m, j], t)
            pos, neg = pos + a, neg + c
        beta_mean = M._trapz(traj.beta[m], t) / (t[-1] - t[0]) if len(t) > 1 else float(traj.beta[m][0])
        roms = [w.features.q_rom for w in windows if b[i] <= w.t_start < b[i + 1]]
        out.append({
            "index": i,
            "terrain": seg.terrain.tag,
            "t_start_s": b[i],
            "t_end_s": b[i + 1],
            "mean_beta": float(beta_mean),
            "negative_power_pct": 100.0 * neg / (pos + neg) if pos + neg > 0 else None,
            "mean_rom_rad": float(np.mean(roms)) if roms else None,
            "n_windows": len(roms),
        })
    return out


def terrain_means(segments: list) -> dict:
    """Duration-weighted mean gain and negative-power share per terrain class."""
    acc = {}
    for s in segments:
        d = s["t_end_s"] - s["t_start_s"]
        e = acc.setdefault(s["terrain"], [0.0, 0.0, 0.0, 0.0])
        e[0] += d * s["mean_beta"]
        e[1] += d
        if s["negative_power_pct"] is not None:
            e[2] += d * s["negative_power_pct"]
            e[3] += d
    return {k: {"mean_beta": v[0] / v[1], "negative_power_pct": v[2] / v[3] if v[3] else None}
            for k, v in acc.items()}


def run_scenario(scenario: Scenario, params: WalkerParams | None = None, human: HumanModel | None = None,
                 exo_config: ExoConfig | None = None, optimizer: OptimizerState | None = None,
                 dt: float = 1e-3, seed: int = 0, sensor_noise: float = 0.0, rom_scale: float = 1.0,
                 jerk_scale: float = 0.01, adaptive: bool = True) -> ScenarioRun:
    """Simulate a terrain protocol with the gain adapted every window.

    With ``adaptive=False`` the configured gain is held and no trials are run.
    """
    params = params or WalkerParams()
    human = human or HumanModel()
    exo_config = exo_config or ExoConfig()
    if optimizer is None:
        optimizer = default_optimizer(exo_config, seed)
    beta0 = suggest_beta(optimizer) if adaptive else exo_config.beta
    exo = ExoController(exo_config, beta=beta0)
    sim = Simulation(human.initial_state(0.0), params, human, exo, scenario, dt, seed, sensor_noise)
    n_windows = int(math.floor(scenario.total_duration / WINDOW_SPAN + 1e-9))
    windows = []
    try:
        if adaptive:
            windows = adaptive_loop(SimulationStream(sim), optimizer, n_windows,
                                    rom_scale=rom_scale, jerk_scale=jerk_scale)
        sim.run_until(scenario.total_duration)
    except SimulationDiverged as exc:
        seg = scenario.index_at(min(sim.time, scenario.total_duration))
        raise ScenarioFailed(f"segment {seg} ({scenario.segments[seg].terrain.tag}): {exc}") from exc
    traj = sim.trajectory({"scenario": scenario.name})
    return ScenarioRun(traj, windows, optimizer, segment_summary(scenario, traj, windows))


def default_optimizer(exo_config: ExoConfig | None = None, seed: int = 0) -> OptimizerState:
    cfg = exo_config or ExoConfig()
    return OptimizerState(beta_min=cfg.beta_min, beta_max=cfg.beta_max, rng_seed=seed)
