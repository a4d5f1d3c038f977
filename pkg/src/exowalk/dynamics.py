"""Planar compass-gait biped: equations of motion, heel-strike guard, impact map.

Angles are absolute leg angles measured from the true vertical, positive when
the foot is ahead of the hip (hip flexion with an upright trunk).  ``q1`` is
the stance leg, ``q2`` the swing leg.  Hip torques act as generalized forces
on these angles, i.e. the trunk is treated as an upright inertial reference.

The continuous part is evaluated with plain float arithmetic because it sits
in the integrator's inner loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Tuple

TorquePair = Tuple[float, float]
TerrainFn = Callable[[float], float]

VELOCITY_BOUND = 50.0
MIN_INTERLEG_ANGLE = 0.05
EVENT_TIME_TOL = 1e-9


class SimulationDiverged(RuntimeError):
    """State left the sanity envelope during integration."""


class WalkerFell(SimulationDiverged):
    """Hip dropped below half a leg length."""


class DegenerateConfiguration(ValueError):
    """Impact equations are singular (legs collinear)."""


@dataclass(frozen=True)
class WalkerParams:
    leg_mass: float = 5.0
    hip_mass: float = 10.0
    leg_length: float = 1.0
    com_offset_a: float = 0.5
    com_offset_b: float = 0.5
    gravity: float = 9.81
    ground_slope: float = 0.0

    def __post_init__(self):
        for name in ("leg_mass", "hip_mass", "leg_length", "com_offset_a", "com_offset_b", "gravity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not math.isclose(self.com_offset_a + self.com_offset_b, self.leg_length, rel_tol=1e-9):
            raise ValueError("com_offset_a + com_offset_b must equal leg_length")
        if not abs(self.ground_slope) < math.pi / 4:
            raise ValueError("|ground_slope| must be below pi/4")

    @property
    def total_mass(self) -> float:
        return 2.0 * self.leg_mass + self.hip_mass


@dataclass(frozen=True)
class WalkerState:
    """Hybrid state.  ``stance_leg`` tells which physical leg (0 = A, 1 = B)
    currently plays the stance role; ``stance_foot_y`` is the world height
    of the stance foot."""

    q1: float
    q2: float
    dq1: float
    dq2: float
    stance_foot_x: float = 0.0
    time: float = 0.0
    stance_foot_y: float = 0.0
    stance_leg: int = 0

    def as_tuple(self):
        return (self.q1, self.q2, self.dq1, self.dq2)

    def physical_angles(self) -> TorquePair:
        """Angles ordered (leg A, leg B)."""
        return (self.q1, self.q2) if self.stance_leg == 0 else (self.q2, self.q1)

    def physical_velocities(self) -> TorquePair:
        return (self.dq1, self.dq2) if self.stance_leg == 0 else (self.dq2, self.dq1)


def to_role_order(pair: TorquePair, stance_leg: int) -> TorquePair:
    """Map a (leg A, leg B) pair to (stance, swing) order; the map is its own inverse."""
    return (pair[0], pair[1]) if stance_leg == 0 else (pair[1], pair[0])


to_physical_order = to_role_order


def flat_ground(dx: float) -> float:
    return 0.0


def sloped_ground(slope: float) -> TerrainFn:
    """Ground height relative to the stance foot; positive slope descends forward."""
    t = math.tan(slope)
    return lambda dx: -dx * t


def mass_matrix(q1: float, q2: float, p: WalkerParams):
    m, mh, l, a, b = p.leg_mass, p.hip_mass, p.leg_length, p.com_offset_a, p.com_offset_b
    m11 = m * a * a + (mh + m) * l * l
    m12 = -m * l * b * math.cos(q1 - q2)
    m22 = m * b * b
    return m11, m12, m22


def continuous_dynamics(state: WalkerState, params: WalkerParams, torque: TorquePair = (0.0, 0.0)) -> TorquePair:
    """Angular accelerations solving ``M(q) ddq + C(q, dq) dq + g(q) = tau``."""
    p = params
    q1, q2, dq1, dq2 = state.q1, state.q2, state.dq1, state.dq2
    m, mh, l, a, b, g = p.leg_mass, p.hip_mass, p.leg_length, p.com_offset_a, p.com_offset_b, p.gravity
    m11, m12, m22 = mass_matrix(q1, q2, p)
    s = m * l * b * math.sin(q1 - q2)
    r1 = torque[0] + s * dq2 * dq2 + (m * a + mh * l + m * l) * g * math.sin(q1)
    r2 = torque[1] - s * dq1 * dq1 - m * b * g * math.sin(q2)
    det = m11 * m22 - m12 * m12
    if not det > 1e-12 * m11 * m22:
        raise SimulationDiverged("singular mass matrix")
    return (m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det


def kinetic_energy(state: WalkerState, params: WalkerParams) -> float:
    m11, m12, m22 = mass_matrix(state.q1, state.q2, params)
    dq1, dq2 = state.dq1, state.dq2
    return 0.5 * (m11 * dq1 * dq1 + 2.0 * m12 * dq1 * dq2 + m22 * dq2 * dq2)


def com_height(q1: float, q2: float, params: WalkerParams) -> float:
    """Centre-of-mass height above the stance foot."""
    p = params
    m, mh, l, a, b = p.leg_mass, p.hip_mass, p.leg_length, p.com_offset_a, p.com_offset_b
    y = m * a * math.cos(q1) + mh * l * math.cos(q1) + m * (l * math.cos(q1) - b * math.cos(q2))
    return y / p.total_mass


def potential_energy(state: WalkerState, params: WalkerParams) -> float:
    h = state.stance_foot_y + com_height(state.q1, state.q2, params)
    return params.total_mass * params.gravity * h


def total_energy(state: WalkerState, params: WalkerParams) -> float:
    return kinetic_energy(state, params) + potential_energy(state, params)


def hip_height(state: WalkerState, params: WalkerParams) -> float:
    return params.leg_length * math.cos(state.q1)


def swing_foot_offset(state: WalkerState, params: WalkerParams) -> TorquePair:
    """Swing-foot position relative to the stance foot."""
    l = params.leg_length
    return l * (math.sin(state.q2) - math.sin(state.q1)), l * (math.cos(state.q1) - math.cos(state.q2))


def heel_strike_guard(state: WalkerState, params: WalkerParams, terrain_height_fn: TerrainFn | None = None) -> float:
    """Swing-foot clearance above the local terrain (negative means penetration).

    ``terrain_height_fn`` gives ground height relative to the stance foot as a
    function of forward offset; it defaults to the params' uniform slope.
    """
    if terrain_height_fn is None:
        terrain_height_fn = sloped_ground(params.ground_slope)
    dx, dy = swing_foot_offset(state, params)
    return dy - terrain_height_fn(dx)


def _placement_ok(state: WalkerState, params: WalkerParams) -> bool:
    dx, _ = swing_foot_offset(state, params)
    return dx > 0.0 and abs(state.q1 - state.q2) > MIN_INTERLEG_ANGLE


def _point_jacobians(q1: float, q2: float, p: WalkerParams):
    """Positions (relative to the stance foot) and velocity Jacobians of the
    stance-leg mass, hip mass and swing-leg mass."""
    a, b, l = p.com_offset_a, p.com_offset_b, p.leg_length
    s1, c1, s2, c2 = math.sin(q1), math.cos(q1), math.sin(q2), math.cos(q2)
    e1, de1 = (-s1, c1), (-c1, -s1)
    e2, de2 = (s2, -c2), (c2, s2)
    r_st = (a * e1[0], a * e1[1])
    r_h = (l * e1[0], l * e1[1])
    r_sw = (r_h[0] + b * e2[0], r_h[1] + b * e2[1])
    j_st = ((a * de1[0], 0.0), (a * de1[1], 0.0))
    j_h = ((l * de1[0], 0.0), (l * de1[1], 0.0))
    j_sw = ((l * de1[0], b * de2[0]), (l * de1[1], b * de2[1]))
    return (r_st, j_st), (r_h, j_h), (r_sw, j_sw)


def _momentum_row(mass, r, jac, pivot):
    # d/d(dq) of m * (r - pivot) x v, with v = jac @ dq
    rx, ry = r[0] - pivot[0], r[1] - pivot[1]
    return (mass * (rx * jac[1][0] - ry * jac[0][0]), mass * (rx * jac[1][1] - ry * jac[0][1]))


def _add(u, v):
    return (u[0] + v[0], u[1] + v[1])


def impact_matrices(q1: float, q2: float, params: WalkerParams):
    """Return (Q_minus, Q_plus) with ``Q_plus @ dq_plus = Q_minus @ dq_minus``.

    Rows: angular momentum of the whole walker about the new contact point,
    then angular momentum of the trailing leg about the hip.
    """
    p = params
    m, mh = p.leg_mass, p.hip_mass
    (r_st, j_st), (r_h, j_h), (r_sw, j_sw) = _point_jacobians(q1, q2, p)
    contact = (r_sw[0] + p.com_offset_a * math.sin(q2), r_sw[1] - p.com_offset_a * math.cos(q2))
    row_total = _add(_add(_momentum_row(m, r_st, j_st, contact), _momentum_row(mh, r_h, j_h, contact)),
                     _momentum_row(m, r_sw, j_sw, contact))
    row_trail = _momentum_row(m, r_st, j_st, r_h)
    q_minus = (row_total, row_trail)

    # after impact: new stance angle q2 pivoting about the contact, new swing angle q1
    (n_st, nj_st), (n_h, nj_h), (n_sw, nj_sw) = _point_jacobians(q2, q1, p)
    shift = lambda r: (r[0] + contact[0], r[1] + contact[1])  # noqa: E731
    row_total_p = _add(_add(_momentum_row(m, shift(n_st), nj_st, contact), _momentum_row(mh, shift(n_h), nj_h, contact)),
                       _momentum_row(m, shift(n_sw), nj_sw, contact))
    row_trail_p = _momentum_row(m, shift(n_sw), nj_sw, shift(n_h))
    q_plus = (row_total_p, row_trail_p)
    return q_minus, q_plus


def impact_map(state: WalkerState, params: WalkerParams) -> WalkerState:
    """Instantaneous inelastic heel strike: swap leg roles, jump velocities,
    move the stance anchor to the landing foot."""
    q1, q2 = state.q1, state.q2
    qm, qp = impact_matrices(q1, q2, params)
    rhs0 = qm[0][0] * state.dq1 + qm[0][1] * state.dq2
    rhs1 = qm[1][0] * state.dq1 + qm[1][1] * state.dq2
    det = qp[0][0] * qp[1][1] - qp[0][1] * qp[1][0]
    scale = abs(qp[0][0] * qp[1][1]) + abs(qp[0][1] * qp[1][0])
    if not abs(det) > 1e-12 * max(scale, 1e-300):
        raise DegenerateConfiguration("impact matrix is singular; legs are collinear")
    dq1p = (qp[1][1] * rhs0 - qp[0][1] * rhs1) / det
    dq2p = (qp[0][0] * rhs1 - qp[1][0] * rhs0) / det
    dx, dy = swing_foot_offset(state, params)
    return WalkerState(
        q1=q2, q2=q1, dq1=dq1p, dq2=dq2p,
        stance_foot_x=state.stance_foot_x + dx,
        time=state.time,
        stance_foot_y=state.stance_foot_y + dy,
        stance_leg=1 - state.stance_leg,
    )


def swap_angles(q: TorquePair) -> TorquePair:
    return (q[1], q[0])


def _rk4(state: WalkerState, params: WalkerParams, torque_fn, h: float) -> WalkerState:
    def deriv(q1, q2, dq1, dq2, t):
        s = WalkerState(q1, q2, dq1, dq2, state.stance_foot_x, t, state.stance_foot_y, state.stance_leg)
        a1, a2 = continuous_dynamics(s, params, torque_fn(s))
        return dq1, dq2, a1, a2

    q1, q2, w1, w2, t = state.q1, state.q2, state.dq1, state.dq2, state.time
    k1 = deriv(q1, q2, w1, w2, t)
    hh = 0.5 * h
    k2 = deriv(q1 + hh * k1[0], q2 + hh * k1[1], w1 + hh * k1[2], w2 + hh * k1[3], t + hh)
    k3 = deriv(q1 + hh * k2[0], q2 + hh * k2[1], w1 + hh * k2[2], w2 + hh * k2[3], t + hh)
    k4 = deriv(q1 + h * k3[0], q2 + h * k3[1], w1 + h * k3[2], w2 + h * k3[3], t + h)
    c = h / 6.0
    return replace(
        state,
        q1=q1 + c * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        q2=q2 + c * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        dq1=w1 + c * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
        dq2=w2 + c * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]),
        time=t + h,
    )


def _zero_torque(state):
    return (0.0, 0.0)


def _check(state: WalkerState):
    vals = state.as_tuple()
    if not all(math.isfinite(v) for v in vals) or abs(state.dq1) > VELOCITY_BOUND or abs(state.dq2) > VELOCITY_BOUND:
        raise SimulationDiverged(f"state left the sanity bound at t={state.time:.6f}s")


def flow(state: WalkerState, params: WalkerParams, dt: float, torque_fn=None) -> WalkerState:
    """One RK4 step of the continuous dynamics with no event handling."""
    if not 0.0 < dt <= 0.01:
        raise ValueError("dt must lie in (0, 0.01] s")
    new = _rk4(state, params, torque_fn or _zero_torque, dt)
    _check(new)
    return new


def locate_event(state: WalkerState, params: WalkerParams, torque_fn, dt: float,
                 terrain_height_fn: TerrainFn | None = None, tol: float = EVENT_TIME_TOL) -> WalkerState:
    """Bisect the step fraction at which the guard crosses zero; returns the
    pre-impact state on the penetrating side of the crossing."""
    torque_fn = torque_fn or _zero_torque
    lo, hi = 0.0, dt
    hi_state = _rk4(state, params, torque_fn, dt)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        s = _rk4(state, params, torque_fn, mid)
        if heel_strike_guard(s, params, terrain_height_fn) > 0.0:
            lo = mid
        else:
            hi, hi_state = mid, s
    return hi_state


def step(state: WalkerState, params: WalkerParams, torque_fn=None, dt: float = 1e-3,
         terrain_height_fn: TerrainFn | None = None) -> tuple[WalkerState, bool]:
    """Advance one RK4 step; on a heel strike inside the step, stop at the
    event time and return the post-impact state with ``event=True``.

    ``torque_fn(state) -> (tau_stance, tau_swing)`` is evaluated at every
    RK stage.
    """
    if not 0.0 < dt <= 0.01:
        raise ValueError("dt must lie in (0, 0.01] s")
    torque_fn = torque_fn or _zero_torque
    g0 = heel_strike_guard(state, params, terrain_height_fn)
    new = _rk4(state, params, torque_fn, dt)
    _check(new)
    g1 = heel_strike_guard(new, params, terrain_height_fn)
    if g0 > 0.0 and g1 <= 0.0 and _placement_ok(new, params):
        pre = locate_event(state, params, torque_fn, dt, terrain_height_fn)
        return impact_map(pre, params), True
    return new, False
