import numpy as np
import pytest

from exowalk.runs import run_fixed
from exowalk.simulation import HybridTrajectory


@pytest.fixture(scope="session")
def flat_runs():
    """Unassisted and assisted flat-ground runs on the same reference gait."""
    return {beta: run_fixed(beta, duration=30.0) for beta in (0.0, 2.3)}


def synthetic_gait(period=1.2, n_cycles=6, rate=1000.0, amp=0.3, beta=2.0):
    """Anti-phase sinusoidal hips with a heel strike every half period,
    alternating legs, and exo torque proportional to velocity."""
    t = np.arange(0.0, n_cycles * period + 1e-9, 1.0 / rate)
    w = 2 * np.pi / period
    qa = amp * np.sin(w * t + np.pi / 2)
    qb = -qa
    va, vb = amp * w * np.cos(w * t + np.pi / 2), -amp * w * np.cos(w * t + np.pi / 2)
    event = np.zeros(len(t), dtype=bool)
    stance = np.zeros(len(t), dtype=int)
    half = int(round(period / 2 * rate))
    for k, i in enumerate(range(0, len(t), half)):
        event[i] = True
        stance[i:i + half] = k % 2
    event[0] = True
    angles = np.column_stack([qa, qb])
    vel = np.column_stack([va, vb])
    return HybridTrajectory(time=t, angles=angles, velocities=vel, tau_exo=beta * vel,
                            tau_hum=np.zeros_like(vel), event=event, stance_leg=stance)


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
