"""Windowed kinematic features and Bayesian optimisation of the assistance gain.

Every 2 s window yields hip range of motion and mean absolute jerk; their
scaled difference is the objective.  A Gaussian process (Matern 5/2,
constant mean) over beta with expected improvement picks the next gain.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy.stats import norm, qmc

WINDOW_SPAN = 2.0
SLEW_LIMIT = 0.5


class ShortWindow(ValueError):
    pass


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class WindowFeatures:
    q_rom: float
    jerk_mean: float
    window_span: float = WINDOW_SPAN


def _zero_phase_lowpass(x: np.ndarray, cutoff: float, rate: float) -> np.ndarray:
    sos = signal.butter(2, cutoff, btype="low", fs=rate, output="sos")
    pad = min(len(x) - 1, int(rate / cutoff))
    return signal.sosfiltfilt(sos, x, axis=0, padtype="odd", padlen=pad)


def extract_features(window, sample_rate: float, span: float = WINDOW_SPAN,
                     filter_cutoff: float = 4.0) -> WindowFeatures:
    """ROM from the raw angles; jerk from three central differences of the
    zero-phase low-passed angles.  Both are averaged over the legs."""
    x = np.asarray(window, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if not sample_rate >= 100:
        raise ValueError("sample_rate must be at least 100 Hz")
    expected = int(round(span * sample_rate))
    if x.shape[0] < expected:
        raise ShortWindow(f"window has {x.shape[0]} samples, needs {expected}")
    if not np.all(np.isfinite(x)):
        raise SignalError("window contains NaN or inf")
    rom = float(np.mean(np.ptp(x, axis=0)))
    h = 1.0 / sample_rate
    smooth = _zero_phase_lowpass(x - x.mean(axis=0), filter_cutoff, sample_rate)
    jerk = np.gradient(np.gradient(np.gradient(smooth, h, axis=0), h, axis=0), h, axis=0)
    return WindowFeatures(rom, float(np.mean(np.abs(jerk))), span)


def objective(features: WindowFeatures, rom_scale: float = 1.0, jerk_scale: float = 0.01) -> float:
    if not (rom_scale > 0 and jerk_scale > 0):
        raise ValueError("scales must be positive")
    return rom_scale * features.q_rom - jerk_scale * features.jerk_mean


@dataclass(frozen=True)
class TrialRecord:
    beta: float
    features: WindowFeatures
    objective: float
    timestamp: float

    def to_json(self) -> str:
        return json.dumps({"t_start_s": self.timestamp, "beta": self.beta, "q_rom_rad": self.features.q_rom,
                           "jerk_mean_rads3": self.features.jerk_mean, "f_obj": self.objective})

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        d = json.loads(line)
        return cls(d["beta"], WindowFeatures(d["q_rom_rad"], d["jerk_mean_rads3"]), d["f_obj"], d["t_start_s"])


# -- Gaussian process ------------------------------------------------------

def matern52(x1: np.ndarray, x2: np.ndarray, length_scale: float) -> np.ndarray:
    r = np.abs(x1[:, None] - x2[None, :]) * (math.sqrt(5.0) / length_scale)
    return (1.0 + r + r * r / 3.0) * np.exp(-r)


class GaussianProcess:
    """1-D GP regression on standardised targets with per-point noise."""

    def __init__(self, x, y, length_scale: float, noise):
        self.x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self.mean = float(np.mean(y))
        sd = float(np.std(y))
        self.scale = sd if sd > 1e-12 else 1.0
        self.z = (y - self.mean) / self.scale
        self.length_scale = length_scale
        noise = np.broadcast_to(np.asarray(noise, dtype=float), self.x.shape)
        k = matern52(self.x, self.x, length_scale) + np.diag(noise)
        self.chol = np.linalg.cholesky(k)
        self.alpha = np.linalg.solve(self.chol.T, np.linalg.solve(self.chol, self.z))

    def log_marginal_likelihood(self) -> float:
        return float(-0.5 * self.z @ self.alpha - np.sum(np.log(np.diag(self.chol)))
                     - 0.5 * len(self.z) * math.log(2 * math.pi))

    def predict(self, xs):
        xs = np.asarray(xs, dtype=float)
        ks = matern52(xs, self.x, self.length_scale)
        mu = ks @ self.alpha
        v = np.linalg.solve(self.chol, ks.T)
        var = np.maximum(1.0 - np.sum(v * v, axis=0), 1e-18)
        return self.mean + self.scale * mu, self.scale * np.sqrt(var)


def expected_improvement(mu, sigma, best: float, xi: float = 0.0):
    """EI for maximisation; non-negative by construction."""
    mu, sigma = np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float)
    imp = mu - best - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, imp / sigma, 0.0)
    ei = np.where(sigma > 0, imp * norm.cdf(z) + sigma * norm.pdf(z), np.maximum(imp, 0.0))
    return np.maximum(ei, 0.0)


LENGTH_SCALE_GRID = np.geomspace(0.05, 3.0, 40)
NOISE_GRID = np.geomspace(1e-4, 1.0, 13)


def fit_hyperparameters(x, y, weights, length_grid=LENGTH_SCALE_GRID, noise_grid=NOISE_GRID):
    """Maximum-likelihood ``(length_scale, noise_level)`` over fixed log grids.

    The per-point noise is ``noise_level * weights``; a single-entry
    ``noise_grid`` reduces this to a length-scale-only fit.
    """
    weights = np.asarray(weights, dtype=float)
    best, best_ll = (float(length_grid[len(length_grid) // 2]), float(noise_grid[0])), -math.inf
    for nl in noise_grid:
        for ls in length_grid:
            try:
                ll = GaussianProcess(x, y, float(ls), nl * weights).log_marginal_likelihood()
            except np.linalg.LinAlgError:
                continue
            if ll > best_ll:
                best, best_ll = (float(ls), float(nl)), ll
    return best


def fit_length_scale(x, y, noise, grid=LENGTH_SCALE_GRID) -> float:
    """Maximum-likelihood length scale over a fixed log grid at fixed noise."""
    return fit_hyperparameters(x, y, noise, grid, np.array([1.0]))[0]


@dataclass
class OptimizerState:
    """Append-only trial history plus surrogate settings.

    The observation noise (on standardised targets) is fitted together with
    the length scale and never drops below ``noise_floor``; ``fit_noise=False``
    pins it to the floor.  ``memory`` (in trials) down-weights old
    observations by inflating their noise by ``exp(age / memory)``; ``None``
    weights every trial equally.
    """

    beta_min: float = 1.0
    beta_max: float = 2.5
    rng_seed: int = 0
    length_scale: float = 0.5
    noise_floor: float = 1e-4
    n_init: int = 5
    refit_every: int = 5
    grid_step: float = 0.01
    memory: float | None = None
    fit_noise: bool = True
    history: list = field(default_factory=list)
    _fits: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def record(self, trial: TrialRecord):
        if not self.beta_min - 1e-12 <= trial.beta <= self.beta_max + 1e-12:
            raise ValueError(f"trial beta {trial.beta} outside bounds")
        self.history.append(trial)

    @property
    def grid(self) -> np.ndarray:
        n = int(round((self.beta_max - self.beta_min) / self.grid_step))
        return self.beta_min + self.grid_step * np.arange(n + 1)

    def initial_design(self) -> np.ndarray:
        pts = qmc.Halton(d=1, scramble=True, seed=self.rng_seed).random(self.n_init)[:, 0]
        return self.beta_min + (self.beta_max - self.beta_min) * pts

    def weights(self, n: int) -> np.ndarray:
        """Relative noise multipliers, newest trial last."""
        if self.memory is None:
            return np.ones(n)
        age = np.arange(n - 1, -1, -1, dtype=float)
        return np.exp(age / self.memory)

    def noise(self, n: int) -> np.ndarray:
        return self.noise_floor * self.weights(n)

    def hyperparameters(self) -> tuple:
        """``(length_scale, noise_level)``, refitted on the first multiple of
        ``refit_every`` trials in the history."""
        n = len(self.history) // self.refit_every * self.refit_every
        if n < self.refit_every:
            return self.length_scale, self.noise_floor
        x = np.array([t.beta for t in self.history[:n]])
        y = np.array([t.objective for t in self.history[:n]])
        key = (x.tobytes(), y.tobytes(), self.memory, self.fit_noise, self.noise_floor)
        if key not in self._fits:
            grid = NOISE_GRID[NOISE_GRID >= self.noise_floor] if self.fit_noise else np.array([self.noise_floor])
            if grid.size == 0:
                grid = np.array([self.noise_floor])
            self._fits[key] = fit_hyperparameters(x, y, self.weights(n), noise_grid=grid)
        return self._fits[key]

    def current_length_scale(self) -> float:
        return self.hyperparameters()[0]

    def surrogate(self) -> GaussianProcess:
        x = np.array([t.beta for t in self.history])
        y = np.array([t.objective for t in self.history])
        ls, nl = self.hyperparameters()
        return GaussianProcess(x, y, ls, nl * self.weights(len(x)))

    def best(self) -> TrialRecord | None:
        if not self.history:
            return None
        return max(self.history, key=lambda t: t.objective)


def suggest_beta(state: OptimizerState) -> float:
    """Next gain: space-filling for the first ``n_init`` trials, then the EI
    maximiser on a uniform grid.  A pure function of history and seed."""
    n = len(state.history)
    if n < state.n_init:
        return float(state.initial_design()[n])
    gp = state.surrogate()
    grid = state.grid
    mu, sd = gp.predict(grid)
    # incumbent: best posterior mean at the tried gains (equals the best
    # observation when the fitted noise sits at the floor)
    best = float(np.max(gp.predict(np.array([t.beta for t in state.history]))[0]))
    ei = expected_improvement(mu, sd, best)
    if not np.any(ei > 0):
        return float(grid[int(np.argmax(mu))])
    return float(grid[int(np.argmax(ei))])


def slew(current: float, target: float, limit: float = SLEW_LIMIT) -> float:
    return current + min(max(target - current, -limit), limit)


def bo_maximize(f, state: OptimizerState, n_trials: int) -> OptimizerState:
    """Plain BO loop on a callable ``f(beta) -> objective`` (no slew limit)."""
    for i in range(n_trials):
        b = suggest_beta(state)
        state.record(TrialRecord(b, WindowFeatures(0.0, 0.0), float(f(b)), float(i)))
    return state


# -- online loop -----------------------------------------------------------

@dataclass(frozen=True)
class WindowResult:
    t_start: float
    beta: float
    features: WindowFeatures
    f_obj: float
    next_beta: float

    def trial(self) -> TrialRecord:
        return TrialRecord(self.beta, self.features, self.f_obj, self.t_start)


def adaptive_loop(stream, optimizer: OptimizerState, n_windows: int, span: float = WINDOW_SPAN,
                  rom_scale: float = 1.0, jerk_scale: float = 0.01, slew_limit: float = SLEW_LIMIT,
                  on_window=None) -> list:
    """Close a window every ``span`` seconds, log the trial for the gain that
    was active, and apply the next suggestion (slew-limited).

    ``stream`` provides ``beta`` (read/write), ``sample_rate`` and
    ``next_window(span) -> (t_start, angles)``.
    """
    results = []
    beta = stream.beta
    for _ in range(n_windows):
        t_start, angles = stream.next_window(span)
        feats = extract_features(angles, stream.sample_rate, span)
        f = objective(feats, rom_scale, jerk_scale)
        optimizer.record(TrialRecord(beta, feats, f, t_start))
        target = suggest_beta(optimizer)
        nxt = min(max(slew(beta, target, slew_limit), optimizer.beta_min), optimizer.beta_max)
        res = WindowResult(t_start, beta, feats, f, nxt)
        results.append(res)
        if on_window is not None:
            on_window(res)
        beta = nxt
        stream.beta = beta
    return results
