"""Terrain protocols as timed segments.

Stairs are folded into an equivalent ground slope for the compass guard.
Segment slopes follow the walking convention (positive = uphill); the walker
itself uses positive = downhill, so the sign flips in :func:`terrain_at`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Callable, Sequence

MAX_SLOPE = 0.35
DEFAULT_RUN = 0.29
# walkable stand-ins for a staircase (the geometric stair angle is far steeper)
DEFAULT_STAIR_SLOPE = 0.04


class ScenarioError(ValueError):
    pass


class Terrain(str, Enum):
    FLAT = "FlatWalk"
    ASCEND = "StairsAscend"
    DESCEND = "StairsDescend"

    @property
    def tag(self) -> str:
        return {"FlatWalk": "FW", "StairsAscend": "SA", "StairsDescend": "SD"}[self.value]


_ALIASES = {t.value: t for t in Terrain} | {t.tag: t for t in Terrain}


@dataclass(frozen=True)
class ScenarioSegment:
    terrain: Terrain
    duration: float
    effective_slope: float = 0.0
    speed_scale: float = 1.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ScenarioError("duration must be positive")
        if not abs(self.effective_slope) <= MAX_SLOPE:
            raise ScenarioError(f"|effective_slope| must not exceed {MAX_SLOPE} rad")
        if not self.speed_scale > 0:
            raise ScenarioError("speed_scale must be positive")
        s = self.effective_slope
        if self.terrain is Terrain.FLAT and s != 0.0:
            raise ScenarioError("FlatWalk segments must have zero slope")
        if self.terrain is Terrain.ASCEND and not s > 0:
            raise ScenarioError("StairsAscend needs a positive (uphill) slope")
        if self.terrain is Terrain.DESCEND and not s < 0:
            raise ScenarioError("StairsDescend needs a negative (downhill) slope")

    def to_dict(self) -> dict:
        return {"terrain": self.terrain.value, "duration_s": self.duration,
                "slope_rad": self.effective_slope, "speed_scale": self.speed_scale}


@dataclass(frozen=True)
class Scenario:
    segments: tuple
    name: str = ""

    def __post_init__(self):
        if not self.segments:
            raise ScenarioError("scenario has no segments")

    @property
    def total_duration(self) -> float:
        return math.fsum(s.duration for s in self.segments)

    @property
    def boundaries(self) -> list:
        out, acc = [0.0], 0.0
        for s in self.segments:
            acc += s.duration
            out.append(acc)
        return out

    def index_at(self, t: float) -> int:
        """Half-open lookup: a boundary belongs to the later segment; the
        final instant belongs to the last segment."""
        b = self.boundaries
        if not 0.0 <= t <= b[-1] + 1e-9:
            raise ScenarioError(f"t={t} outside [0, {b[-1]}]")
        for i in range(len(self.segments)):
            if t < b[i + 1]:
                return i
        return len(self.segments) - 1

    def segment_at(self, t: float) -> ScenarioSegment:
        return self.segments[self.index_at(t)]

    def ground_slope_at(self, t: float) -> float:
        """Walker-convention slope (positive = downhill)."""
        return -self.segment_at(min(max(t, 0.0), self.total_duration)).effective_slope

    def phase_at(self, t: float, frequency: float, offset: float = 0.0):
        """Reference phase and phase rate with per-segment speed scaling."""
        b = self.boundaries
        tc = max(t, 0.0)
        acc = 0.0
        for i, seg in enumerate(self.segments):
            last = i == len(self.segments) - 1
            if tc < b[i + 1] or last:
                acc += seg.speed_scale * (tc - b[i])
                w = 2.0 * math.pi * frequency
                return offset + w * acc, w * seg.speed_scale
            acc += seg.speed_scale * seg.duration
        raise AssertionError("unreachable")

    def to_list(self) -> list:
        return [s.to_dict() for s in self.segments]

    def serialize(self) -> str:
        return json.dumps(self.to_list(), indent=2) + "\n"


def terrain_at(scenario: Scenario, t: float):
    """Active segment and the ground-height function for the heel-strike guard.

    The height function is relative to the current stance foot, so the
    ground under the stance foot never jumps when the segment changes.
    """
    seg = scenario.segment_at(t)
    rise = math.tan(seg.effective_slope)
    return seg, (lambda dx: dx * rise)


def _segment_from_dict(d, i: int) -> ScenarioSegment:
    where = f"segment {i}"
    if not isinstance(d, dict):
        raise ScenarioError(f"{where}: expected an object")
    known = {"terrain", "duration_s", "slope_rad", "rise_m", "run_m", "speed_scale"}
    extra = set(d) - known
    if extra:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(extra)}")
    tag = d.get("terrain")
    if tag not in _ALIASES:
        raise ScenarioError(f"{where}: field 'terrain': unknown terrain {tag!r}")
    terrain = _ALIASES[tag]
    if "duration_s" not in d:
        raise ScenarioError(f"{where}: field 'duration_s' missing")
    if "slope_rad" in d and "rise_m" in d:
        raise ScenarioError(f"{where}: give either 'slope_rad' or 'rise_m', not both")
    try:
        duration = float(d["duration_s"])
        speed = float(d.get("speed_scale", 1.0))
        if "slope_rad" in d:
            slope = float(d["slope_rad"])
        elif "rise_m" in d:
            slope = math.atan2(float(d["rise_m"]), float(d.get("run_m", DEFAULT_RUN)))
            if terrain is Terrain.DESCEND:
                slope = -slope
        else:
            slope = {Terrain.FLAT: 0.0, Terrain.ASCEND: DEFAULT_STAIR_SLOPE,
                     Terrain.DESCEND: -DEFAULT_STAIR_SLOPE}[terrain]
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None
    try:
        return ScenarioSegment(terrain, duration, slope, speed)
    except ScenarioError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def parse_scenario(text: str, name: str = "") -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if isinstance(data, dict) and "segments" in data:
        data = data["segments"]
    if not isinstance(data, list):
        raise ScenarioError("line 1: expected a list of segments")
    return Scenario(tuple(_segment_from_dict(d, i) for i, d in enumerate(data)), name=name)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), name=str(path))


def bundled(name: str = "terrain-path") -> Scenario:
    """Load a scenario shipped with the package."""
    text = resources.files("exowalk.data").joinpath(f"{name}.scenario").read_text(encoding="utf-8")
    return parse_scenario(text, name=name)


def flat(duration: float, speed_scale: float = 1.0) -> Scenario:
    return Scenario((ScenarioSegment(Terrain.FLAT, duration, 0.0, speed_scale),), name="flat")
