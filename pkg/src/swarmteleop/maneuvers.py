"""Calibration maneuvers: timed reference trajectories for the swarm.

Eight maneuver kinds cover the four command DoF (x, y, z, expansion) in
mirrored pairs. Each maneuver ramps from the rest command to a displaced
pose along a smoothstep, then (at script level) returns to rest during
the first part of its rest period and holds there until the next one.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .config import ScriptConfig
from .swarm import SwarmCommand

MANEUVER_KINDS = (
    "right", "left", "up", "down", "front", "back", "expand", "contract",
)

# axis index and direction for translational maneuvers (x right, y front, z up)
_TRANSLATIONS = {
    "right": (0, 1.0),
    "left": (0, -1.0),
    "front": (1, 1.0),
    "back": (1, -1.0),
    "up": (2, 1.0),
    "down": (2, -1.0),
}
_EXPANSIONS = {"expand": 1.0, "contract": -1.0}


def smoothstep(u: float) -> float:
    """3u^2 - 2u^3 with u clamped to [0, 1]; zero slope at both ends."""
    u = min(max(u, 0.0), 1.0)
    return u * u * (3.0 - 2.0 * u)


@dataclass(frozen=True)
class Maneuver:
    kind: str
    amplitude: float  # meters, or expansion delta for expand/contract
    duration: float
    rest_after: float = 0.0

    def __post_init__(self):
        if self.kind not in MANEUVER_KINDS:
            raise ValueError(f"unknown maneuver kind {self.kind!r}")
        if self.duration <= 0 or self.amplitude <= 0:
            raise ValueError("maneuver duration and amplitude must be positive")
        if self.rest_after < 0:
            raise ValueError("rest_after must be non-negative")


def maneuver_trajectory(
    m: Maneuver,
    t: float,
    rest_center=(0.0, 0.0, 0.0),
    rest_expansion: float = 1.0,
) -> SwarmCommand:
    """Commanded reference at time t into the maneuver, t clamped to [0, duration]."""
    s = smoothstep(t / m.duration)
    center = np.asarray(rest_center, dtype=float).copy()
    expansion = rest_expansion
    if m.kind in _TRANSLATIONS:
        axis, direction = _TRANSLATIONS[m.kind]
        center[axis] += direction * m.amplitude * s
    else:
        expansion += _EXPANSIONS[m.kind] * m.amplitude * s
    return SwarmCommand(center, expansion)


@dataclass(frozen=True)
class CalibrationScript:
    """Ordered maneuvers with precomputed segment boundary timestamps.

    `boundaries` holds each segment's start time; the per-maneuver
    integral reset in the feature pipeline keys off these. One segment
    spans maneuver playback plus its return leg and rest hold.
    """

    maneuvers: tuple[Maneuver, ...]
    repetitions: int = 1
    return_duration: float = 1.0
    rest_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rest_expansion: float = 1.0
    boundaries: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not self.maneuvers:
            raise ValueError("script needs at least one maneuver")
        starts = []
        t = 0.0
        for _ in range(self.repetitions):
            for m in self.maneuvers:
                starts.append(t)
                t += m.duration + m.rest_after
        object.__setattr__(self, "boundaries", tuple(starts))
        object.__setattr__(self, "_total", t)

    @property
    def total_duration(self) -> float:
        return self._total

    @property
    def segments(self) -> list[Maneuver]:
        return list(self.maneuvers) * self.repetitions

    def segment_index(self, t: float) -> int:
        idx = bisect.bisect_right(self.boundaries, t) - 1
        return min(max(idx, 0), len(self.boundaries) - 1)

    def command_at(self, t: float) -> SwarmCommand:
        """Full-script reference: maneuver, smoothstep return, rest hold."""
        idx = self.segment_index(t)
        m = self.segments[idx]
        phase = t - self.boundaries[idx]
        rest = SwarmCommand(np.asarray(self.rest_center, float), self.rest_expansion)
        if phase <= m.duration:
            return maneuver_trajectory(m, phase, self.rest_center, self.rest_expansion)
        ret = min(self.return_duration, m.rest_after)
        back = phase - m.duration
        if ret > 0 and back < ret:
            displaced = maneuver_trajectory(
                m, m.duration, self.rest_center, self.rest_expansion
            )
            u = smoothstep(back / ret)
            center = displaced.center_setpoint * (1 - u) + rest.center_setpoint * u
            expansion = displaced.expansion_setpoint * (1 - u) + rest.expansion_setpoint * u
            return SwarmCommand(center, expansion)
        return rest

    def reference_array(self, times: np.ndarray) -> np.ndarray:
        return np.stack([self.command_at(float(t)).as_array() for t in times])

    def describe(self) -> dict:
        """Script facts embedded in session files (same for live and
        synthetic recordings, so identical runs produce identical files)."""
        return {
            "kinds": [m.kind for m in self.maneuvers],
            "amplitudes": [m.amplitude for m in self.maneuvers],
            "duration": self.maneuvers[0].duration,
            "rest_after": self.maneuvers[0].rest_after,
            "return_duration": self.return_duration,
            "repetitions": self.repetitions,
        }


def build_script(cfg: ScriptConfig) -> CalibrationScript:
    """Deterministic calibration script from config; validates DoF coverage."""
    covered = set()
    maneuvers = []
    for kind in cfg.order:
        if kind in _TRANSLATIONS:
            amplitude = cfg.amplitude
            covered.add(_TRANSLATIONS[kind][0])
        elif kind in _EXPANSIONS:
            amplitude = cfg.expansion_delta
            covered.add(3)
        else:
            raise ValueError(f"unknown maneuver kind {kind!r}")
        maneuvers.append(
            Maneuver(kind, amplitude, cfg.duration, cfg.rest_after)
        )
    missing = {0: "1 (x)", 1: "2 (y)", 2: "3 (z)", 3: "4 (expansion)"}
    for dof in sorted(set(missing) - covered):
        raise ValueError(f"script leaves DoF {missing[dof]} uncovered")
    return CalibrationScript(
        maneuvers=tuple(maneuvers),
        repetitions=cfg.repetitions,
        return_duration=cfg.return_duration,
    )
