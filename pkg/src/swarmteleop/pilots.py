"""Scripted synthetic operators closing the loop without humans.

Each pilot realizes one of the observed motion archetypes: moving a palm
where the swarm should be (position control), tilting the palm at the
rate the swarm should move (velocity control), or squeezing/spreading
the fingers or palms for expansion. Frames they emit are ordinary hand
frames; nothing downstream can tell them from live recordings.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .course import CourseSpec
from .kinematics import HandFrame, euler_from_angles
from .maneuvers import CalibrationScript
from .swarm import SwarmCommand

STRATEGY_KINDS = (
    "rh-position",
    "bimanual-position",
    "palm-tilt-velocity",
    "grasp-expansion",
    "palm-proximity-expansion",
)

# channel composition per archetype: (hands, translation, expansion)
_KIND_CHANNELS = {
    "rh-position": (("right",), "palm-position", "grasp"),
    "bimanual-position": (("left", "right"), "palm-position", "palm-proximity"),
    "palm-tilt-velocity": (("right",), "palm-tilt", "grasp"),
    "grasp-expansion": (("right",), "palm-position", "grasp"),
    "palm-proximity-expansion": (("left", "right"), "palm-position", "palm-proximity"),
}

REST_PALM = {
    "right": np.array([0.12, 0.04, 0.21]),
    "left": np.array([-0.12, 0.04, 0.21]),
}
# yaw, pitch, roll; small nonzero biases so integral columns carry a
# per-segment ramp (decorrelated from every reference by maneuver mirror
# symmetry) without drowning the tilt channel's own signal
REST_EULER = {
    "right": np.array([0.008, -0.008, 0.008]),
    "left": np.array([-0.008, -0.008, -0.008]),
}

# fingertip offsets in the palm frame, scaled to grasp factor 1.0
_SHAPE = np.array([
    [-0.045, 0.050, -0.012],
    [-0.020, 0.095, 0.006],
    [0.004, 0.102, 0.009],
    [0.024, 0.094, 0.005],
    [0.043, 0.071, -0.006],
])


def _grasp_of(tips):
    total = 0.0
    for i in range(5):
        for j in range(i + 1, 5):
            total += np.linalg.norm(tips[i] - tips[j])
    return total / 10.0


UNIT_TIPS = _SHAPE / _grasp_of(_SHAPE)

# nominal signal amplitudes used to convert the relative noise level into
# absolute per-channel sigmas (matching the default calibration script)
NOMINAL_CENTER_AMPLITUDE = 2.0
NOMINAL_PEAK_VELOCITY = 0.75  # smoothstep peak: 1.5 * amplitude / duration
NOMINAL_EXPANSION_DELTA = 0.8

MAX_TILT = 0.8  # rad, anatomical palm tilt limit for the velocity channel


@dataclass(frozen=True)
class PilotStrategy:
    """One synthetic operator: channel composition plus gains and noise.

    `noise_level` is relative to each channel's nominal signal amplitude,
    so 0.01 means 1%-of-amplitude Gaussian jitter on every coordinate.
    """

    kind: str
    hands: tuple[str, ...]
    translation: str  # "palm-position" | "palm-tilt" | "none"
    expansion: str    # "grasp" | "palm-proximity" | "none"
    position_gain: float = 0.05   # m of palm per m of command
    tilt_gain: float = 0.3        # rad of palm per m/s of command rate
    proximity_gain: float = 0.15  # m of palm separation per expansion unit
    grasp_rest: float = 0.08      # grasp factor at expansion 1
    noise_level: float = 0.0
    seed: int = 0

    @classmethod
    def from_kind(cls, kind: str, noise_level: float = 0.0, seed: int = 0,
                  **overrides) -> "PilotStrategy":
        if kind not in _KIND_CHANNELS:
            raise ValueError(f"unknown pilot strategy {kind!r}")
        hands, translation, expansion = _KIND_CHANNELS[kind]
        strategy = cls(kind=kind, hands=hands, translation=translation,
                       expansion=expansion, noise_level=noise_level, seed=seed)
        return replace(strategy, **overrides) if overrides else strategy


class Pilot:
    """Stateful frame generator for one strategy (owns the noise RNG)."""

    def __init__(self, strategy: PilotStrategy,
                 rest_center=(0.0, 0.0, 0.0), rest_expansion: float = 1.0):
        self.strategy = strategy
        self.rest_center = np.asarray(rest_center, dtype=float)
        self.rest_expansion = rest_expansion
        self.rng = np.random.default_rng(strategy.seed)
        s = strategy.noise_level
        self.sigma_pos = s * strategy.position_gain * NOMINAL_CENTER_AMPLITUDE
        self.sigma_rot = s * strategy.tilt_gain * NOMINAL_PEAK_VELOCITY
        self.sigma_tip = s * strategy.grasp_rest * NOMINAL_EXPANSION_DELTA

    def frames_at(self, t: float, cmd: SwarmCommand, center_vel) -> dict[str, HandFrame]:
        """Hand frames realizing the desired command at time t.

        Channels the strategy does not cover stay at their rest values
        (plus noise), which is exactly the uncovered-DoF behavior the
        learning stage has to cope with.
        """
        st = self.strategy
        center_vel = np.asarray(center_vel, dtype=float)
        offset = np.zeros(3)
        tilt = np.zeros(3)
        if st.translation == "palm-position":
            offset = st.position_gain * (cmd.center_setpoint - self.rest_center)
        elif st.translation == "palm-tilt":
            # roll tracks x-rate, pitch y-rate, yaw z-rate; saturate at an
            # anatomical tilt range (also keeps pitch clear of the Euler
            # singularity at pi/2)
            tilt = st.tilt_gain * np.array([center_vel[2], center_vel[1], center_vel[0]])
            tilt = np.clip(tilt, -MAX_TILT, MAX_TILT)
        elif st.translation != "none":
            raise ValueError(f"unknown translation channel {st.translation!r}")

        grasp = st.grasp_rest
        separation = None
        if st.expansion == "grasp":
            grasp = st.grasp_rest * cmd.expansion_setpoint
        elif st.expansion == "palm-proximity":
            separation = st.proximity_gain * cmd.expansion_setpoint
        elif st.expansion != "none":
            raise ValueError(f"unknown expansion channel {st.expansion!r}")

        frames = {}
        for hand in ("left", "right"):
            if hand not in st.hands:
                continue
            palm = REST_PALM[hand] + offset
            if separation is not None:
                mid = 0.5 * (REST_PALM["left"] + REST_PALM["right"]) + offset
                side = -0.5 if hand == "left" else 0.5
                palm = mid + np.array([side * separation, 0.0, 0.0])
            euler = REST_EULER[hand] + tilt
            if st.noise_level > 0:
                palm = palm + self.rng.normal(0.0, self.sigma_pos, 3)
                euler = euler + self.rng.normal(0.0, self.sigma_rot, 3)
            quat = euler_from_angles(*euler)
            rot = Rotation.from_quat(quat)
            tips_world = palm + rot.apply(UNIT_TIPS * grasp)
            if st.noise_level > 0:
                tips_world = tips_world + self.rng.normal(0.0, self.sigma_tip, (5, 3))
            frames[hand] = HandFrame(
                t=t,
                palm_position=palm,
                palm_orientation=quat,
                fingertips=tips_world,
                valid=True,
            )
        return frames


def pilot_frames(strategy: PilotStrategy, trajectory, t: float, dt: float,
                 pilot: Pilot | None = None) -> dict[str, HandFrame]:
    """Frames imitating `trajectory` (a t -> SwarmCommand callable) at time t."""
    pilot = pilot or Pilot(strategy)
    cmd = trajectory(t)
    if t - dt >= 0:
        prev = trajectory(t - dt)
        vel = (cmd.center_setpoint - prev.center_setpoint) / dt
    else:
        vel = np.zeros(3)
    return pilot.frames_at(t, cmd, vel)


def run_imitation(strategy: PilotStrategy, script: CalibrationScript,
                  sample_rate: float = 50.0):
    """Simulated imitation phase: time-aligned hand frames plus the
    reference command stream, with segment boundaries embedded."""
    from .sessionio import SessionData, SessionRow

    pilot = Pilot(strategy, script.rest_center, script.rest_expansion)
    dt = 1.0 / sample_rate
    n = int(round(script.total_duration * sample_rate))
    rows = []
    prev_cmd = None
    for k in range(n):
        t = k * dt
        cmd = script.command_at(t)
        if prev_cmd is None:
            vel = np.zeros(3)
        else:
            vel = (cmd.center_setpoint - prev_cmd.center_setpoint) / dt
        frames = pilot.frames_at(t, cmd, vel)
        rows.append(SessionRow(t=t, frames=frames, ref=cmd.as_array()))
        prev_cmd = cmd
    return SessionData(
        sample_rate=sample_rate,
        layout=tuple(strategy.hands),
        boundaries=list(script.boundaries),
        script_info=script.describe(),
        rows=rows,
    )


@dataclass
class FlightPlan:
    """Waypoint path through the course with per-waypoint expansion targets.

    The piecewise-linear waypoint path is resampled and zero-phase
    smoothed at construction; sharp corners would jerk the master drone
    and swing the formation out of shape right where clearance matters.
    """

    waypoints: list  # (position 3-array, expansion target)
    cruise_speed: float = 0.9
    tail_hold: float = 3.0
    start_hold: float = 4.0  # hover at the start while the interface settles
    smoothing: float = 1.5  # seconds of corner blending
    grid_dt: float = 0.02

    def __post_init__(self):
        pts = [np.asarray(p, dtype=float) for p, _ in self.waypoints]
        exps = [float(s) for _, s in self.waypoints]
        legs = [np.linalg.norm(pts[i + 1] - pts[i]) for i in range(len(pts) - 1)]
        times = [self.start_hold]
        for leg in legs:
            times.append(times[-1] + max(leg / self.cruise_speed, 1e-6))
        pts.insert(0, pts[0].copy())
        exps.insert(0, exps[0])
        times.insert(0, 0.0)
        n = int(np.ceil((times[-1] + self.tail_hold) / self.grid_dt)) + 1
        grid = np.arange(n) * self.grid_dt
        raw = np.empty((n, 4))
        for c in range(3):
            raw[:, c] = np.interp(grid, times, [p[c] for p in pts])
        raw[:, 3] = np.interp(grid, times, exps)
        window = max(int(round(self.smoothing / self.grid_dt)) | 1, 1)
        smooth = raw.copy()
        if window > 2:
            for _ in range(2):  # forward+backward pass keeps zero phase lag
                kernel = np.ones(window) / window
                padded = np.vstack([
                    np.repeat(smooth[:1], window, axis=0),
                    smooth,
                    np.repeat(smooth[-1:], window, axis=0),
                ])
                out = np.empty_like(smooth)
                for c in range(4):
                    out[:, c] = np.convolve(padded[:, c], kernel, mode="same")[
                        window:window + n
                    ]
                smooth = out
        self._grid = grid
        self._track = smooth
        vel = np.zeros((n, 3))
        vel[1:] = np.diff(smooth[:, :3], axis=0) / self.grid_dt
        self._vel = vel
        self._duration = float(grid[-1])

    @property
    def duration(self) -> float:
        return self._duration

    def desired_at(self, t: float):
        """(center, center velocity, expansion) of the desired reference."""
        if t >= self._duration:
            return self._track[-1, :3].copy(), np.zeros(3), float(self._track[-1, 3])
        k = min(int(t / self.grid_dt), len(self._grid) - 2)
        u = (t - self._grid[k]) / self.grid_dt
        row = self._track[k] * (1 - u) + self._track[k + 1] * u
        vel = self._vel[min(k + 1, len(self._vel) - 1)]
        return row[:3].copy(), vel.copy(), float(row[3])


def build_flight_plan(course: CourseSpec, cruise: float = 0.9,
                      expand_scale: float = 2.4, lead: float = 1.6,
                      expand: bool = True,
                      offset: tuple[float, float] = (-0.4, 0.1)) -> FlightPlan:
    """Gate-to-gate waypoints; expansion ramps up around obstacle gates.

    Obstacle gates get an extra alignment waypoint before the approach
    (as far back as the gap to the previous waypoint allows) so the
    lateral shift and the expansion both finish on a straight, settled
    run at the plane. With expand=False the plan never raises the
    expansion target, which is the ablation showing the obstacle gate
    cannot be passed cleanly by a contracted flock.
    """
    obstacle_gates = set()
    for obstacle in course.obstacles:
        dists = [np.linalg.norm(obstacle.center - g.center) for g in course.gates]
        obstacle_gates.add(int(np.argmin(dists)))

    waypoints = [(course.start_center.copy(), 1.0)]
    for k, gate in enumerate(course.gates):
        s = expand_scale if (expand and k in obstacle_gates) else 1.0
        shift = np.zeros(3)
        if k in obstacle_gates:
            # the master rides the commanded line, so the line itself must
            # miss the sphere; the offset steers it into the gap of the
            # settled formation pattern so every agent threads past
            u_axis, v_axis = gate.axes()
            shift = offset[0] * u_axis + offset[1] * v_axis
            gap = float(np.dot(gate.center - waypoints[-1][0], gate.normal))
            align_lead = min(2.8 * lead, max(gap - 0.4, lead))
            if align_lead > lead:
                waypoints.append((gate.center + shift - align_lead * gate.normal, s))
        waypoints.append((gate.center + shift - lead * gate.normal, s))
        waypoints.append((gate.center + shift + lead * gate.normal, s))
    # settle back to nominal spacing after the last gate
    waypoints.append((waypoints[-1][0] + course.gates[-1].normal * 0.5, 1.0))
    return FlightPlan(waypoints, cruise_speed=cruise)


class FlyingPilot:
    """Closes the loop like a human: follows the plan, corrects what it sees.

    Position-style channels get the corrected target directly. The tilt
    channel receives the plan velocity, a gentle proportional term on the
    observed center error (the swarm answers slowly, so hot gains
    oscillate), and a sustained bias that makes up for the runtime's
    integral leak, the way an operator learns to keep leaning on a
    slowly-recentering control.
    """

    def __init__(self, strategy: PilotStrategy, plan: FlightPlan,
                 pos_feedback: float = 1.0, vel_feedback: float = 0.5,
                 vel_damping: float = 1.2, expansion_feedback: float = 1.0,
                 leak_feedforward: float = 0.05):
        self.plan = plan
        self.pilot = Pilot(strategy)
        self.pos_feedback = pos_feedback
        self.vel_feedback = vel_feedback
        self.vel_damping = vel_damping
        self.expansion_feedback = expansion_feedback
        self.leak_feedforward = leak_feedforward
        self.home = np.asarray(plan.waypoints[0][0], dtype=float)
        self._last_err = None
        self._last_t = None

    def frames_at(self, t: float, observed_center, observed_expansion) -> dict[str, HandFrame]:
        des_pos, des_vel, des_s = self.plan.desired_at(t)
        err = des_pos - np.asarray(observed_center, dtype=float)
        if self._last_err is None or t <= self._last_t:
            derr = np.zeros(3)
        else:
            derr = (err - self._last_err) / (t - self._last_t)
        self._last_err = err
        self._last_t = t
        corr_pos = des_pos + self.pos_feedback * err
        corr_vel = (
            des_vel
            + self.vel_feedback * err
            + self.vel_damping * derr
            + self.leak_feedforward * (des_pos - self.home)
        )
        corr_s = des_s + self.expansion_feedback * (des_s - observed_expansion)
        cmd = SwarmCommand(corr_pos, corr_s)
        return self.pilot.frames_at(t, cmd, corr_vel)
