"""Session orchestration: state machine, simulation tick, headless runs.

One engine owns one swarm timeline (single-writer). Clients only queue
input frames and read snapshots; the tick consumes at most one queued
frame so identical input sequences give identical trajectories. The
headless helpers (calibrate / train / fly with a scripted pilot) drive
the same engine code the service exposes over the wire.
"""

from __future__ import annotations

import importlib.resources
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import AppConfig
from .course import CollisionTracker, CourseSpec, RunMetrics, TrajectoryLog, gate_crossing, score_run
from .kinematics import HandFrame, build_dataset
from .learning import MappingModel, strategy_report, train_interface
from .maneuvers import CalibrationScript, build_script
from .pilots import FlyingPilot, PilotStrategy, build_flight_plan, run_imitation
from .runtime import RuntimeState, init_runtime, process_frame
from .sessionio import SessionData, SessionRow
from .swarm import ReynoldsParams, SwarmCommand, SwarmState, TrackingGains, step


class SessionPhase(str, Enum):
    IDLE = "idle"
    CALIBRATING = "calibrating"
    TRAINING = "training"
    READY = "ready"
    FLYING = "flying"
    FINISHED = "finished"


_TRANSITIONS = {
    SessionPhase.IDLE: {SessionPhase.CALIBRATING},
    SessionPhase.CALIBRATING: {SessionPhase.TRAINING, SessionPhase.IDLE},
    SessionPhase.TRAINING: {SessionPhase.READY, SessionPhase.IDLE},
    SessionPhase.READY: {SessionPhase.FLYING, SessionPhase.CALIBRATING},
    SessionPhase.FLYING: {SessionPhase.FINISHED, SessionPhase.READY},
    SessionPhase.FINISHED: {SessionPhase.IDLE, SessionPhase.READY},
}


class InvalidTransition(RuntimeError):
    pass


class SessionStateMachine:
    def __init__(self, initial: SessionPhase = SessionPhase.IDLE):
        self.phase = initial

    def to(self, target: SessionPhase):
        if target not in _TRANSITIONS[self.phase]:
            raise InvalidTransition(f"cannot go {self.phase.value} -> {target.value}")
        self.phase = target


def default_course() -> CourseSpec:
    ref = importlib.resources.files("swarmteleop.data") / "default_course.json"
    import json

    return CourseSpec.from_dict(json.loads(ref.read_text()))


def initial_formation(n: int, center, spacing: float) -> np.ndarray:
    """Equilibrium formation around `center`.

    For 4 agents: a regular tetrahedron oriented so every vertex keeps the
    same lateral distance from the y (flight) axis; the complete-graph
    equilibrium edge length equals k_sep/k_coh for any regular simplex.
    """
    center = np.asarray(center, dtype=float)
    if n == 4:
        verts = np.array(
            [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float
        )
        verts *= spacing / np.sqrt(8.0)
        return center + verts
    angles = 2 * np.pi * np.arange(n) / n
    radius = spacing / max(2 * np.sin(np.pi / n), 1e-9)
    ring = np.stack(
        [radius * np.cos(angles), np.zeros(n), radius * np.sin(angles)], axis=1
    )
    return center + ring


@dataclass
class InputMessage:
    seq: int
    frames: dict[str, HandFrame] | None


@dataclass
class EngineEvent:
    t: float
    kind: str
    payload: dict = field(default_factory=dict)


class SessionEngine:
    """Owns the swarm timeline and the calibrate -> train -> fly flow."""

    def __init__(
        self,
        config: AppConfig | None = None,
        course: CourseSpec | None = None,
        model: MappingModel | None = None,
        script: CalibrationScript | None = None,
    ):
        self.config = config or AppConfig()
        self.course = course or default_course()
        self.script = script or build_script(self.config.script)
        sim = self.config.simulation
        self.params = ReynoldsParams(
            k_coh=sim.k_coh,
            k_sep=sim.k_sep,
            k_ali=sim.k_ali,
            neighbor_mode=sim.neighbor_mode,
            neighbor_radius=sim.neighbor_radius,
            stabilizing_alignment=sim.stabilizing_alignment,
        )
        self.gains = TrackingGains(sim.track_kp, sim.track_kd)
        self.dt = sim.dt
        self.model = model
        self.machine = SessionStateMachine(
            SessionPhase.READY if model is not None else SessionPhase.IDLE
        )
        self.inputs: deque[InputMessage] = deque(maxlen=256)
        self.events: list[EngineEvent] = []
        self.runtime: RuntimeState | None = None
        self.session: SessionData | None = None
        self.report: dict | None = None
        self.metrics: RunMetrics | None = None
        self.last_input_seq: int = -1
        self.hold = False
        self.next_gate = 0
        self.crossing_times: list[float] = []
        self.tracker: CollisionTracker | None = None
        self.fly_log_t: list[float] = []
        self.fly_log_pos: list[np.ndarray] = []
        self._phase_ticks = 0
        self._recording: list[SessionRow] = []
        self._last_frame_tick_t: float | None = None
        self.command = SwarmCommand(self.course.start_center.copy(), 1.0)
        self.reset_swarm()

    # --- lifecycle -------------------------------------------------------

    @property
    def phase(self) -> SessionPhase:
        return self.machine.phase

    @property
    def _phase_t(self) -> float:
        # tick count times dt (not accumulated) so phase boundaries land
        # exactly and recorded timestamps match offline-generated sessions
        return self._phase_ticks * self.dt

    def reset_swarm(self):
        sim = self.config.simulation
        spacing = sim.k_sep / max(sim.k_coh, 1e-9)
        positions = initial_formation(
            sim.n_agents, self.course.start_center, spacing
        )
        self.swarm = SwarmState(
            positions, np.zeros_like(positions), 0.0, self.course.start_expansion
        )
        self.command = SwarmCommand(self.course.start_center.copy(), 1.0)

    def start_calibration(self):
        self.machine.to(SessionPhase.CALIBRATING)
        self._phase_ticks = 0
        self._recording = []
        self._last_frame_tick_t = None
        self.session = None
        home = SwarmState(
            initial_formation(
                self.config.simulation.n_agents,
                (0.0, 0.0, 1.5),
                self.config.simulation.k_sep / self.config.simulation.k_coh,
            ),
            np.zeros((self.config.simulation.n_agents, 3)),
            self.swarm.time,
            1.0,
        )
        self.swarm = home
        self.events.append(EngineEvent(self.swarm.time, "calibration_started"))

    def finish_calibration(self, layout) -> SessionData:
        self.session = SessionData(
            sample_rate=self.config.features.sample_rate,
            layout=tuple(layout),
            boundaries=list(self.script.boundaries),
            script_info=self.script.describe(),
            rows=self._recording,
        )
        self.machine.to(SessionPhase.TRAINING)
        self.events.append(EngineEvent(self.swarm.time, "calibration_finished"))
        return self.session

    def run_training(self, session: SessionData | None = None) -> MappingModel:
        """Train on the recorded (or given) session; TRAINING -> READY."""
        session = session or self.session
        if session is None:
            raise RuntimeError("no calibration session to train on")
        if self.phase is not SessionPhase.TRAINING:
            self.machine.to(SessionPhase.TRAINING)
        dataset = build_dataset(
            session.as_tuples(),
            session.layout,
            session.boundaries,
            self.config.features.sample_rate,
        )
        self.model = train_interface(
            dataset, self.config.features, session.layout
        )
        self.report = strategy_report(dataset)
        self.machine.to(SessionPhase.READY)
        self.events.append(EngineEvent(self.swarm.time, "training_finished"))
        return self.model

    def start_flight(self):
        if self.model is None:
            raise InvalidTransition("flying requires a trained or loaded model")
        self.machine.to(SessionPhase.FLYING)
        self.reset_swarm()
        self.runtime = init_runtime(
            self.model,
            self.config.runtime,
            self.config.workspace,
            rest=SwarmCommand(self.course.start_center.copy(), 1.0),
            s_range=(
                self.config.simulation.expansion_min,
                self.config.simulation.expansion_max,
            ),
        )
        self.tracker = CollisionTracker(self.course)
        self.next_gate = 0
        self.crossing_times = []
        self.fly_log_t = [0.0]
        self.fly_log_pos = [self.swarm.positions.copy()]
        self._phase_ticks = 0
        self._last_frame_tick_t = None
        self.metrics = None
        self.events.append(EngineEvent(self.swarm.time, "flight_started"))

    def abort(self):
        if self.phase is SessionPhase.FLYING:
            self._finish_flight(completed=False)
        elif self.phase in (SessionPhase.CALIBRATING, SessionPhase.TRAINING):
            self.machine.to(SessionPhase.IDLE)

    def reset(self):
        self.machine.phase = (
            SessionPhase.READY if self.model is not None else SessionPhase.IDLE
        )
        self.reset_swarm()
        self.inputs.clear()
        self.hold = False

    # --- inputs ----------------------------------------------------------

    def submit_input(self, seq: int, frames: dict[str, HandFrame] | None):
        self.inputs.append(InputMessage(seq, frames))

    def _consume_input(self) -> InputMessage | None:
        """Latest-wins: at most one frame per tick, newer frames shadow older."""
        if not self.inputs:
            return None
        msg = self.inputs.pop()
        self.inputs.clear()
        return msg

    # --- per-tick advance -------------------------------------------------

    def tick(self):
        phase = self.phase
        if phase is SessionPhase.CALIBRATING:
            self._tick_calibrating()
        elif phase is SessionPhase.FLYING:
            self._tick_flying()
        else:
            # holding pattern: keep tracking the rest command
            self.swarm = step(
                self.swarm, self.command, self.params, self.dt,
                self.gains, self.config.simulation.v_max,
                self.config.simulation.expansion_rate,
                self.config.simulation.expansion_min,
                self.config.simulation.expansion_max,
            )

    def _tick_calibrating(self):
        t = self._phase_t
        if t >= self.script.total_duration:
            if self._recording:
                order = [h for h in ("left", "right") if h in self._recording[0].frames]
                self.finish_calibration(tuple(order))
            else:
                self.machine.to(SessionPhase.IDLE)
            return
        ref = self.script.command_at(t)
        # during calibration the script drives the swarm; the operator only mimics
        shifted = SwarmCommand(
            ref.center_setpoint + np.array([0.0, 0.0, 1.5]), ref.expansion_setpoint
        )
        msg = self._consume_input()
        if msg is not None and msg.frames is not None:
            self.last_input_seq = msg.seq
            self._recording.append(
                SessionRow(t=t, frames=msg.frames, ref=ref.as_array())
            )
        self.swarm = step(
            self.swarm, shifted, self.params, self.dt,
            self.gains, self.config.simulation.v_max,
            self.config.simulation.expansion_rate,
            self.config.simulation.expansion_min,
            self.config.simulation.expansion_max,
        )
        self._phase_ticks += 1

    def _tick_flying(self):
        msg = self._consume_input()
        if msg is not None:
            self.last_input_seq = msg.seq
            if self._last_frame_tick_t is None:
                frame_dt = 1.0 / self.config.features.sample_rate
            else:
                frame_dt = max(self._phase_t - self._last_frame_tick_t, 1e-6)
            self._last_frame_tick_t = self._phase_t
            self.command = process_frame(self.runtime, msg.frames, frame_dt)
            self.hold = self.runtime.hold
        else:
            starved_since = self._last_frame_tick_t or 0.0
            if self._phase_t - starved_since > self.config.runtime.hold_timeout:
                self.hold = True
        prev_center = self.swarm.center()
        self.swarm = step(
            self.swarm, self.command, self.params, self.dt,
            self.gains, self.config.simulation.v_max,
            self.config.simulation.expansion_rate,
            self.config.simulation.expansion_min,
            self.config.simulation.expansion_max,
        )
        self._phase_ticks += 1
        center = self.swarm.center()
        self.fly_log_t.append(self._phase_t)
        self.fly_log_pos.append(self.swarm.positions.copy())
        self.tracker.observe(self._phase_t, self.swarm.positions)
        if self.next_gate < len(self.course.gates) and gate_crossing(
            prev_center, center, self.course.gates[self.next_gate]
        ):
            self.crossing_times.append(self._phase_t)
            self.next_gate += 1
            self.events.append(
                EngineEvent(self._phase_t, "gate_crossed", {"gate": self.next_gate})
            )
            if self.next_gate >= len(self.course.gates):
                self._finish_flight(completed=True)

    def _finish_flight(self, completed: bool):
        segments = list(np.diff([0.0] + self.crossing_times))
        total = self.crossing_times[-1] if self.crossing_times and completed else self._phase_t
        self.metrics = RunMetrics(
            total_time=float(total),
            segment_times=[float(s) for s in segments],
            collisions=list(self.tracker.events) if self.tracker else [],
            completed=completed,
            gates_crossed=self.next_gate,
        )
        self.machine.to(SessionPhase.FINISHED)
        self.events.append(
            EngineEvent(self._phase_t, "flight_finished", self.metrics.to_dict())
        )

    def flight_log(self) -> TrajectoryLog:
        return TrajectoryLog(
            np.asarray(self.fly_log_t), np.stack(self.fly_log_pos)
        )

    # --- snapshots ---------------------------------------------------------

    def snapshot(self) -> dict:
        cal = None
        if self.phase is SessionPhase.CALIBRATING:
            idx = self.script.segment_index(self._phase_t)
            cal = {
                "maneuver_index": idx,
                "maneuver": self.script.segments[idx].kind,
                "progress": min(self._phase_t / self.script.total_duration, 1.0),
                "reference": self.script.command_at(self._phase_t).as_array().tolist(),
            }
        return {
            "phase": self.phase.value,
            "sim_time": self.swarm.time,
            "agents": self.swarm.positions.tolist(),
            "velocities": self.swarm.velocities.tolist(),
            "expansion": self.swarm.expansion,
            "command": {
                "center": self.command.center_setpoint.tolist(),
                "expansion": self.command.expansion_setpoint,
            },
            "hold": self.hold,
            "next_gate": self.next_gate + 1 if self.phase is SessionPhase.FLYING else None,
            "crossings": list(self.crossing_times),
            "collision_count": len(self.tracker.events) if self.tracker else 0,
            "last_input_seq": self.last_input_seq,
            "calibration": cal,
            "metrics": self.metrics.to_dict() if self.metrics else None,
        }


# --- headless pipeline ----------------------------------------------------


def calibrate_with_pilot(
    strategy: PilotStrategy, config: AppConfig | None = None
) -> SessionData:
    config = config or AppConfig()
    script = build_script(config.script)
    return run_imitation(strategy, script, config.features.sample_rate)


def train_on_session(
    session: SessionData, config: AppConfig | None = None
) -> tuple[MappingModel, dict]:
    config = config or AppConfig()
    dataset = build_dataset(
        session.as_tuples(),
        session.layout,
        session.boundaries,
        config.features.sample_rate,
    )
    model = train_interface(dataset, config.features, session.layout)
    return model, strategy_report(dataset)


def fly_with_pilot(
    model: MappingModel,
    course: CourseSpec,
    strategy: PilotStrategy,
    config: AppConfig | None = None,
    expand: bool = True,
    timeout: float = 120.0,
    cruise: float = 0.9,
    plan: "FlightPlan | None" = None,
) -> tuple[RunMetrics, TrajectoryLog]:
    """Closed loop: plan -> pilot hands -> mapping runtime -> swarm.

    The pilot sees the swarm center and expansion each frame (as a human
    watching the scene would) and corrects its hand motion accordingly.
    """
    config = config or AppConfig()
    engine = SessionEngine(config, course, model=model)
    if plan is None:
        plan = build_flight_plan(course, cruise=cruise, expand=expand)
    pilot = FlyingPilot(strategy, plan)
    engine.start_flight()
    frame_interval = 1.0 / config.features.sample_rate
    ticks_per_frame = max(int(round(frame_interval / config.simulation.dt)), 1)
    seq = 0
    max_ticks = int(timeout / config.simulation.dt)
    for k in range(max_ticks):
        if engine.phase is not SessionPhase.FLYING:
            break
        if k % ticks_per_frame == 0:
            t = k * config.simulation.dt
            frames = pilot.frames_at(
                t, engine.swarm.center(), engine.swarm.expansion
            )
            engine.submit_input(seq, frames)
            seq += 1
        engine.tick()
    if engine.phase is SessionPhase.FLYING:
        engine.abort()
    return engine.metrics, engine.flight_log()


def verify_metrics(metrics: RunMetrics, log: TrajectoryLog, course: CourseSpec) -> bool:
    """Independent recount of a run's metrics from its trajectory log."""
    recount = score_run(log, course)
    return (
        recount.gates_crossed == metrics.gates_crossed
        and len(recount.collisions) == len(metrics.collisions)
        and abs(recount.total_time - metrics.total_time) < 1e-6
    )
