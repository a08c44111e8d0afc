"""Pydantic models for the REST API and the websocket wire protocol.

Wire messages are JSON objects tagged by a `type` field: hello,
snapshot, input, command, metrics and error. Golden fixtures for each
live in protocol/fixtures/ and are validated by both the Python and the
cockpit test suites.
"""

from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator

from ..kinematics import HandFrame

PROTOCOL_VERSION = 1


class HandFramePayload(BaseModel):
    palm: list[float] = Field(min_length=3, max_length=3)
    quat: list[float] = Field(min_length=4, max_length=4)
    tips: list[list[float]] = Field(min_length=5, max_length=5)
    valid: bool = True

    @field_validator("tips")
    @classmethod
    def _tip_shape(cls, tips):
        for tip in tips:
            if len(tip) != 3:
                raise ValueError("each fingertip needs 3 coordinates")
        return tips

    def to_frame(self, t: float) -> HandFrame:
        return HandFrame(
            t=t,
            palm_position=np.array(self.palm, dtype=float),
            palm_orientation=np.array(self.quat, dtype=float),
            fingertips=np.array(self.tips, dtype=float),
            valid=self.valid,
        )

    @classmethod
    def from_frame(cls, frame: HandFrame) -> "HandFramePayload":
        return cls(
            palm=frame.palm_position.tolist(),
            quat=frame.palm_orientation.tolist(),
            tips=frame.fingertips.tolist(),
            valid=frame.valid,
        )


class HelloMessage(BaseModel):
    type: Literal["hello"] = "hello"
    version: int = PROTOCOL_VERSION
    role: Literal["cockpit", "replay", "observer"] = "cockpit"
    name: str = ""


class HelloReply(BaseModel):
    type: Literal["hello"] = "hello"
    version: int = PROTOCOL_VERSION
    server: str = "swarmteleop"
    phase: str
    n_agents: int
    course: str


class InputFrameMessage(BaseModel):
    """Raw hand pose payload; all preprocessing stays server-side."""

    type: Literal["input"] = "input"
    seq: int
    t: float
    hands: dict[str, HandFramePayload]

    def to_frames(self) -> dict[str, HandFrame]:
        return {h: p.to_frame(self.t) for h, p in self.hands.items()}


class CommandMessage(BaseModel):
    type: Literal["command"] = "command"
    action: Literal[
        "start_calibration", "start_training", "start_flight", "reset", "stop"
    ]


class CalibrationStatus(BaseModel):
    maneuver_index: int
    maneuver: str
    progress: float
    reference: list[float]


class CommandEcho(BaseModel):
    center: list[float]
    expansion: float


class SnapshotMessage(BaseModel):
    type: Literal["snapshot"] = "snapshot"
    seq: int
    phase: str
    sim_time: float
    agents: list[list[float]]
    expansion: float
    command: CommandEcho
    hold: bool
    next_gate: int | None = None
    crossings: list[float] = []
    collision_count: int = 0
    last_input_seq: int = -1
    calibration: CalibrationStatus | None = None
    metrics: dict | None = None


class MetricsMessage(BaseModel):
    type: Literal["metrics"] = "metrics"
    completed: bool
    total_time: float
    segment_times: list[float]
    collision_count: int
    gates_crossed: int


class ErrorMessage(BaseModel):
    type: Literal["error"] = "error"
    code: str
    message: str


# --- REST bodies -----------------------------------------------------------


class CalibrateRequest(BaseModel):
    strategy: str = "rh-position"
    noise_level: float = 0.01
    seed: int = 0
    out: str | None = None


class CalibrateResponse(BaseModel):
    rows: int
    duration: float
    layout: list[str]
    boundaries: list[float]
    out: str | None = None


class TrainRequest(BaseModel):
    session: str
    out: str | None = None


class SelectedFeature(BaseModel):
    name: str
    tag: str


class DofSummary(BaseModel):
    dof: str
    selected: list[SelectedFeature]
    ridge: float
    control_style: str  # "position" | "velocity" | "mixed"


class TrainResponse(BaseModel):
    dofs: list[DofSummary]
    report: dict
    out: str | None = None
    session_hash: str


class FlyRequest(BaseModel):
    model: str
    course: str | None = None
    strategy: str = "rh-position"
    noise_level: float = 0.01
    seed: int = 0
    expand: bool = True
    out: str | None = None


class FlyResponse(BaseModel):
    completed: bool
    total_time: float
    segment_times: list[float]
    collision_count: int
    gates_crossed: int
    out: str | None = None


class EvaluateRequest(BaseModel):
    metrics: list[str]
    group_by: str = "strategy"


class GroupSummary(BaseModel):
    group: str
    runs: int
    mean_total_time: float
    median_total_time: float
    mean_collisions: float
    completion_rate: float


class KruskalResult(BaseModel):
    measure: str
    h_statistic: float
    p_value: float
    groups: list[str]


class EvaluateResponse(BaseModel):
    groups: list[GroupSummary]
    kruskal: list[KruskalResult]


class ReplayRequest(BaseModel):
    session: str
    speed: float = 1.0


class StateResponse(BaseModel):
    phase: str
    sim_time: float
    snapshot: SnapshotMessage
