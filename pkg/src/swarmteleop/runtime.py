"""Applies a trained mapping to a live hand-frame stream.

Calibration-time integrals reset at maneuver boundaries; live operation
has no boundaries, so the runtime keeps leaky integrals instead (decay
rho) which approximate pure integration over maneuver-length horizons
while staying bounded. Invalid or stale tracking holds the last command.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import RuntimeConfig, WorkspaceConfig
from .kinematics import EulerUnwrapper, HandFrame, assemble_vector
from .learning import DOF_NAMES, MappingModel
from .swarm import SwarmCommand


@dataclass
class RuntimeState:
    model: MappingModel
    integrals: np.ndarray
    last_command: SwarmCommand
    hold: bool = False
    last_frame_t: float | None = None
    unwrappers: dict = field(default_factory=dict)
    leak: float = 0.05
    hold_timeout: float = 0.2
    center_slew: float = 2.0
    expansion_slew: float = 1.0
    workspace_bounds: list | None = None
    s_min: float = 0.5
    s_max: float = 3.0

    @property
    def n_raw(self) -> int:
        return len(self.integrals)


def init_runtime(
    model: MappingModel,
    cfg: RuntimeConfig | None = None,
    workspace: WorkspaceConfig | None = None,
    rest: SwarmCommand | None = None,
    available_hands=("left", "right"),
    s_range=(0.5, 3.0),
) -> RuntimeState:
    """Fresh runtime state: zero integrals, rest command, no hold."""
    cfg = cfg or RuntimeConfig()
    missing = [h for h in model.layout if h not in available_hands]
    if missing:
        raise ValueError(
            f"model needs hand(s) {missing} not present in the input layout"
        )
    n_raw = sum(1 for tag in model.column_tags if tag == "raw")
    n_int = model.n_columns - n_raw
    if n_int != n_raw:
        raise ValueError("model layout must pair every raw column with an integral")
    if rest is None:
        rest = SwarmCommand(np.zeros(3), 1.0)
    return RuntimeState(
        model=model,
        integrals=np.zeros(n_raw),
        last_command=rest,
        unwrappers={h: EulerUnwrapper() for h in model.layout},
        leak=cfg.integral_leak,
        hold_timeout=cfg.hold_timeout,
        center_slew=cfg.center_slew,
        expansion_slew=cfg.expansion_slew,
        workspace_bounds=workspace.bounds() if workspace else None,
        s_min=s_range[0],
        s_max=s_range[1],
    )


def _normalize(rt: RuntimeState, features: np.ndarray) -> np.ndarray:
    m = rt.model
    z = np.zeros_like(features)
    active = ~m.constant_mask
    z[active] = (features[active] - m.mean[active]) / m.sigma[active]
    return z


def process_frame(
    rt: RuntimeState,
    frames: dict[str, HandFrame] | None,
    dt: float,
) -> SwarmCommand:
    """One fixed-rate runtime tick: frames in, slew-limited command out.

    Leaky integral update I <- I*exp(-rho*dt) + x*dt, then the model's
    per-DoF affine map over the z-scored selected features, then slew-rate
    limiting and workspace clamping against the previous command. Invalid,
    missing or stale frames freeze the command and set the hold flag.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    model = rt.model

    raw = None
    if frames is not None:
        t = min((f.t for f in frames.values()), default=None)
        stale = (
            t is not None
            and rt.last_frame_t is not None
            and (t - rt.last_frame_t) > rt.hold_timeout
        )
        if not stale:
            raw = assemble_vector(frames, model.layout, rt.unwrappers)
        if t is not None:
            rt.last_frame_t = t

    if raw is None or not np.all(np.isfinite(raw)):
        rt.hold = True
        return rt.last_command
    rt.hold = False

    rt.integrals = rt.integrals * np.exp(-rt.leak * dt) + raw * dt
    features = np.concatenate([raw, rt.integrals])
    z = _normalize(rt, features)

    out = np.empty(4)
    for j, dof in enumerate(DOF_NAMES):
        m = next(d for d in model.dofs if d.dof == dof)
        out[j] = float(np.dot(m.weights, z[m.indices]) + m.intercept)

    prev = rt.last_command.as_array()
    limit = np.array([rt.center_slew * dt] * 3 + [rt.expansion_slew * dt])
    limited = prev + np.clip(out - prev, -limit, limit)
    cmd = SwarmCommand(limited[:3], float(limited[3]))
    if rt.workspace_bounds is not None:
        cmd = cmd.clamped(rt.workspace_bounds, rt.s_min, rt.s_max)
    else:
        cmd = SwarmCommand(
            cmd.center_setpoint,
            float(np.clip(cmd.expansion_setpoint, rt.s_min, rt.s_max)),
        )
    rt.last_command = cmd
    return cmd
