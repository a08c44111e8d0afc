"""Fixed-timestep point-mass swarm with Reynolds flocking rules.

Agent 0 is the master: it tracks the operator's commanded center with a
PD controller on top of its flocking terms. All other agents obey the
three Reynolds rules only. Expansion rescales the separation gain so the
equilibrium inter-agent spacing grows linearly with the expansion scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

EPS_SEPARATION = 1e-6


@dataclass(frozen=True)
class ReynoldsParams:
    """Gains for the cohesion/separation/alignment acceleration terms.

    `stabilizing_alignment=True` uses the mean of (v_j - v_i), which damps
    velocity disagreement. The flipped convention (v_i - v_j) is available
    for divergence experiments but is unstable under positive gain.
    """

    k_coh: float = 1.0
    k_sep: float = 1.0
    k_ali: float = 2.0
    neighbor_mode: str = "complete"  # "complete" | "radius"
    neighbor_radius: float = 3.0
    stabilizing_alignment: bool = True

    def __post_init__(self):
        if self.k_coh < 0 or self.k_sep < 0 or self.k_ali < 0:
            raise ValueError("Reynolds gains must be non-negative")
        if self.neighbor_mode not in ("complete", "radius"):
            raise ValueError(f"unknown neighbor mode {self.neighbor_mode!r}")
        if self.neighbor_mode == "radius" and self.neighbor_radius <= 0:
            raise ValueError("neighbor radius must be positive in radius mode")


@dataclass(frozen=True)
class TrackingGains:
    kp: float = 2.0
    kd: float = 2.5


@dataclass
class AgentState:
    position: np.ndarray
    velocity: np.ndarray


@dataclass
class SwarmState:
    """Positions/velocities as (N, 3) arrays; agent 0 is the master."""

    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0
    expansion: float = 1.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.positions.shape != self.velocities.shape or self.positions.ndim != 2:
            raise ValueError("positions and velocities must both be (N, 3)")
        if self.positions.shape[0] < 2:
            raise ValueError("a swarm needs at least 2 agents")

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def agents(self) -> list[AgentState]:
        return [
            AgentState(self.positions[i].copy(), self.velocities[i].copy())
            for i in range(self.n_agents)
        ]

    def center(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def copy(self) -> "SwarmState":
        return SwarmState(
            self.positions.copy(), self.velocities.copy(), self.time, self.expansion
        )


@dataclass(frozen=True)
class SwarmCommand:
    """Operator command: 3D center setpoint plus expansion scale (4 DoF)."""

    center_setpoint: np.ndarray
    expansion_setpoint: float = 1.0

    def __post_init__(self):
        object.__setattr__(
            self, "center_setpoint", np.asarray(self.center_setpoint, dtype=float)
        )

    def as_array(self) -> np.ndarray:
        return np.append(self.center_setpoint, self.expansion_setpoint)

    def clamped(self, workspace_bounds, s_min: float = 0.5, s_max: float = 3.0):
        lo = np.array([b[0] for b in workspace_bounds])
        hi = np.array([b[1] for b in workspace_bounds])
        return SwarmCommand(
            np.clip(self.center_setpoint, lo, hi),
            float(np.clip(self.expansion_setpoint, s_min, s_max)),
        )


@dataclass
class StepDiagnostics:
    degenerate_pairs: int = 0
    expansion_clamped: bool = False


def rest_command(center=(0.0, 0.0, 0.0)) -> SwarmCommand:
    return SwarmCommand(np.asarray(center, dtype=float), 1.0)


def neighbor_indices(i: int, state: SwarmState, params: ReynoldsParams) -> np.ndarray:
    """Neighbor set of agent i: everyone else, or everyone within radius."""
    others = np.arange(state.n_agents) != i
    if params.neighbor_mode == "radius":
        dist = np.linalg.norm(state.positions - state.positions[i], axis=1)
        others &= dist <= params.neighbor_radius
    return np.nonzero(others)[0]


def cohesion_accel(i: int, state: SwarmState, params: ReynoldsParams) -> np.ndarray:
    """k_coh times the mean offset to the neighbors (pulls the flock together)."""
    nbrs = neighbor_indices(i, state, params)
    if len(nbrs) == 0:
        return np.zeros(3)
    offsets = state.positions[nbrs] - state.positions[i]
    return params.k_coh * offsets.mean(axis=0)


def separation_accel(
    i: int,
    state: SwarmState,
    params: ReynoldsParams,
    diag: StepDiagnostics | None = None,
) -> np.ndarray:
    """k_sep times the mean unit vector away from each neighbor.

    Pairs closer than EPS_SEPARATION contribute nothing (the direction is
    undefined); they still count in the averaging denominator so the term
    stays antisymmetric between the two agents involved.
    """
    nbrs = neighbor_indices(i, state, params)
    if len(nbrs) == 0:
        return np.zeros(3)
    offsets = state.positions[nbrs] - state.positions[i]
    dist = np.linalg.norm(offsets, axis=1)
    ok = dist >= EPS_SEPARATION
    if diag is not None:
        diag.degenerate_pairs += int(np.sum(~ok))
    if not np.any(ok):
        return np.zeros(3)
    units = offsets[ok] / dist[ok, None]
    return -params.k_sep * units.sum(axis=0) / len(nbrs)


def alignment_accel(i: int, state: SwarmState, params: ReynoldsParams) -> np.ndarray:
    """k_ali times the mean velocity difference with the neighbors."""
    nbrs = neighbor_indices(i, state, params)
    if len(nbrs) == 0:
        return np.zeros(3)
    sign = 1.0 if params.stabilizing_alignment else -1.0
    diffs = state.velocities[nbrs] - state.velocities[i]
    return sign * params.k_ali * diffs.mean(axis=0)


def flock_accelerations(
    state: SwarmState,
    params: ReynoldsParams,
    diag: StepDiagnostics | None = None,
) -> np.ndarray:
    """All three Reynolds terms for every agent at once, shape (N, 3).

    Vectorized equivalent of summing the three per-agent operations; the
    equality is pinned by tests.
    """
    p, v = state.positions, state.velocities
    n = state.n_agents
    diff = p[None, :, :] - p[:, None, :]  # diff[i, j] = p_j - p_i
    dist = np.linalg.norm(diff, axis=-1)
    adj = ~np.eye(n, dtype=bool)
    if params.neighbor_mode == "radius":
        adj &= dist <= params.neighbor_radius
    counts = adj.sum(axis=1)
    safe = np.maximum(counts, 1)

    coh = params.k_coh * np.where(adj[:, :, None], diff, 0.0).sum(axis=1) / safe[:, None]

    nondeg = adj & (dist >= EPS_SEPARATION)
    if diag is not None:
        diag.degenerate_pairs += int((adj & ~nondeg).sum())
    units = np.zeros_like(diff)
    np.divide(diff, dist[:, :, None], out=units, where=nondeg[:, :, None])
    sep = -params.k_sep * units.sum(axis=1) / safe[:, None]

    vdiff = v[None, :, :] - v[:, None, :]
    sign = 1.0 if params.stabilizing_alignment else -1.0
    ali = sign * params.k_ali * np.where(adj[:, :, None], vdiff, 0.0).sum(axis=1) / safe[:, None]

    total = coh + sep + ali
    total[counts == 0] = 0.0
    return total


def expansion_to_params(
    s: float,
    base: ReynoldsParams,
    s_min: float = 0.5,
    s_max: float = 3.0,
    diag: StepDiagnostics | None = None,
) -> ReynoldsParams:
    """Scale the separation gain by the expansion factor.

    The two-agent equilibrium spacing is k_sep/k_coh, so scaling k_sep by s
    scales the settled spacing linearly. Out-of-range s is clamped and
    flagged in the diagnostics.
    """
    clamped = min(max(s, s_min), s_max)
    if clamped != s and diag is not None:
        diag.expansion_clamped = True
    return replace(base, k_sep=clamped * base.k_sep)


def step(
    state: SwarmState,
    cmd: SwarmCommand,
    params: ReynoldsParams,
    dt: float,
    gains: TrackingGains = TrackingGains(),
    v_max: float = 5.0,
    expansion_rate: float = 1.0,
    s_min: float = 0.5,
    s_max: float = 3.0,
    master_tracking: bool = True,
    diag: StepDiagnostics | None = None,
) -> SwarmState:
    """Advance one fixed timestep with semi-implicit Euler.

    The master (agent 0) adds PD tracking toward the commanded center;
    slaves feel Reynolds terms only. Velocities are clamped to v_max and
    the expansion state slews toward its setpoint at `expansion_rate`.
    Non-finite inputs are rejected and the given state is left untouched.
    """
    if not (0.0 < dt <= 0.02):
        raise ValueError(f"dt must be in (0, 0.02] s, got {dt}")
    if not (
        np.all(np.isfinite(state.positions))
        and np.all(np.isfinite(state.velocities))
        and np.all(np.isfinite(cmd.center_setpoint))
        and np.isfinite(cmd.expansion_setpoint)
    ):
        raise ValueError("non-finite state or command rejected")

    effective = expansion_to_params(state.expansion, params, s_min, s_max, diag)
    acc = flock_accelerations(state, effective, diag)
    if master_tracking:
        acc[0] = acc[0] + gains.kp * (cmd.center_setpoint - state.positions[0])
        acc[0] = acc[0] - gains.kd * state.velocities[0]

    vel = state.velocities + acc * dt
    speed = np.linalg.norm(vel, axis=1)
    over = speed > v_max
    if np.any(over):
        vel[over] *= (v_max / speed[over])[:, None]
    pos = state.positions + vel * dt

    delta = np.clip(
        cmd.expansion_setpoint - state.expansion,
        -expansion_rate * dt,
        expansion_rate * dt,
    )
    expansion = float(np.clip(state.expansion + delta, s_min, s_max))

    return SwarmState(pos, vel, state.time + dt, expansion)
