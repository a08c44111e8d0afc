"""Gated evaluation course: crossing detection, collisions, run metrics.

The default course has four rectangular gates at varied altitude/depth
and a sphere obstacle centered in gate 2 sized so a non-expanded flock
cannot clear it. Gate crossings are detected on the swarm center
(mean agent position) and are direction-sensitive; collisions are agent
spheres against obstacle spheres and gate frame bars, debounced per
(agent, object) pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

COURSE_FORMAT = "swarmteleop-course"
COURSE_VERSION = 1


@dataclass(frozen=True)
class Gate:
    center: np.ndarray
    normal: np.ndarray
    half_width: float
    half_height: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        normal = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(normal)
        if norm < 1e-9:
            raise ValueError("gate normal must be nonzero")
        object.__setattr__(self, "normal", normal / norm)
        if self.half_width <= 0 or self.half_height <= 0:
            raise ValueError("gate half-extents must be positive")

    def axes(self):
        """In-plane unit axes (u along width, v along height)."""
        cached = getattr(self, "_axes", None)
        if cached is not None:
            return cached
        up = np.array([0.0, 0.0, 1.0])
        if abs(np.dot(up, self.normal)) > 0.99:
            up = np.array([1.0, 0.0, 0.0])
        u = np.cross(up, self.normal)
        u /= np.linalg.norm(u)
        v = np.cross(self.normal, u)
        object.__setattr__(self, "_axes", (u, v))
        return u, v

    def corners(self) -> np.ndarray:
        cached = getattr(self, "_corners", None)
        if cached is not None:
            return cached
        u, v = self.axes()
        w, h = self.half_width, self.half_height
        corners = np.stack([
            self.center + w * u + h * v,
            self.center - w * u + h * v,
            self.center - w * u - h * v,
            self.center + w * u - h * v,
        ])
        object.__setattr__(self, "_corners", corners)
        return corners


@dataclass(frozen=True)
class SphereObstacle:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


@dataclass
class CourseSpec:
    gates: list[Gate]
    obstacles: list[SphereObstacle]
    start_center: np.ndarray
    start_expansion: float = 1.0
    drone_radius: float = 0.1
    frame_bar_radius: float = 0.05
    version: int = COURSE_VERSION
    name: str = "default"

    def __post_init__(self):
        self.start_center = np.asarray(self.start_center, dtype=float)

    def to_dict(self) -> dict:
        return {
            "format": COURSE_FORMAT,
            "version": self.version,
            "name": self.name,
            "start_center": self.start_center.tolist(),
            "start_expansion": self.start_expansion,
            "drone_radius": self.drone_radius,
            "frame_bar_radius": self.frame_bar_radius,
            "gates": [
                {
                    "center": g.center.tolist(),
                    "normal": g.normal.tolist(),
                    "half_width": g.half_width,
                    "half_height": g.half_height,
                }
                for g in self.gates
            ],
            "obstacles": [
                {"center": o.center.tolist(), "radius": o.radius}
                for o in self.obstacles
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CourseSpec":
        if data.get("format") != COURSE_FORMAT:
            raise ValueError("not a course file")
        if data.get("version") != COURSE_VERSION:
            raise ValueError(f"unsupported course version {data.get('version')}")
        return cls(
            gates=[
                Gate(
                    g["center"], g["normal"], g["half_width"], g["half_height"]
                )
                for g in data["gates"]
            ],
            obstacles=[
                SphereObstacle(o["center"], o["radius"])
                for o in data.get("obstacles", [])
            ],
            start_center=data["start_center"],
            start_expansion=data.get("start_expansion", 1.0),
            drone_radius=data.get("drone_radius", 0.1),
            frame_bar_radius=data.get("frame_bar_radius", 0.05),
            name=data.get("name", "unnamed"),
        )


def load_course(path) -> CourseSpec:
    with open(path) as fh:
        return CourseSpec.from_dict(json.load(fh))


def gate_crossing_point(p_prev, p_next, gate: Gate) -> np.ndarray | None:
    """Aperture intersection point if the segment crosses the gate plane
    along the normal direction; None otherwise."""
    p_prev = np.asarray(p_prev, dtype=float)
    p_next = np.asarray(p_next, dtype=float)
    s_prev = float(np.dot(p_prev - gate.center, gate.normal))
    s_next = float(np.dot(p_next - gate.center, gate.normal))
    if not (s_prev < 0.0 <= s_next):
        return None
    frac = -s_prev / (s_next - s_prev)
    point = p_prev + frac * (p_next - p_prev)
    u, v = gate.axes()
    offset = point - gate.center
    if abs(np.dot(offset, u)) <= gate.half_width and abs(np.dot(offset, v)) <= gate.half_height:
        return point
    return None


def gate_crossing(p_prev, p_next, gate: Gate) -> bool:
    return gate_crossing_point(p_prev, p_next, gate) is not None


def _point_segment_distance(point, a, b) -> float:
    ab = b - a
    denom = float(np.dot(ab, ab))
    t = 0.0 if denom == 0 else float(np.clip(np.dot(point - a, ab) / denom, 0.0, 1.0))
    return float(np.linalg.norm(point - (a + t * ab)))


class _CourseGeometry:
    """Flattened course arrays for vectorized contact checks."""

    def __init__(self, course: CourseSpec):
        self.obstacle_centers = (
            np.stack([o.center for o in course.obstacles])
            if course.obstacles else np.zeros((0, 3))
        )
        self.obstacle_radii = np.array([o.radius for o in course.obstacles])
        seg_a, seg_b, labels = [], [], []
        for k, gate in enumerate(course.gates):
            corners = gate.corners()
            for e in range(4):
                seg_a.append(corners[e])
                seg_b.append(corners[(e + 1) % 4])
                labels.append(f"gate{k + 1}-frame")
        self.seg_a = np.stack(seg_a) if seg_a else np.zeros((0, 3))
        self.seg_ab = (np.stack(seg_b) - self.seg_a) if seg_a else np.zeros((0, 3))
        self.seg_len2 = np.maximum(np.sum(self.seg_ab ** 2, axis=1), 1e-12)
        self.seg_labels = labels


def _geometry(course: CourseSpec) -> _CourseGeometry:
    geo = getattr(course, "_geometry", None)
    if geo is None:
        geo = _CourseGeometry(course)
        course._geometry = geo
    return geo


def agent_contacts(positions: np.ndarray, course: CourseSpec) -> list[tuple[int, str]]:
    """(agent index, object label) for every agent/object pair in contact."""
    geo = _geometry(course)
    pos = np.asarray(positions, dtype=float)
    r_d = course.drone_radius
    contacts = []
    if len(geo.obstacle_radii):
        # (agents, obstacles) distance matrix
        d = np.linalg.norm(pos[:, None, :] - geo.obstacle_centers[None], axis=2)
        hit = d < (geo.obstacle_radii[None] + r_d)
        for i, k in zip(*np.nonzero(hit)):
            contacts.append((int(i), f"obstacle{k}"))
    if len(geo.seg_a):
        rel = pos[:, None, :] - geo.seg_a[None]  # (agents, segments, 3)
        t = np.clip(
            np.einsum("isk,sk->is", rel, geo.seg_ab) / geo.seg_len2, 0.0, 1.0
        )
        nearest = geo.seg_a[None] + t[:, :, None] * geo.seg_ab[None]
        d = np.linalg.norm(pos[:, None, :] - nearest, axis=2)
        hit = d < (course.frame_bar_radius + r_d)
        seen = set()
        for i, s in zip(*np.nonzero(hit)):
            key = (int(i), geo.seg_labels[s])
            if key not in seen:
                seen.add(key)
                contacts.append(key)
    return contacts


@dataclass(frozen=True)
class CollisionEvent:
    t: float
    agent: int
    obj: str

    def to_dict(self):
        return {"t": self.t, "agent": self.agent, "object": self.obj}


class CollisionTracker:
    """Emits an event at contact onset, debounced per (agent, object).

    Re-contact within the debounce window is merged into the previous
    event, so an agent chattering against a surface counts once.
    """

    def __init__(self, course: CourseSpec, debounce: float = 0.5):
        self.course = course
        self.debounce = debounce
        self._in_contact: set = set()
        self._last_event: dict = {}
        self.events: list[CollisionEvent] = []

    def observe(self, t: float, positions: np.ndarray) -> list[CollisionEvent]:
        now = set(agent_contacts(positions, self.course))
        fresh = []
        for key in sorted(now - self._in_contact):
            last = self._last_event.get(key)
            if last is None or (t - last) >= self.debounce:
                event = CollisionEvent(t, key[0], key[1])
                self.events.append(event)
                fresh.append(event)
            self._last_event[key] = t
        for key in now & self._in_contact:
            self._last_event[key] = t
        self._in_contact = now
        return fresh


@dataclass
class RunMetrics:
    """Timing and collision summary for one course run."""

    total_time: float
    segment_times: list[float]
    collisions: list[CollisionEvent]
    completed: bool
    gates_crossed: int

    def to_dict(self) -> dict:
        return {
            "total_time": self.total_time,
            "segment_times": list(self.segment_times),
            "collisions": [c.to_dict() for c in self.collisions],
            "collision_count": len(self.collisions),
            "completed": self.completed,
            "gates_crossed": self.gates_crossed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunMetrics":
        return cls(
            total_time=data["total_time"],
            segment_times=list(data["segment_times"]),
            collisions=[
                CollisionEvent(c["t"], c["agent"], c["object"])
                for c in data.get("collisions", [])
            ],
            completed=data["completed"],
            gates_crossed=data["gates_crossed"],
        )


@dataclass
class TrajectoryLog:
    t: np.ndarray
    positions: np.ndarray  # (n, N, 3)

    def centers(self) -> np.ndarray:
        return self.positions.mean(axis=1)


def score_run(log: TrajectoryLog, course: CourseSpec) -> RunMetrics:
    """Recompute gate crossings and collisions from a trajectory log.

    Gates must be crossed in order; out-of-order crossings are ignored.
    Segment k is the time between crossing gate k-1 and gate k, with the
    run start standing in for gate 0.
    """
    centers = log.centers()
    tracker = CollisionTracker(course)
    next_gate = 0
    crossing_times = []
    tracker.observe(float(log.t[0]), log.positions[0])
    for k in range(1, len(log.t)):
        tracker.observe(float(log.t[k]), log.positions[k])
        if next_gate < len(course.gates) and gate_crossing(
            centers[k - 1], centers[k], course.gates[next_gate]
        ):
            crossing_times.append(float(log.t[k]))
            next_gate += 1
    completed = next_gate >= len(course.gates)
    start_t = float(log.t[0])
    segments = list(np.diff([start_t] + crossing_times))
    total = (crossing_times[-1] - start_t) if crossing_times else float(log.t[-1]) - start_t
    return RunMetrics(
        total_time=float(total),
        segment_times=[float(s) for s in segments],
        collisions=list(tracker.events),
        completed=completed,
        gates_crossed=next_gate,
    )


def kruskal_wallis(groups) -> tuple[float, float]:
    """Rank-based H statistic with tie correction and chi-square p-value.

    All-identical pooled data is the degenerate case where every rank ties:
    H is defined as 0 with p = 1.
    """
    groups = [np.asarray(g, dtype=float) for g in groups]
    if len(groups) < 2 or any(len(g) == 0 for g in groups):
        raise ValueError("kruskal_wallis needs >= 2 non-empty groups")
    pooled = np.concatenate(groups)
    n = len(pooled)
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(n)
    sorted_vals = pooled[order]
    i = 0
    tie_sizes = []
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        if j > i:
            tie_sizes.append(j - i + 1)
        i = j + 1

    offset = 0
    h = 0.0
    for g in groups:
        r = ranks[offset:offset + len(g)]
        h += r.sum() ** 2 / len(g)
        offset += len(g)
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    tie_term = sum(t ** 3 - t for t in tie_sizes)
    correction = 1.0 - tie_term / (n ** 3 - n)
    if correction <= 0:
        return 0.0, 1.0
    h /= correction
    p = float(chi2.sf(h, len(groups) - 1))
    return float(h), p
