"""Hand pose streams to the 22-variable-per-hand kinematic dataset.

Per tracked hand: palm position (3), unwrapped palm yaw/pitch/roll (3),
five fingertip positions expressed in the palm frame (15), and the grasp
factor (1). Calibration datasets append one running-integral column per
raw column, reset at every maneuver boundary, then z-normalize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

FINGERS = ("thumb", "index", "middle", "ring", "pinky")
VARS_PER_HAND = 22
QUAT_TOL = 1e-6
CONSTANT_SIGMA = 1e-9


@dataclass
class HandFrame:
    """One timestamped sample of palm pose plus five fingertips (world frame).

    The quaternion is scalar-last [x, y, z, w] and maps palm-frame vectors
    into the world frame.
    """

    t: float
    palm_position: np.ndarray
    palm_orientation: np.ndarray
    fingertips: np.ndarray  # (5, 3)
    valid: bool = True

    def __post_init__(self):
        self.palm_position = np.asarray(self.palm_position, dtype=float)
        self.palm_orientation = np.asarray(self.palm_orientation, dtype=float)
        self.fingertips = np.asarray(self.fingertips, dtype=float)
        if self.fingertips.shape != (5, 3):
            raise ValueError("a hand frame needs exactly 5 fingertip positions")
        if self.palm_orientation.shape != (4,):
            raise ValueError("palm orientation must be a quaternion [x, y, z, w]")
        if self.valid:
            if not (
                np.isfinite(self.palm_position).all()
                and np.isfinite(self.palm_orientation).all()
                and np.isfinite(self.fingertips).all()
            ):
                raise ValueError("hand frame coordinates must be finite")
            if abs(np.linalg.norm(self.palm_orientation) - 1.0) > QUAT_TOL:
                raise ValueError("palm quaternion must be unit-norm")


def relative_fingertip(q_palm, p_palm, p_tip) -> np.ndarray:
    """Fingertip position expressed in the palm frame.

    q_palm maps palm to world, so the offset (p_tip - p_palm) is rotated by
    its inverse. The result is invariant under rigid motions of the whole
    hand, which is what makes these coordinates useful synergy variables.
    """
    q = np.asarray(q_palm, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
        raise ValueError("palm quaternion must be unit-norm")
    offset = np.asarray(p_tip, dtype=float) - np.asarray(p_palm, dtype=float)
    return Rotation.from_quat(q).inv().apply(offset)


def grasp_factor(tips: np.ndarray) -> float:
    """Mean distance over the 10 unordered fingertip pairs (hand closure)."""
    tips = np.asarray(tips, dtype=float)
    total = 0.0
    for i in range(5):
        for j in range(i + 1, 5):
            total += float(np.linalg.norm(tips[i] - tips[j]))
    return total / 10.0


def palm_euler(q_palm) -> np.ndarray:
    """Palm rotation as intrinsic yaw-pitch-roll (z-y-x), radians."""
    return Rotation.from_quat(np.asarray(q_palm, dtype=float)).as_euler("ZYX")


def euler_from_angles(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Quaternion [x, y, z, w] from intrinsic yaw-pitch-roll."""
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_quat()


class EulerUnwrapper:
    """Keeps consecutive Euler samples within pi of the previous ones.

    Angle extraction wraps at +-pi; a continuous palm sweep must not jump,
    or the integral columns pick up spikes.
    """

    def __init__(self):
        self.last: np.ndarray | None = None

    def update(self, angles: np.ndarray) -> np.ndarray:
        angles = np.asarray(angles, dtype=float)
        if self.last is not None:
            angles = angles + np.round((self.last - angles) / (2 * np.pi)) * 2 * np.pi
        self.last = angles
        return angles

    def reset(self):
        self.last = None


def hand_variable_names(hand: str) -> list[str]:
    names = [f"{hand}.palm_px", f"{hand}.palm_py", f"{hand}.palm_pz",
             f"{hand}.palm_yaw", f"{hand}.palm_pitch", f"{hand}.palm_roll"]
    for finger in FINGERS:
        names += [f"{hand}.{finger}_x", f"{hand}.{finger}_y", f"{hand}.{finger}_z"]
    names.append(f"{hand}.grasp")
    return names


def layout_variable_names(layout) -> list[str]:
    """Raw variable names for a hand layout; left block first when both hands."""
    order = [h for h in ("left", "right") if h in layout]
    if not order:
        raise ValueError("layout must include 'left' and/or 'right'")
    names = []
    for hand in order:
        names += hand_variable_names(hand)
    return names


def hand_vector(frame: HandFrame, unwrapper: EulerUnwrapper | None = None) -> np.ndarray:
    """The 22 kinematic variables for one hand frame."""
    rotation = Rotation.from_quat(frame.palm_orientation)
    angles = rotation.as_euler("ZYX")
    if unwrapper is not None:
        angles = unwrapper.update(angles)
    rel = rotation.inv().apply(frame.fingertips - frame.palm_position)
    return np.concatenate([
        frame.palm_position, angles, rel.reshape(-1), [grasp_factor(rel)]
    ])


def assemble_vector(
    frames: dict[str, HandFrame],
    layout,
    unwrappers: dict[str, EulerUnwrapper] | None = None,
) -> np.ndarray | None:
    """Concatenated kinematic vector for the layout, or None when tracking
    is invalid for any required hand (the runtime turns that into a hold)."""
    order = [h for h in ("left", "right") if h in layout]
    if not order:
        raise ValueError("layout must include 'left' and/or 'right'")
    blocks = []
    for hand in order:
        frame = frames.get(hand)
        if frame is None or not frame.valid:
            return None
        unwrapper = unwrappers.get(hand) if unwrappers else None
        blocks.append(hand_vector(frame, unwrapper))
    return np.concatenate(blocks)


@dataclass
class CalibrationDataset:
    """Time-aligned feature matrix X and 4-DoF reference matrix Y.

    X holds the raw kinematic columns followed by their running
    integrals; `column_tags` marks each as "raw" or "integral". Mean and
    sigma are the pre-normalization per-column moments (population sigma).
    """

    t: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    column_names: list[str]
    column_tags: list[str]
    boundary_indices: np.ndarray
    mean: np.ndarray | None = None
    sigma: np.ndarray | None = None
    constant_mask: np.ndarray | None = None
    normalized: bool = False

    def __post_init__(self):
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y must have the same number of rows")
        if len(self.column_names) != self.X.shape[1]:
            raise ValueError("column names must match X columns")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]


def running_integrals(
    X: np.ndarray, t: np.ndarray, boundary_indices
) -> np.ndarray:
    """Trapezoidal running integral per column, reset to zero at the first
    sample of every maneuver segment."""
    boundary_indices = np.asarray(boundary_indices, dtype=int)
    if np.any(np.diff(boundary_indices) <= 0):
        raise ValueError("boundary indices must be strictly increasing")
    if len(boundary_indices) == 0 or boundary_indices[0] != 0:
        boundary_indices = np.concatenate([[0], boundary_indices])
    n = X.shape[0]
    if boundary_indices[-1] >= n:
        raise ValueError("boundary index beyond end of stream")
    dt = np.diff(t)
    steps = 0.5 * (X[1:] + X[:-1]) * dt[:, None]
    out = np.zeros_like(X)
    out[1:] = np.cumsum(steps, axis=0)
    # subtract the accumulated value at each segment start
    starts = np.zeros_like(X)
    for b in boundary_indices:
        starts[b:] = out[b]
    return out - starts


def integrate_dataset(ds: CalibrationDataset) -> CalibrationDataset:
    """Append one integral column per raw column."""
    if any(tag == "integral" for tag in ds.column_tags):
        raise ValueError("dataset already carries integral columns")
    integrals = running_integrals(ds.X, ds.t, ds.boundary_indices)
    return CalibrationDataset(
        t=ds.t,
        X=np.hstack([ds.X, integrals]),
        Y=ds.Y,
        column_names=ds.column_names + [f"int({n})" for n in ds.column_names],
        column_tags=ds.column_tags + ["integral"] * len(ds.column_names),
        boundary_indices=ds.boundary_indices,
    )


def normalize_dataset(ds: CalibrationDataset) -> CalibrationDataset:
    """Z-normalize every column in place of the raw values.

    Population sigma; columns with sigma below CONSTANT_SIGMA are flagged
    constant, left untouched and excluded from feature selection.
    """
    if ds.n_samples < 2:
        raise ValueError("normalization needs at least 2 samples")
    mean = ds.X.mean(axis=0)
    sigma = ds.X.std(axis=0)
    constant = sigma < CONSTANT_SIGMA
    X = ds.X.copy()
    active = ~constant
    X[:, active] = (X[:, active] - mean[active]) / sigma[active]
    return CalibrationDataset(
        t=ds.t,
        X=X,
        Y=ds.Y,
        column_names=list(ds.column_names),
        column_tags=list(ds.column_tags),
        boundary_indices=ds.boundary_indices,
        mean=mean,
        sigma=sigma,
        constant_mask=constant,
        normalized=True,
    )


def resample_series(
    src_t: np.ndarray, values: np.ndarray, grid_t: np.ndarray
) -> np.ndarray:
    """Column-wise linear interpolation onto a uniform grid."""
    out = np.empty((len(grid_t), values.shape[1]))
    for c in range(values.shape[1]):
        out[:, c] = np.interp(grid_t, src_t, values[:, c])
    return out


def build_dataset(
    rows,
    layout,
    boundaries_t,
    sample_rate: float = 50.0,
) -> CalibrationDataset:
    """Raw session rows -> integrated, normalized calibration dataset.

    `rows` is a sequence of (t, frames dict, reference 4-array). Samples
    are converted to kinematic vectors on the source timeline (so Euler
    unwrapping sees every frame), linearly resampled onto a uniform grid,
    integral-augmented and z-normalized.
    """
    names = layout_variable_names(layout)
    unwrappers = {h: EulerUnwrapper() for h in ("left", "right")}
    src_t, vectors, refs = [], [], []
    for t, frames, ref in rows:
        vec = assemble_vector(frames, layout, unwrappers)
        if vec is None:
            continue  # tracking dropouts are bridged by interpolation
        src_t.append(float(t))
        vectors.append(vec)
        refs.append(np.asarray(ref, dtype=float))
    if len(src_t) < 2:
        raise ValueError("calibration stream too short")
    src_t = np.asarray(src_t)
    if np.any(np.diff(src_t) <= 0):
        raise ValueError("sample times must be strictly increasing")
    vectors = np.stack(vectors)
    refs = np.stack(refs)

    dt = 1.0 / sample_rate
    n_grid = int(np.floor((src_t[-1] - src_t[0]) / dt)) + 1
    grid_t = src_t[0] + np.arange(n_grid) * dt
    X = resample_series(src_t, vectors, grid_t)
    Y = resample_series(src_t, refs, grid_t)

    boundaries_t = np.asarray(sorted(boundaries_t), dtype=float)
    idx = np.searchsorted(grid_t, boundaries_t - 1e-9)
    idx = np.unique(np.clip(idx, 0, n_grid - 1))

    ds = CalibrationDataset(
        t=grid_t,
        X=X,
        Y=Y,
        column_names=names,
        column_tags=["raw"] * len(names),
        boundary_indices=idx,
    )
    return normalize_dataset(integrate_dataset(ds))
