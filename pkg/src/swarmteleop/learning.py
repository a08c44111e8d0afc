"""Per-DoF feature ranking, thresholded selection, and BIC-tuned ridge.

For each command DoF the pipeline scores every dataset column with a
quality factor (absolute Pearson correlation times SNR^k), normalizes the
scores to sum to one, keeps the smallest top-ranked prefix reaching the
selection threshold, and fits a ridge regression whose penalty is chosen
by BIC over a fixed log grid. Raw columns winning a DoF means position
control; integral columns winning means velocity control.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import FeatureConfig
from .kinematics import CalibrationDataset

DOF_NAMES = ("x", "y", "z", "expansion")


def pearson(x, y) -> float:
    """Pearson correlation; 0.0 when either series is constant.

    Returning 0 instead of raising keeps the quality pipeline total over
    degenerate columns (they are also flagged and excluded upstream).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length series of length >= 2")
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with shrinking windows at the edges."""
    x = np.asarray(x, dtype=float)
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    n = len(x)
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def snr(x, window: int = 11, cap: float = 100.0) -> float:
    """Smooth-to-residual variance ratio, capped.

    The moving average stands in for "signal"; what it leaves behind is
    treated as noise. Near-zero residual (an already-smooth series) maps
    to the cap rather than infinity.
    """
    x = np.asarray(x, dtype=float)
    if len(x) < window:
        raise ValueError(f"snr needs at least window={window} samples")
    smooth = moving_average(x, window)
    residual = x - smooth
    rvar = residual.var()
    if rvar < 1e-12:
        return cap
    return float(min(smooth.var() / rvar, cap))


@dataclass
class QualityMatrix:
    """Column-normalized quality factors per (variable, DoF).

    lam[i, j] = |alpha[i, j]| * snr[i]^k over active (non-constant)
    variables, rescaled so every DoF column sums to one.
    """

    lam: np.ndarray
    alpha: np.ndarray
    snr: np.ndarray
    k: float
    active: np.ndarray


def quality_matrix(ds: CalibrationDataset, k: float = 2.0,
                   snr_window: int = 11, snr_cap: float = 100.0) -> QualityMatrix:
    if not ds.normalized:
        raise ValueError("quality_matrix expects a normalized dataset")
    if not any(tag == "integral" for tag in ds.column_tags):
        raise ValueError("quality_matrix expects integral columns to be present")
    n_cols = ds.X.shape[1]
    n_dof = ds.Y.shape[1]
    active = ~ds.constant_mask if ds.constant_mask is not None else np.ones(n_cols, bool)
    if not np.any(active):
        raise ValueError("no active (non-constant) variables in dataset")

    alpha = np.zeros((n_cols, n_dof))
    snrs = np.zeros(n_cols)
    for i in np.nonzero(active)[0]:
        snrs[i] = snr(ds.X[:, i], snr_window, snr_cap)
        for j in range(n_dof):
            alpha[i, j] = pearson(ds.X[:, i], ds.Y[:, j])

    lam = np.abs(alpha) * (snrs[:, None] ** k)
    lam[~active] = 0.0
    sums = lam.sum(axis=0)
    if np.any(sums <= 0):
        dead = [DOF_NAMES[j] for j in np.nonzero(sums <= 0)[0]]
        raise ValueError(f"no variable carries signal for DoF {dead}")
    return QualityMatrix(lam / sums, alpha, snrs, k, active)


def select_features(lam_column: np.ndarray, tau: float = 0.7) -> list[int]:
    """Smallest prefix of descending-quality variables whose cumulative
    normalized quality reaches tau. Ties break toward lower column index."""
    lam_column = np.asarray(lam_column, dtype=float)
    order = np.lexsort((np.arange(len(lam_column)), -lam_column))
    chosen = []
    total = 0.0
    for idx in order:
        if lam_column[idx] <= 0 and chosen:
            break
        chosen.append(int(idx))
        total += lam_column[idx]
        if total >= tau:
            break
    return chosen


@dataclass
class RidgeFit:
    weights: np.ndarray
    intercept: float
    ridge: float
    bic: float
    df: float


def ridge_grid(lo: float = 1e-4, hi: float = 1e3, num: int = 25) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), num)


def ridge_path(X: np.ndarray, y: np.ndarray, grid: np.ndarray):
    """Ridge solutions over the whole penalty grid via one SVD.

    Data are centered internally; the intercept is recovered from the
    means and never penalized. Yields (weights, intercept, bic, df) rows
    in grid order. BIC = n*ln(RSS/n) + df*ln(n) with df the effective
    degrees of freedom sum(d_i^2 / (d_i^2 + ridge)).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if p < 1:
        raise ValueError("ridge needs at least one feature column")
    if n <= p:
        warnings.warn(
            f"ridge fit with n={n} rows <= p={p} columns; expect heavy shrinkage",
            stacklevel=3,
        )
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    U, d, Vt = np.linalg.svd(Xc, full_matrices=False)
    uty = U.T @ yc
    results = []
    for lam in grid:
        shrink = d / (d ** 2 + lam)
        w = Vt.T @ (shrink * uty)
        rss = float(np.sum((yc - Xc @ w) ** 2))
        df = float(np.sum(d ** 2 / (d ** 2 + lam)))
        bic = n * np.log(max(rss, 1e-300) / n) + df * np.log(n)
        intercept = float(y_mean - x_mean @ w)
        results.append((w, intercept, float(bic), df))
    return results


def ridge_fit(
    X: np.ndarray,
    y: np.ndarray,
    grid: np.ndarray | None = None,
) -> RidgeFit:
    """Best-BIC ridge regression over the penalty grid."""
    if grid is None:
        grid = ridge_grid()
    path = ridge_path(X, y, grid)
    bics = np.array([row[2] for row in path])
    best = int(np.argmin(bics))
    w, intercept, bic, df = path[best]
    return RidgeFit(w, intercept, float(grid[best]), bic, df)


@dataclass
class DofMapping:
    dof: str
    indices: list[int]
    weights: np.ndarray
    intercept: float
    ridge: float

    def __post_init__(self):
        if len(self.indices) != len(set(self.indices)):
            raise ValueError("selected indices must be unique")
        if len(self.weights) != len(self.indices):
            raise ValueError("weights must match the selected index count")


@dataclass
class MappingModel:
    """Trained hand-to-swarm interface.

    Per DoF: selected column indices into the feature layout, ridge
    weights over the z-scored columns, intercept and chosen penalty.
    Global: the feature layout (names + raw/integral tags), the
    normalization statistics to reuse at runtime, and the selection
    threshold/exponent that produced the selection.
    """

    dofs: list[DofMapping]
    column_names: list[str]
    column_tags: list[str]
    mean: np.ndarray
    sigma: np.ndarray
    constant_mask: np.ndarray
    layout: tuple[str, ...]
    sample_rate: float
    tau: float
    k: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.column_names)
        for m in self.dofs:
            if any(i < 0 or i >= n for i in m.indices):
                raise ValueError("model references columns outside the layout")

    @property
    def n_columns(self) -> int:
        return len(self.column_names)

    def layout_hash(self) -> str:
        blob = json.dumps(
            [list(self.column_names), list(self.column_tags), list(self.layout)],
            separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode()).hexdigest()

    def selected_tags(self, dof: str) -> list[str]:
        m = next(d for d in self.dofs if d.dof == dof)
        return [self.column_tags[i] for i in m.indices]

    def selected_names(self, dof: str) -> list[str]:
        m = next(d for d in self.dofs if d.dof == dof)
        return [self.column_names[i] for i in m.indices]


def train_interface(ds: CalibrationDataset, cfg: FeatureConfig | None = None,
                    layout=("right",), metadata: dict | None = None) -> MappingModel:
    """Quality ranking, selection and ridge fit run independently per DoF."""
    cfg = cfg or FeatureConfig()
    if ds.Y.shape[1] != 4:
        raise ValueError("expected 4 reference DoF columns")
    quality = quality_matrix(ds, cfg.quality_exponent, cfg.snr_window, cfg.snr_cap)
    grid = ridge_grid(cfg.ridge_grid_min, cfg.ridge_grid_max, cfg.ridge_grid_points)
    dofs = []
    failures = []
    for j, dof in enumerate(DOF_NAMES):
        indices = select_features(quality.lam[:, j], cfg.selection_threshold)
        if not indices:
            failures.append(f"{dof}: no usable variables")
            continue
        fit = ridge_fit(ds.X[:, indices], ds.Y[:, j], grid)
        dofs.append(DofMapping(dof, indices, fit.weights, fit.intercept, fit.ridge))
    if failures:
        raise ValueError("training failed for DoF " + "; ".join(failures))
    return MappingModel(
        dofs=dofs,
        column_names=list(ds.column_names),
        column_tags=list(ds.column_tags),
        mean=ds.mean.copy(),
        sigma=ds.sigma.copy(),
        constant_mask=ds.constant_mask.copy(),
        layout=tuple(layout),
        sample_rate=cfg.sample_rate,
        tau=cfg.selection_threshold,
        k=cfg.quality_exponent,
        metadata=metadata or {},
    )


def strategy_report(ds: CalibrationDataset, retention: float = 0.9) -> dict:
    """Per-DoF list of variables within `retention` of the top correlation.

    Raw entries are evidence of position control, integral entries of
    velocity control; the mix is what the calibration is meant to reveal.
    """
    active = ~ds.constant_mask if ds.constant_mask is not None else np.ones(ds.X.shape[1], bool)
    report = {}
    for j, dof in enumerate(DOF_NAMES):
        alphas = np.zeros(ds.X.shape[1])
        for i in np.nonzero(active)[0]:
            alphas[i] = abs(pearson(ds.X[:, i], ds.Y[:, j]))
        top = alphas.max()
        entries = []
        if top > 0:
            keep = np.nonzero(alphas >= retention * top)[0]
            for i in sorted(keep, key=lambda i: -alphas[i]):
                entries.append({
                    "name": ds.column_names[i],
                    "tag": ds.column_tags[i],
                    "correlation": float(alphas[i]),
                })
        report[dof] = entries
    return report
