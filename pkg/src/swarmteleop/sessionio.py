"""Persistence formats: session, model and metrics files.

Sessions are line-per-sample text with a JSON header line, so partial
files fail loudly at a specific line. Models and metrics are single JSON
documents. All writes go through a temp-and-rename so a crash never
leaves a partial artifact behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .course import RunMetrics
from .kinematics import HandFrame
from .learning import DofMapping, MappingModel

SESSION_FORMAT = "swarmteleop-session"
SESSION_VERSION = 1
MODEL_FORMAT = "swarmteleop-model"
MODEL_VERSION = 1
METRICS_FORMAT = "swarmteleop-metrics"
METRICS_VERSION = 1


class SessionFormatError(ValueError):
    """Malformed persisted data; carries the offending line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def atomic_write_text(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class SessionRow:
    t: float
    frames: dict[str, HandFrame]
    ref: np.ndarray

    def __post_init__(self):
        self.ref = np.asarray(self.ref, dtype=float)


@dataclass
class SessionData:
    """In-memory calibration session: hand frames plus reference commands."""

    sample_rate: float
    layout: tuple[str, ...]
    boundaries: list[float]
    script_info: dict = field(default_factory=dict)
    rows: list[SessionRow] = field(default_factory=list)

    def as_tuples(self):
        return [(row.t, row.frames, row.ref) for row in self.rows]


def _frame_to_json(frame: HandFrame) -> dict:
    return {
        "palm": frame.palm_position.tolist(),
        "quat": frame.palm_orientation.tolist(),
        "tips": frame.fingertips.tolist(),
        "valid": bool(frame.valid),
    }


def _frame_from_json(t: float, data: dict) -> HandFrame:
    return HandFrame(
        t=t,
        palm_position=np.array(data["palm"], dtype=float),
        palm_orientation=np.array(data["quat"], dtype=float),
        fingertips=np.array(data["tips"], dtype=float),
        valid=bool(data.get("valid", True)),
    )


def session_text(session: SessionData) -> str:
    header = {
        "format": SESSION_FORMAT,
        "version": SESSION_VERSION,
        "sample_rate": session.sample_rate,
        "layout": list(session.layout),
        "boundaries": list(session.boundaries),
        "script": session.script_info,
    }
    lines = [json.dumps(header, separators=(",", ":"))]
    for row in session.rows:
        record = {
            "t": row.t,
            "hands": {h: _frame_to_json(f) for h, f in sorted(row.frames.items())},
            "ref": row.ref.tolist(),
        }
        lines.append(json.dumps(record, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def save_session(session: SessionData, path):
    atomic_write_text(path, session_text(session))


def load_session(path) -> SessionData:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SessionFormatError("empty session file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SessionFormatError(f"bad header: {exc}", line=1) from exc
    if header.get("format") != SESSION_FORMAT:
        raise SessionFormatError("not a session file", line=1)
    if header.get("version") != SESSION_VERSION:
        raise SessionFormatError(
            f"unsupported session version {header.get('version')}", line=1
        )
    layout = tuple(header.get("layout", ()))
    rows = []
    last_t = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            t = float(record["t"])
            hands = {
                h: _frame_from_json(t, data)
                for h, data in record["hands"].items()
            }
            ref = np.array(record["ref"], dtype=float)
        except (KeyError, ValueError, TypeError) as exc:
            raise SessionFormatError(f"bad sample: {exc}", line=lineno) from exc
        if ref.shape != (4,):
            raise SessionFormatError("reference must have 4 DoF", line=lineno)
        if set(layout) - set(hands):
            raise SessionFormatError(
                f"sample missing hand(s) {sorted(set(layout) - set(hands))}",
                line=lineno,
            )
        if last_t is not None and t <= last_t:
            raise SessionFormatError("non-monotonic sample time", line=lineno)
        last_t = t
        rows.append(SessionRow(t=t, frames=hands, ref=ref))
    if not rows:
        raise SessionFormatError("session has no samples", line=2)
    return SessionData(
        sample_rate=float(header.get("sample_rate", 50.0)),
        layout=layout,
        boundaries=[float(b) for b in header.get("boundaries", [])],
        script_info=header.get("script", {}),
        rows=rows,
    )


def model_to_dict(model: MappingModel, provenance: dict | None = None) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layout_hash": model.layout_hash(),
        "provenance": dict(provenance or {}),
        "model": {
            "dofs": [
                {
                    "dof": m.dof,
                    "indices": list(m.indices),
                    "weights": np.asarray(m.weights).tolist(),
                    "intercept": m.intercept,
                    "ridge": m.ridge,
                }
                for m in model.dofs
            ],
            "column_names": list(model.column_names),
            "column_tags": list(model.column_tags),
            "mean": model.mean.tolist(),
            "sigma": model.sigma.tolist(),
            "constant_mask": [bool(b) for b in model.constant_mask],
            "layout": list(model.layout),
            "sample_rate": model.sample_rate,
            "tau": model.tau,
            "k": model.k,
            "metadata": model.metadata,
        },
    }


def model_from_dict(data: dict) -> MappingModel:
    if data.get("format") != MODEL_FORMAT:
        raise SessionFormatError("not a model file")
    if data.get("version") != MODEL_VERSION:
        raise SessionFormatError(f"unsupported model version {data.get('version')}")
    body = data["model"]
    model = MappingModel(
        dofs=[
            DofMapping(
                dof=m["dof"],
                indices=[int(i) for i in m["indices"]],
                weights=np.array(m["weights"], dtype=float),
                intercept=float(m["intercept"]),
                ridge=float(m["ridge"]),
            )
            for m in body["dofs"]
        ],
        column_names=list(body["column_names"]),
        column_tags=list(body["column_tags"]),
        mean=np.array(body["mean"], dtype=float),
        sigma=np.array(body["sigma"], dtype=float),
        constant_mask=np.array(body["constant_mask"], dtype=bool),
        layout=tuple(body["layout"]),
        sample_rate=float(body["sample_rate"]),
        tau=float(body["tau"]),
        k=float(body["k"]),
        metadata=body.get("metadata", {}),
    )
    if model.layout_hash() != data.get("layout_hash"):
        raise SessionFormatError("model layout hash mismatch (file tampered?)")
    return model


def save_model(model: MappingModel, path, provenance: dict | None = None):
    provenance = dict(provenance or {})
    provenance.setdefault("toolkit_version", __version__)
    atomic_write_text(
        path, json.dumps(model_to_dict(model, provenance), sort_keys=True) + "\n"
    )


def load_model(path) -> MappingModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_metrics(metrics: RunMetrics, path, context: dict | None = None):
    doc = {
        "format": METRICS_FORMAT,
        "version": METRICS_VERSION,
        "context": dict(context or {}),
        "metrics": metrics.to_dict(),
    }
    atomic_write_text(path, json.dumps(doc, sort_keys=True) + "\n")


def load_metrics(path) -> tuple[RunMetrics, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != METRICS_FORMAT:
        raise SessionFormatError("not a metrics file")
    return RunMetrics.from_dict(doc["metrics"]), doc.get("context", {})
