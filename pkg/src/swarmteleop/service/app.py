"""FastAPI service: REST pipeline endpoints plus the live session socket.

One background task owns the live engine (single-writer); websocket
clients only queue input frames and receive snapshots. The headless
pipeline endpoints (calibrate/train/fly/evaluate) each build their own
short-lived engine, so they never touch the live timeline.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from .. import __version__
from ..config import AppConfig
from ..course import RunMetrics, kruskal_wallis, load_course
from ..engine import (
    SessionEngine,
    SessionPhase,
    calibrate_with_pilot,
    default_course,
    fly_with_pilot,
    train_on_session,
)
from ..learning import DOF_NAMES
from ..pilots import PilotStrategy
from ..sessionio import (
    SessionFormatError,
    file_sha256,
    load_metrics,
    load_model,
    load_session,
    save_metrics,
    save_model,
    save_session,
)
from . import schemas
from .schemas import PROTOCOL_VERSION


def control_style(tags: list[str]) -> str:
    kinds = set(tags)
    if kinds == {"raw"}:
        return "position"
    if kinds == {"integral"}:
        return "velocity"
    return "mixed"


def _train_summary(model, report, out=None, session_hash="") -> schemas.TrainResponse:
    dofs = []
    for dof in DOF_NAMES:
        names = model.selected_names(dof)
        tags = model.selected_tags(dof)
        mapping = next(d for d in model.dofs if d.dof == dof)
        dofs.append(
            schemas.DofSummary(
                dof=dof,
                selected=[
                    schemas.SelectedFeature(name=n, tag=t)
                    for n, t in zip(names, tags)
                ],
                ridge=mapping.ridge,
                control_style=control_style(tags),
            )
        )
    return schemas.TrainResponse(
        dofs=dofs, report=report, out=out, session_hash=session_hash
    )


def create_app(
    config: AppConfig | None = None,
    course_path: str | None = None,
    model_path: str | None = None,
    lockstep: bool = False,
) -> FastAPI:
    config = config or AppConfig()
    course = (
        load_course(course_path or config.course_path)
        if (course_path or config.course_path)
        else default_course()
    )
    model = load_model(model_path) if model_path else None

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        if not app.state.lockstep:
            app.state.running = True
            app.state.sim_task = asyncio.create_task(_sim_loop(app))
        yield
        app.state.running = False
        task = getattr(app.state, "sim_task", None)
        if task:
            task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await task

    app = FastAPI(title="swarmteleop", version=__version__, lifespan=lifespan)
    app.state.config = config
    app.state.course = course
    app.state.engine = SessionEngine(config, course, model=model)
    app.state.clients = set()
    app.state.snapshot_seq = 0
    app.state.running = False
    app.state.lockstep = lockstep
    app.state.training_task = None

    # --- REST: health and state ------------------------------------------

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__, "protocol": PROTOCOL_VERSION}

    @app.get("/state", response_model=schemas.StateResponse)
    def state():
        snap = _snapshot_message(app)
        return schemas.StateResponse(
            phase=snap.phase, sim_time=snap.sim_time, snapshot=snap
        )

    # --- REST: headless pipeline ------------------------------------------

    @app.post("/api/calibrate", response_model=schemas.CalibrateResponse)
    def api_calibrate(req: schemas.CalibrateRequest):
        strategy = _strategy_or_400(req.strategy, req.noise_level, req.seed)
        session = calibrate_with_pilot(strategy, config)
        if req.out:
            save_session(session, req.out)
        return schemas.CalibrateResponse(
            rows=len(session.rows),
            duration=session.rows[-1].t if session.rows else 0.0,
            layout=list(session.layout),
            boundaries=list(session.boundaries),
            out=req.out,
        )

    @app.post("/api/train", response_model=schemas.TrainResponse)
    def api_train(req: schemas.TrainRequest):
        try:
            session = load_session(req.session)
        except (OSError, SessionFormatError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        session_hash = file_sha256(req.session)
        try:
            model, report = train_on_session(session, config)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        if req.out:
            save_model(
                model,
                req.out,
                provenance={
                    "session_sha256": session_hash,
                    "config_sha256": config.hash(),
                },
            )
        return _train_summary(model, report, req.out, session_hash)

    @app.post("/api/fly", response_model=schemas.FlyResponse)
    def api_fly(req: schemas.FlyRequest):
        try:
            fly_model = load_model(req.model)
        except (OSError, SessionFormatError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        fly_course = load_course(req.course) if req.course else course
        strategy = _strategy_or_400(req.strategy, req.noise_level, req.seed)
        metrics, _log = fly_with_pilot(
            fly_model, fly_course, strategy, config, expand=req.expand
        )
        if req.out:
            save_metrics(
                metrics,
                req.out,
                context={
                    "model": str(req.model),
                    "course": fly_course.name,
                    "strategy": req.strategy,
                    "seed": req.seed,
                    "noise_level": req.noise_level,
                    "expand": req.expand,
                },
            )
        return schemas.FlyResponse(
            completed=metrics.completed,
            total_time=metrics.total_time,
            segment_times=metrics.segment_times,
            collision_count=len(metrics.collisions),
            gates_crossed=metrics.gates_crossed,
            out=req.out,
        )

    @app.post("/api/evaluate", response_model=schemas.EvaluateResponse)
    def api_evaluate(req: schemas.EvaluateRequest):
        runs: list[tuple[str, RunMetrics]] = []
        for path in req.metrics:
            try:
                metrics, context = load_metrics(path)
            except (OSError, SessionFormatError, KeyError) as exc:
                raise HTTPException(status_code=400, detail=f"{path}: {exc}")
            group = str(context.get(req.group_by, Path(path).stem))
            runs.append((group, metrics))
        groups = sorted({g for g, _ in runs})
        summaries = []
        times_by_group, colls_by_group = [], []
        for group in groups:
            rows = [m for g, m in runs if g == group]
            times = [m.total_time for m in rows]
            colls = [len(m.collisions) for m in rows]
            times_by_group.append(times)
            colls_by_group.append(colls)
            summaries.append(
                schemas.GroupSummary(
                    group=group,
                    runs=len(rows),
                    mean_total_time=float(np.mean(times)),
                    median_total_time=float(np.median(times)),
                    mean_collisions=float(np.mean(colls)),
                    completion_rate=float(np.mean([m.completed for m in rows])),
                )
            )
        kw = []
        if len(groups) >= 2 and all(len(t) >= 1 for t in times_by_group):
            for measure, samples in (
                ("total_time", times_by_group),
                ("collisions", colls_by_group),
            ):
                h, p = kruskal_wallis(samples)
                kw.append(
                    schemas.KruskalResult(
                        measure=measure, h_statistic=h, p_value=p, groups=groups
                    )
                )
        return schemas.EvaluateResponse(groups=summaries, kruskal=kw)

    @app.post("/api/replay")
    async def api_replay(req: schemas.ReplayRequest):
        try:
            session = load_session(req.session)
        except (OSError, SessionFormatError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        asyncio.create_task(_replay_task(app, session, req.speed))
        return {"rows": len(session.rows), "clients": len(app.state.clients)}

    # --- lockstep test hooks ------------------------------------------------

    @app.post("/debug/tick")
    async def debug_tick(body: dict):
        if not app.state.lockstep:
            raise HTTPException(status_code=403, detail="not in lockstep mode")
        ticks = int(body.get("ticks", 1))
        engine = app.state.engine
        for _ in range(ticks):
            engine.tick()
            if engine.phase is SessionPhase.TRAINING:
                _run_training(app)
        if body.get("broadcast", True):
            await _broadcast(app)
        return _snapshot_message(app).model_dump()

    # --- websocket protocol -------------------------------------------------

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        engine: SessionEngine = app.state.engine
        try:
            raw = await ws.receive_text()
            try:
                hello = schemas.HelloMessage.model_validate_json(raw)
            except ValueError:
                await ws.send_text(
                    schemas.ErrorMessage(
                        code="bad_hello", message="first message must be hello"
                    ).model_dump_json()
                )
                await ws.close()
                return
            if hello.version != PROTOCOL_VERSION:
                await ws.send_text(
                    schemas.ErrorMessage(
                        code="version_mismatch",
                        message=f"server speaks protocol {PROTOCOL_VERSION}",
                    ).model_dump_json()
                )
                await ws.close()
                return
            await ws.send_text(
                schemas.HelloReply(
                    phase=engine.phase.value,
                    n_agents=engine.swarm.n_agents,
                    course=app.state.course.name,
                ).model_dump_json()
            )
            app.state.clients.add(ws)
            while True:
                raw = await ws.receive_text()
                await _handle_client_message(app, ws, raw)
        except WebSocketDisconnect:
            pass
        finally:
            app.state.clients.discard(ws)

    return app


def _strategy_or_400(kind: str, noise_level: float, seed: int) -> PilotStrategy:
    try:
        return PilotStrategy.from_kind(kind, noise_level=noise_level, seed=seed)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc))


async def _handle_client_message(app, ws: WebSocket, raw: str):
    engine: SessionEngine = app.state.engine
    try:
        data = json.loads(raw)
        kind = data.get("type")
    except json.JSONDecodeError:
        kind = None
    try:
        if kind == "input":
            msg = schemas.InputFrameMessage.model_validate(data)
            engine.submit_input(msg.seq, msg.to_frames())
        elif kind == "command":
            msg = schemas.CommandMessage.model_validate(data)
            await _apply_command(app, msg.action)
        elif kind == "hello":
            # repeated hello is answered again; doubles as a sync barrier
            await ws.send_text(
                schemas.HelloReply(
                    phase=engine.phase.value,
                    n_agents=engine.swarm.n_agents,
                    course=app.state.course.name,
                ).model_dump_json()
            )
        else:
            await ws.send_text(
                schemas.ErrorMessage(
                    code="bad_message", message=f"unknown message type {kind!r}"
                ).model_dump_json()
            )
    except ValueError as exc:
        await ws.send_text(
            schemas.ErrorMessage(code="invalid", message=str(exc)).model_dump_json()
        )


async def _apply_command(app, action: str):
    engine: SessionEngine = app.state.engine
    if action == "start_calibration":
        engine.start_calibration()
    elif action == "start_training":
        if engine.phase is SessionPhase.CALIBRATING:
            engine.finish_calibration(_layout_from_recording(engine))
        if app.state.lockstep:
            _run_training(app)
        else:
            app.state.training_task = asyncio.create_task(_training_job(app))
    elif action == "start_flight":
        engine.start_flight()
    elif action == "reset":
        engine.reset()
    elif action == "stop":
        engine.abort()
    else:
        raise ValueError(f"unknown command {action!r}")


def _layout_from_recording(engine: SessionEngine):
    rows = engine._recording
    if not rows:
        raise ValueError("no frames recorded during calibration")
    return tuple(h for h in ("left", "right") if h in rows[0].frames)


def _run_training(app):
    engine: SessionEngine = app.state.engine
    if engine.phase is SessionPhase.TRAINING:
        engine.run_training()


async def _training_job(app):
    engine: SessionEngine = app.state.engine
    try:
        await asyncio.to_thread(engine.run_training)
    except Exception as exc:  # surface to clients; engine stays consistent
        engine.machine.phase = SessionPhase.IDLE
        await _broadcast_error(app, "training_failed", str(exc))
        return
    await _broadcast(app)


def _snapshot_message(app) -> schemas.SnapshotMessage:
    engine: SessionEngine = app.state.engine
    snap = engine.snapshot()
    app.state.snapshot_seq += 1
    cal = snap["calibration"]
    return schemas.SnapshotMessage(
        seq=app.state.snapshot_seq,
        phase=snap["phase"],
        sim_time=snap["sim_time"],
        agents=snap["agents"],
        expansion=snap["expansion"],
        command=schemas.CommandEcho(**snap["command"]),
        hold=snap["hold"],
        next_gate=snap["next_gate"],
        crossings=snap["crossings"],
        collision_count=snap["collision_count"],
        last_input_seq=snap["last_input_seq"],
        calibration=schemas.CalibrationStatus(**cal) if cal else None,
        metrics=snap["metrics"],
    )


async def _broadcast(app):
    if not app.state.clients:
        return
    payload = _snapshot_message(app).model_dump_json()
    dead = []
    for ws in app.state.clients:
        try:
            await ws.send_text(payload)
        except Exception:
            dead.append(ws)
    for ws in dead:
        app.state.clients.discard(ws)


async def _broadcast_error(app, code: str, message: str):
    payload = schemas.ErrorMessage(code=code, message=message).model_dump_json()
    for ws in list(app.state.clients):
        try:
            await ws.send_text(payload)
        except Exception:
            app.state.clients.discard(ws)


async def _replay_task(app, session, speed: float):
    """Re-broadcast a recorded session: input frames plus reference echo."""
    if not session.rows:
        return
    t0 = session.rows[0].t
    start = asyncio.get_running_loop().time()
    for i, row in enumerate(session.rows):
        target = start + (row.t - t0) / max(speed, 1e-6)
        delay = target - asyncio.get_running_loop().time()
        if delay > 0:
            await asyncio.sleep(delay)
        frame_msg = schemas.InputFrameMessage(
            seq=i,
            t=row.t,
            hands={
                h: schemas.HandFramePayload.from_frame(f)
                for h, f in row.frames.items()
            },
        )
        echo = {
            "type": "snapshot",
            "seq": -1,
            "phase": "replay",
            "sim_time": row.t,
            "agents": [],
            "expansion": float(row.ref[3]),
            "command": {"center": [float(v) for v in row.ref[:3]], "expansion": float(row.ref[3])},
            "hold": False,
            "next_gate": None,
            "crossings": [],
            "collision_count": 0,
            "last_input_seq": i,
            "calibration": None,
            "metrics": None,
        }
        for ws in list(app.state.clients):
            try:
                await ws.send_text(frame_msg.model_dump_json())
                await ws.send_text(json.dumps(echo))
            except Exception:
                app.state.clients.discard(ws)


async def _sim_loop(app):
    """Fixed-timestep live loop: ticks never wait on broadcasts.

    Wall-clock time is accumulated and consumed in dt quanta; on overload
    the accumulator is capped (snapshot cadence suffers, tick cadence does
    not spiral).
    """
    engine: SessionEngine = app.state.engine
    dt = engine.dt
    loop = asyncio.get_running_loop()
    broadcast_period = 1.0 / app.state.config.service.broadcast_rate
    last = loop.time()
    next_broadcast = last
    acc = 0.0
    while app.state.running:
        now = loop.time()
        acc = min(acc + (now - last), 0.25)
        last = now
        while acc >= dt:
            engine.tick()
            acc -= dt
        if engine.phase is SessionPhase.TRAINING and (
            app.state.training_task is None or app.state.training_task.done()
        ):
            app.state.training_task = asyncio.create_task(_training_job(app))
        if now >= next_broadcast:
            next_broadcast = now + broadcast_period
            await _broadcast(app)
        await asyncio.sleep(dt / 2)
