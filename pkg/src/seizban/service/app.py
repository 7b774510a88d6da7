"""FastAPI service wrapping the simulator core.

REST endpoints cover the batch operations (generate / train / simulate /
evaluate); the /ws WebSocket carries the same newline-delimited JSON
telemetry protocol as the TCP port, one message per text frame, so browser
consoles can attach to a live or replayed run.
"""
from __future__ import annotations

import asyncio
import json
import os
from typing import Optional

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles

from .. import __version__, evaluation, neuralnet, pipeline, signal_io
from ..scenario import ScenarioError, ScenarioRunner, build_report, scenario_from_dict
from ..telemetry import TelemetryHub
from . import schemas


def _safe_join(workdir: str, filename: str) -> str:
    path = os.path.normpath(os.path.join(workdir, filename))
    if not os.path.abspath(path).startswith(os.path.abspath(workdir) + os.sep):
        raise HTTPException(status_code=400, detail="path escapes the workdir")
    return path


def create_app(workdir: str = ".", hub: Optional[TelemetryHub] = None,
               console_dist: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="seizban", version=__version__)
    app.state.workdir = os.path.abspath(workdir)
    app.state.hub = hub

    @app.get("/api/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(
            status="ok", version=__version__,
            live_run=app.state.hub is not None
            and app.state.hub.command_sink is not None,
        )

    @app.post("/api/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        cfg = signal_io.SyntheticConfig(
            seed=req.seed,
            duration_s=req.duration_s,
            seizure_onsets_s=tuple(req.onsets_s),
            preictal_horizon_s=req.horizon_s,
            eeg_channels=req.eeg_channels,
            snr_db=req.snr_db,
            signature=signal_io.SignatureConfig(
                theta_ramp_gain=req.theta_ramp_gain,
                rr_shortening_fraction=req.rr_shortening_fraction,
            ),
            sample_rate_hz=req.sample_rate_hz,
        )
        rec = signal_io.generate_synthetic(cfg)
        path = _safe_join(app.state.workdir, req.filename)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        signal_io.save_recording(rec, path)
        return schemas.GenerateResponse(
            path=path,
            duration_s=rec.duration_s,
            channels=[c.name for c in rec.channels],
            n_samples=rec.n_samples,
            annotations=list(rec.annotations or []),
        )

    @app.post("/api/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        recs = []
        for name in req.recordings:
            path = _safe_join(app.state.workdir, name)
            if not os.path.exists(path):
                raise HTTPException(status_code=400, detail=f"recording not found: {name}")
            recs.append(signal_io.load_recording(path))
        try:
            model = pipeline.train_node_model(
                recs, req.kind, seed=req.seed, window_s=req.window_s,
                stride_s=req.stride_s, horizon_s=req.horizon_s,
                hidden=tuple(req.hidden), lr=req.lr, epochs=req.epochs,
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        path = _safe_join(app.state.workdir, req.filename)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        neuralnet.save_model(model, path)
        return schemas.TrainResponse(
            path=path,
            layer_sizes=list(model.layer_sizes),
            n_params=model.n_params,
            serialized_bytes=neuralnet.serialized_size(model),
            budget_bytes=neuralnet.MODEL_BUDGET_BYTES,
            version=model.version,
        )

    @app.post("/api/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        d = dict(req.scenario)
        if req.seed is not None:
            d.setdefault("scenario", {})
            d["scenario"] = {**d["scenario"], "seed": req.seed}
        try:
            cfg = scenario_from_dict(d)
            runner = ScenarioRunner(cfg)
        except ScenarioError as exc:
            raise HTTPException(status_code=422, detail="; ".join(exc.errors))
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        report = build_report(runner.run())
        report_path = None
        if req.report_filename:
            report_path = _safe_join(app.state.workdir, req.report_filename)
            os.makedirs(os.path.dirname(report_path) or ".", exist_ok=True)
            evaluation.write_report(report, report_path)
        return schemas.SimulateResponse(report=report, report_path=report_path)

    @app.post("/api/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate_report(req: schemas.EvaluateRequest):
        report = req.report
        if report is None:
            if not req.report_path:
                raise HTTPException(status_code=400,
                                    detail="report or report_path required")
            path = _safe_join(app.state.workdir, req.report_path)
            if not os.path.exists(path):
                raise HTTPException(status_code=400, detail="report not found")
            report = evaluation.load_report(path)
        for key in ("metrics", "confusion", "event_scoring"):
            if key not in report:
                raise HTTPException(status_code=400, detail=f"report missing {key}")
        return schemas.EvaluateResponse(
            metrics=report["metrics"],
            confusion=report["confusion"],
            event_scoring=report["event_scoring"],
        )

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        hub: Optional[TelemetryHub] = app.state.hub
        await ws.accept()
        if hub is None:
            await ws.send_text(json.dumps(
                {"type": "reject", "command_id": "",
                 "reason": "no telemetry source attached"}))
            await ws.close()
            return
        session = hub.register()

        async def reader():
            try:
                while True:
                    text = await ws.receive_text()
                    for line in text.splitlines():
                        if not line.strip():
                            continue
                        try:
                            msg = json.loads(line)
                        except json.JSONDecodeError:
                            continue
                        if isinstance(msg, dict) and msg.get("type") == "command":
                            hub.submit_command(session.id, msg)
            except WebSocketDisconnect:
                pass

        async def writer():
            try:
                while True:
                    msg = await asyncio.to_thread(session.pop, 0.2)
                    if msg is None:
                        if session.closed:
                            return
                        continue
                    await ws.send_text(json.dumps(msg, separators=(",", ":"),
                                                  sort_keys=True))
            except (WebSocketDisconnect, RuntimeError):
                pass

        tasks = [asyncio.create_task(reader()), asyncio.create_task(writer())]
        try:
            await asyncio.wait(tasks, return_when=asyncio.FIRST_COMPLETED)
        finally:
            for t in tasks:
                t.cancel()
            hub.unregister(session)

    if console_dist and os.path.isdir(console_dist):
        app.mount("/console", StaticFiles(directory=console_dist, html=True),
                  name="console")

    return app
