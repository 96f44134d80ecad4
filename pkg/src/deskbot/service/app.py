"""FastAPI application: health, task catalog, planning, artifact
inspection, and the teleoperation WebSocket."""

from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, WebSocket

from .. import __version__
from ..episodes import load_episode
from ..errors import DeskbotError, IntegrityError, PlanningError
from ..planner import PlannerConfig, decompose, rule_plan
from ..policy import load_checkpoint
from ..sim.tasks import builtin_task_names, get_task, load_task
from ..vision import fusion_overhead
from .schemas import (CheckpointSummary, EpisodeSummary, InspectRequest,
                      PlanRequest, PlanResponse, PlanStepOut, TaskSummary)
from .session import run_session


def _resolve_task(name: str):
    if name.endswith((".yaml", ".yml")):
        return load_task(name)
    return get_task(name)


def create_app(record_dir: str | None = None,
               planner_cfg: PlannerConfig | None = None) -> FastAPI:
    app = FastAPI(title="deskbot gateway", version=__version__)
    app.state.record_dir = record_dir

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/tasks", response_model=list[TaskSummary])
    def tasks():
        out = []
        for name in builtin_task_names():
            spec = get_task(name)
            out.append(TaskSummary(
                name=spec.name, step_limit=spec.step_limit,
                action_dim=spec.action_dim, stage_names=spec.stage_names(),
                skills=spec.skill_names(), cameras=spec.cameras))
        return out

    @app.post("/plan", response_model=PlanResponse)
    def plan(req: PlanRequest):
        try:
            if req.offline:
                result = rule_plan(req.instruction)
            else:
                scene = None
                if req.image_b64:
                    from PIL import Image
                    raw = base64.b64decode(req.image_b64)
                    arr = np.asarray(Image.open(io.BytesIO(raw)).convert("RGB"))
                    scene = arr.transpose(2, 0, 1).astype(np.float64) / 255.0
                result = decompose(req.instruction, scene,
                                   planner_cfg or PlannerConfig())
        except PlanningError as e:
            raise HTTPException(status_code=422, detail=str(e))
        return PlanResponse(
            instruction=result.instruction,
            steps=[PlanStepOut(skill=s.skill, rationale=s.rationale)
                   for s in result.steps],
            source=result.source)

    @app.post("/episodes/inspect", response_model=EpisodeSummary)
    def inspect_episode(req: InspectRequest):
        path = Path(req.path)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no such file: {path}")
        try:
            ep = load_episode(path)
        except IntegrityError as e:
            raise HTTPException(status_code=422, detail=f"integrity: {e}")
        return EpisodeSummary(
            path=str(path), task=ep.header.get("task", "?"),
            seed=str(ep.header.get("seed", "?")), steps=len(ep),
            stage_boundaries=ep.boundaries,
            events=[ev for rec in ep.steps for ev in rec.events],
            cameras=ep.header.get("cameras", "top"), integrity="ok")

    @app.post("/checkpoints/inspect", response_model=CheckpointSummary)
    def inspect_checkpoint(req: InspectRequest):
        path = Path(req.path)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no such file: {path}")
        try:
            rt = load_checkpoint(path)
        except (DeskbotError, ValueError) as e:
            raise HTTPException(status_code=422, detail=str(e))
        overhead = fusion_overhead(rt.params, "enc.")
        return CheckpointSummary(
            path=str(path), variant=rt.cfg.variant,
            param_count=rt.params.num_params(),
            encoder_params=overhead["encoder_params"],
            fusion_params=overhead["fusion_params"],
            fusion_overhead_fraction=overhead["overhead_fraction"],
            config=rt.cfg.to_manifest())

    @app.websocket("/session")
    async def session(ws: WebSocket,
                      task: str = Query("push-block"),
                      seed: int = Query(0),
                      tick_hz: float = Query(20.0),
                      max_ticks: int | None = Query(None)):
        spec = _resolve_task(task)
        await run_session(ws, spec, seed, tick_hz=tick_hz,
                          record_dir=app.state.record_dir,
                          max_ticks=max_ticks)

    return app
