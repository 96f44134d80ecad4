"""Wire protocol and REST request/response models.

Session protocol: JSON text messages over one WebSocket, one `SessionMsg`
per frame. `seq` increases strictly per direction; a violation or an
unknown kind is a protocol error (the server answers with an error message
and disconnects). Message kinds and payloads:

  hello         both    {protocol, role} (server adds task, seed, dt,
                        action_dim, cameras, stage_names)
  state         server  {t, base, qpos, grip, stage_idx, stages_total,
                        recording, steps_recorded}
  frame         server  {camera, t, png_b64}
  input         client  {action: [action_dim floats]} applied next tick,
                        last writer wins within a tick
  stage_mark    client  {label} operator-marked subtask boundary
  start_record  client  {} resets the world to a fresh seed and records
  stop_record   both    client {} -> server ack {path, steps, discarded}
  error         server  {code, message}
"""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field

PROTOCOL_VERSION = 1

MsgKind = Literal["hello", "state", "frame", "input", "stage_mark",
                  "start_record", "stop_record", "error"]


class SessionMsg(BaseModel):
    kind: MsgKind
    seq: int = Field(ge=0)
    payload: dict[str, Any] = Field(default_factory=dict)


class TaskSummary(BaseModel):
    name: str
    step_limit: int
    action_dim: int
    stage_names: list[str]
    skills: list[str]
    cameras: list[str]


class PlanRequest(BaseModel):
    instruction: str
    image_b64: str | None = None
    offline: bool = False


class PlanStepOut(BaseModel):
    skill: str
    rationale: str = ""


class PlanResponse(BaseModel):
    instruction: str
    steps: list[PlanStepOut]
    source: str


class InspectRequest(BaseModel):
    path: str


class EpisodeSummary(BaseModel):
    path: str
    task: str
    seed: str
    steps: int
    stage_boundaries: list[tuple[str, int, int]]
    events: list[str]
    cameras: str
    integrity: str


class CheckpointSummary(BaseModel):
    path: str
    variant: str
    param_count: int
    encoder_params: int
    fusion_params: int
    fusion_overhead_fraction: float
    config: dict[str, Any]
