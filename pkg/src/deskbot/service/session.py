"""One teleoperation session: a fixed-rate sim tick loop over a WebSocket.

The reader coroutine validates incoming messages and folds them into a
latest-input slot (last writer wins within a tick) plus a command queue;
the tick loop owns the world, applies the latest input every tick,
broadcasts state and frames, and records episodes between start/stop.
Sim time is tick count * dt regardless of transport jitter; overruns are
logged, never silently skipped.
"""

from __future__ import annotations

import asyncio
import base64
import io
import logging
import time
from pathlib import Path

import numpy as np
from fastapi import WebSocket, WebSocketDisconnect
from pydantic import ValidationError

from ..episodes import Episode, StepRecord, derive_boundaries, save_episode
from ..sim.tasks import TaskSpec
from ..sim.world import reset, step
from .schemas import PROTOCOL_VERSION, SessionMsg

log = logging.getLogger(__name__)


class ProtocolError(Exception):
    pass


def frame_png_b64(frame: np.ndarray) -> str:
    from PIL import Image
    arr = np.round(frame * 255.0).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class Session:
    def __init__(self, ws: WebSocket, spec: TaskSpec, seed: int,
                 tick_hz: float, record_dir: str | None,
                 max_ticks: int | None = None):
        self.ws = ws
        self.spec = spec
        self.base_seed = seed
        self.tick_hz = tick_hz
        self.record_dir = Path(record_dir) if record_dir else None
        self.max_ticks = max_ticks
        self.out_seq = 0
        self.client_seq = -1
        self.latest_action = np.zeros(spec.action_dim)
        self.pending_marks: list[str] = []
        self.commands: asyncio.Queue = asyncio.Queue()
        self.recording: list[StepRecord] | None = None
        self.episode_counter = 0
        self.world_seed = seed
        self.closed = False

    # -- outbound ---------------------------------------------------------

    async def send(self, kind: str, payload: dict) -> None:
        msg = SessionMsg(kind=kind, seq=self.out_seq, payload=payload)
        self.out_seq += 1
        await self.ws.send_text(msg.model_dump_json())

    async def fail(self, code: str, message: str) -> None:
        try:
            await self.send("error", {"code": code, "message": message})
        finally:
            self.closed = True

    # -- inbound ----------------------------------------------------------

    def _parse(self, text: str) -> SessionMsg:
        try:
            msg = SessionMsg.model_validate_json(text)
        except ValidationError as e:
            raise ProtocolError(f"malformed message: {e.errors()[0]['msg']}")
        if msg.seq <= self.client_seq:
            raise ProtocolError(
                f"sequence number {msg.seq} not greater than {self.client_seq}")
        self.client_seq = msg.seq
        return msg

    async def reader(self) -> None:
        while not self.closed:
            msg = self._parse(await self.ws.receive_text())
            if msg.kind == "input":
                action = msg.payload.get("action")
                if (not isinstance(action, list)
                        or len(action) != self.spec.action_dim):
                    raise ProtocolError(
                        f"input action must have {self.spec.action_dim} entries")
                self.latest_action = np.asarray(action, dtype=np.float64)
            elif msg.kind == "stage_mark":
                self.pending_marks.append(
                    str(msg.payload.get("label") or f"mark{len(self.pending_marks) + 1}"))
            elif msg.kind in ("start_record", "stop_record"):
                await self.commands.put(msg.kind)
            elif msg.kind == "hello":
                raise ProtocolError("duplicate hello")
            else:
                raise ProtocolError(f"unexpected message kind {msg.kind!r}")

    # -- recording ---------------------------------------------------------

    def _start_record(self):
        self.episode_counter += 1
        self.world_seed = self.base_seed + self.episode_counter
        self.state, self.obs = reset(self.spec, self.world_seed)
        self.latest_action = np.zeros(self.spec.action_dim)
        self.pending_marks.clear()
        self.recording = []

    async def _stop_record(self):
        steps = self.recording or []
        self.recording = None
        if not steps:
            await self.send("stop_record", {"discarded": True, "steps": 0})
            return
        # the operator's stop closes the final subtask, so the steps after
        # the last mark become their own segment rather than a dangling tail
        if not steps[-1].events:
            steps[-1].events.append("stop")
        header = {
            "task": self.spec.name, "seed": self.world_seed,
            "J": self.spec.joints_per_arm, "dt": 0.05,
            "cameras": ",".join(self.spec.cameras),
            "action_dim": self.spec.action_dim,
            "step_limit": self.spec.step_limit,
            "collector": "teleop",
        }
        episode = Episode(header, steps,
                          derive_boundaries(steps, self.spec.stage_names()))
        path = ""
        if self.record_dir:
            self.record_dir.mkdir(parents=True, exist_ok=True)
            path = str(self.record_dir
                       / f"teleop_{self.spec.name}_{self.world_seed}.dbe")
            save_episode(episode, path)
        await self.send("stop_record",
                        {"discarded": False, "steps": len(steps), "path": path})

    # -- main loop ---------------------------------------------------------

    async def run(self) -> None:
        raw = await self.ws.receive_text()
        try:
            hello = self._parse(raw)
            if hello.kind != "hello":
                raise ProtocolError("first message must be hello")
            if hello.payload.get("protocol") != PROTOCOL_VERSION:
                raise ProtocolError(
                    f"protocol {hello.payload.get('protocol')} != {PROTOCOL_VERSION}")
        except ProtocolError as e:
            await self.fail("protocol", str(e))
            return

        await self.send("hello", {
            "protocol": PROTOCOL_VERSION, "role": "server",
            "task": self.spec.name, "seed": self.world_seed, "dt": 0.05,
            "action_dim": self.spec.action_dim,
            "cameras": self.spec.cameras,
            "stage_names": self.spec.stage_names(),
        })
        self.state, self.obs = reset(self.spec, self.world_seed)

        reader_task = asyncio.create_task(self.reader())
        period = 1.0 / self.tick_hz if self.tick_hz > 0 else 0.0
        ticks = 0
        try:
            while not self.closed:
                tick_start = time.monotonic()
                if reader_task.done():
                    exc = reader_task.exception()
                    if isinstance(exc, ProtocolError):
                        await self.fail("protocol", str(exc))
                    return
                while not self.commands.empty():
                    cmd = self.commands.get_nowait()
                    if cmd == "start_record":
                        self._start_record()
                    else:
                        await self._stop_record()

                action = self.latest_action.copy()
                obs_before = self.obs
                events = list(self.pending_marks)
                self.pending_marks.clear()
                self.obs, sim_events = step(self.state, action, self.spec)
                events.extend(sim_events)
                if self.recording is not None:
                    self.recording.append(StepRecord(obs_before, action, events))

                await self.send("state", {
                    "t": self.state.t,
                    "base": [float(v) for v in self.state.base],
                    "qpos": self.state.qpos.tolist(),
                    "grip": self.state.grip.tolist(),
                    "stage_idx": self.state.stage_idx,
                    "stages_total": len(self.spec.stages),
                    "recording": self.recording is not None,
                    "steps_recorded": len(self.recording) if self.recording else 0,
                    "events": events,
                })
                for cam, img in zip(self.spec.cameras, self.obs.images):
                    await self.send("frame", {
                        "camera": cam, "t": self.state.t,
                        "png_b64": frame_png_b64(img)})

                ticks += 1
                if self.max_ticks is not None and ticks >= self.max_ticks:
                    return
                if period:
                    elapsed = time.monotonic() - tick_start
                    if elapsed > period:
                        log.warning("tick overrun: %.1f ms (budget %.1f ms)",
                                    1e3 * elapsed, 1e3 * period)
                    else:
                        await asyncio.sleep(period - elapsed)
                else:
                    await asyncio.sleep(0)
        except WebSocketDisconnect:
            pass
        finally:
            reader_task.cancel()


async def run_session(ws: WebSocket, spec: TaskSpec, seed: int,
                      tick_hz: float = 20.0, record_dir: str | None = None,
                      max_ticks: int | None = None) -> None:
    await ws.accept()
    session = Session(ws, spec, seed, tick_hz, record_dir, max_ticks)
    try:
        await session.run()
    except WebSocketDisconnect:
        pass
    finally:
        try:
            await ws.close()
        except Exception:
            pass
