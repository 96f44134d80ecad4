"""World state, kinematics, stage machine, and observation assembly.

The simulation is purely kinematic: the differential-drive base integrates
commanded velocities with explicit Euler at a fixed dt, arm joints and
grippers move by rate-limited deltas, and grasping snaps an object to the
gripper when it closes within the capture radius. Everything is
deterministic given (seed, action sequence).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, NumericDivergenceError
from ..policy import Observation
from ..proprio import ProprioState, imu_noise, quat_from_planar_angle
from . import render
from .tasks import Predicate, TaskSpec

DT = 0.05  # seconds per control step (20 Hz)

ARMS = ("left", "right")


@dataclass
class ObjState:
    name: str
    pos: np.ndarray
    radius: float
    color: str
    held_by: str | None = None


@dataclass
class ZoneState:
    name: str
    pos: np.ndarray
    radius: float
    color: str
    style: str


@dataclass
class WorldState:
    base: np.ndarray                  # [x, y, heading]
    qpos: np.ndarray                  # [2, J] joint angles
    grip: np.ndarray                  # [2] openings in [0, 1]
    objects: dict[str, ObjState]
    zones: dict[str, ZoneState]
    stage_idx: int
    t: int
    seed: int
    rng: np.random.Generator          # observation noise stream

    def arm_points(self, spec: TaskSpec, arm: str) -> list[tuple[float, float]]:
        """World-frame chain points: shoulder, elbow(s), end effector."""
        i = ARMS.index(arm)
        side = 1.0 if arm == "left" else -1.0
        x, y, th = self.base
        sx = x + side * spec.shoulder_offset * math.cos(th + math.pi / 2)
        sy = y + side * spec.shoulder_offset * math.sin(th + math.pi / 2)
        pts = [(sx, sy)]
        phi = th
        for j, L in enumerate(spec.link_lengths):
            phi += self.qpos[i, j]
            pts.append((pts[-1][0] + L * math.cos(phi), pts[-1][1] + L * math.sin(phi)))
        return pts

    def ee(self, spec: TaskSpec, arm: str) -> np.ndarray:
        return np.array(self.arm_points(spec, arm)[-1])

    def wrist_angle(self, arm: str) -> float:
        i = ARMS.index(arm)
        return _wrap(self.base[2] + self.qpos[i].sum())

    def held_object(self, arm: str) -> ObjState | None:
        for obj in self.objects.values():
            if obj.held_by == arm:
                return obj
        return None

    def stages_done(self, spec: TaskSpec) -> bool:
        return self.stage_idx >= len(spec.stages)


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def _sample_point(rng, xr, yr) -> np.ndarray:
    return np.array([rng.uniform(*xr), rng.uniform(*yr)])


def reset(spec: TaskSpec, seed: int) -> tuple[WorldState, Observation]:
    """Deterministic layout from the seed; stage counter 0."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD5]))
    zones = {}
    placed = []
    for z in spec.zones:
        pos = _sample_point(rng, z.x, z.y)
        zones[z.name] = ZoneState(z.name, pos, z.radius, z.color, z.style)
    objects = {}
    for o in spec.objects:
        for _ in range(64):
            pos = _sample_point(rng, o.x, o.y)
            if all(np.linalg.norm(pos - q) >= spec.min_separation for q in placed):
                break
        placed.append(pos)
        objects[o.name] = ObjState(o.name, pos, o.radius, o.color)
    base = np.array([rng.uniform(*spec.base_x), rng.uniform(*spec.base_y),
                     rng.uniform(*spec.base_heading)])
    state = WorldState(
        base=base,
        qpos=np.full((2, spec.joints_per_arm), 0.0),
        grip=np.full(2, 1.0),
        objects=objects, zones=zones, stage_idx=0, t=0, seed=seed,
        rng=np.random.default_rng(np.random.SeedSequence([seed, 0x0B5])))
    # folded start pose with wrist rotations 0 / -pi/2 (the wrist
    # quaternions then wrap at different base headings)
    state.qpos[0] = [1.6, -1.6, 0.0][:spec.joints_per_arm]
    state.qpos[1] = [-1.6, 1.6, -1.5708][:spec.joints_per_arm]
    return state, observe(state, spec)


def _predicate_holds(p: Predicate, state: WorldState, spec: TaskSpec) -> bool:
    if p.kind == "holding":
        for name in p.objects:
            obj = state.objects[name]
            if obj.held_by is None:
                return False
            if p.arm and obj.held_by != p.arm:
                return False
        return True
    if p.kind == "base_in_zone":
        zone = state.zones[p.zone]
        if np.linalg.norm(state.base[:2] - zone.pos) > zone.radius:
            return False
        return all(state.objects[n].held_by is not None for n in p.holding)
    if p.kind == "objects_in_zone":
        for obj_name, zone_name in p.pairs:
            obj = state.objects[obj_name]
            zone = state.zones[zone_name]
            if obj.held_by is not None:
                return False
            if np.linalg.norm(obj.pos - zone.pos) > zone.radius:
                return False
        return True
    raise ContractError(f"unknown predicate kind {p.kind!r}")


def step(state: WorldState, action: np.ndarray, spec: TaskSpec
         ) -> tuple[Observation, list[str]]:
    """Advance one control step in place; returns (observation, stage events).

    action layout: [dq_L(J), dgrip_L, dq_R(J), dgrip_R, v, w] -- joint and
    gripper deltas (rate-limited), base linear/angular velocity. A zero
    action leaves everything except the step counter unchanged.
    """
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (spec.action_dim,):
        raise ContractError(f"action must be [{spec.action_dim}], got {action.shape}")
    if not np.all(np.isfinite(action)):
        raise NumericDivergenceError("non-finite action rejected; state unchanged")
    J = spec.joints_per_arm
    kin = spec.kin

    # base: explicit Euler with the pre-step heading
    v = float(np.clip(action[-2], -kin.v_max, kin.v_max))
    w = float(np.clip(action[-1], -kin.w_max, kin.w_max))
    x, y, th = state.base
    x += v * math.cos(th) * DT
    y += v * math.sin(th) * DT
    th = _wrap(th + w * DT)
    r = spec.base_radius
    state.base[:] = [np.clip(x, r, 1 - r), np.clip(y, r, 1 - r), th]

    closing = [False, False]
    opening = [False, False]
    for i, arm in enumerate(ARMS):
        lo = i * (J + 1)
        dq = np.clip(action[lo:lo + J], -kin.joint_rate, kin.joint_rate)
        state.qpos[i] = np.clip(state.qpos[i] + dq, -spec.joint_limit, spec.joint_limit)
        dg = float(np.clip(action[lo + J], -kin.grip_rate, kin.grip_rate))
        g_old = state.grip[i]
        g_new = float(np.clip(g_old + dg, 0.0, 1.0))
        state.grip[i] = g_new
        closing[i] = g_old > 0.5 >= g_new
        opening[i] = g_old <= 0.5 < g_new

    for i, arm in enumerate(ARMS):
        held = state.held_object(arm)
        if held is not None and opening[i]:
            held.held_by = None
            held = None
        if held is None and closing[i]:
            ee = state.ee(spec, arm)
            best, best_d = None, spec.capture_radius
            for obj in state.objects.values():
                if obj.held_by is not None:
                    continue
                d = float(np.linalg.norm(obj.pos - ee))
                if d <= best_d:
                    best, best_d = obj, d
            if best is not None:
                best.held_by = arm

    # held objects ride the end effector exactly
    for arm in ARMS:
        held = state.held_object(arm)
        if held is not None:
            held.pos = state.ee(spec, arm)

    events = []
    if state.stage_idx < len(spec.stages):
        stage = spec.stages[state.stage_idx]
        if _predicate_holds(stage.predicate, state, spec):
            events.append(stage.name)
            state.stage_idx += 1

    state.t += 1
    return observe(state, spec), events


def observe(state: WorldState, spec: TaskSpec) -> Observation:
    """Render configured cameras and read proprioception (noisy IMUs)."""
    images = []
    for cam in spec.cameras:
        if cam == "top":
            images.append(render.render_top(state, spec))
        elif cam == "wrist_left":
            images.append(render.render_wrist(state, spec, "left"))
        elif cam == "wrist_right":
            images.append(render.render_wrist(state, spec, "right"))
        else:
            raise ContractError(f"unknown camera {cam!r}")
    quats = [imu_noise(quat_from_planar_angle(state.wrist_angle(arm)),
                       spec.imu_sigma, state.rng) for arm in ARMS]
    proprio = ProprioState(qpos=state.qpos.copy(), gripper=state.grip.copy(),
                           quat_left=quats[0], quat_right=quats[1])
    return Observation(images=images, proprio=proprio, t=state.t)
