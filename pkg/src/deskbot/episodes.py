"""Demonstration episode container, step-wise segmentation, and the
chunked sample sets consumed by policy training.

On disk an episode is a small binary container: magic + version, then
three length-prefixed, CRC-checked sections (text header, zlib-compressed
step arrays, stage boundaries). Frames are stored as raw uint8; the
renderer only ever emits 8-bit-quantized pixels, so save/load round-trips
are bit-exact on every payload.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, IntegrityError
from .policy import NormStats, Observation
from .proprio import ProprioState, Quaternion

log = logging.getLogger(__name__)

EPISODE_MAGIC = b"DBEP"
SCHEMA_VERSION = 1


@dataclass
class StepRecord:
    obs: Observation
    action: np.ndarray               # [A], physical units
    events: list[str] = field(default_factory=list)


@dataclass
class Episode:
    """One demonstration: header, per-step records, stage boundaries.

    boundaries is a list of (stage_name, start, end) with end exclusive;
    it must partition [0, len(steps)) in order.
    """

    header: dict
    steps: list[StepRecord]
    boundaries: list[tuple[str, int, int]]

    def __len__(self):
        return len(self.steps)

    def validate(self) -> None:
        if not self.steps:
            raise ContractError("episode has no steps")
        limit = int(self.header.get("step_limit", 0))
        if limit and len(self.steps) > limit:
            raise ContractError(f"{len(self.steps)} steps exceed limit {limit}")
        if self.boundaries:
            expect = 0
            for name, start, end in self.boundaries:
                if start != expect or end <= start:
                    raise ContractError(
                        f"boundaries do not partition steps at '{name}' "
                        f"({start}, {end}), expected start {expect}")
                expect = end
            if expect != len(self.steps):
                raise ContractError(
                    f"boundaries cover {expect} steps, episode has {len(self.steps)}")

    def stage_names(self) -> list[str]:
        return [b[0] for b in self.boundaries]


def derive_boundaries(steps: list[StepRecord], stage_names: list[str]
                      ) -> list[tuple[str, int, int]]:
    """Split at stage-completion events; the dangling tail after the last
    event joins the final segment."""
    marks = []
    for i, rec in enumerate(steps):
        for ev in rec.events:
            marks.append((i, ev))
    bounds = []
    start = 0
    for idx, (i, name) in enumerate(marks):
        end = len(steps) if idx == len(marks) - 1 else i + 1
        bounds.append((name, start, end))
        start = i + 1
    if not bounds:
        name = stage_names[0] if stage_names else "all"
        bounds = [(name, 0, len(steps))]
    return bounds


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

def _quantized_u8(img: np.ndarray) -> np.ndarray:
    u8 = np.round(img * 255.0).astype(np.uint8)
    if np.abs(u8.astype(np.float64) / 255.0 - img).max() > 1e-12:
        raise ContractError("frame pixels are not 8-bit quantized; cannot store losslessly")
    return u8


def _section(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))


def _read_section(blob: bytes, off: int) -> tuple[bytes, int]:
    if off + 4 > len(blob):
        raise IntegrityError("episode file truncated (section length)")
    (n,) = struct.unpack_from("<I", blob, off)
    off += 4
    if off + n + 4 > len(blob):
        raise IntegrityError("episode file truncated (section payload)")
    payload = blob[off:off + n]
    (crc,) = struct.unpack_from("<I", blob, off + n)
    if zlib.crc32(payload) != crc:
        raise IntegrityError("episode section checksum mismatch")
    return payload, off + n + 4


def save_episode(ep: Episode, path) -> None:
    ep.validate()
    n = len(ep.steps)
    ncam = len(ep.steps[0].obs.images)
    c, h, w = ep.steps[0].obs.images[0].shape
    J = ep.steps[0].obs.proprio.joints_per_arm
    A = len(ep.steps[0].action)

    header = dict(ep.header)
    header.setdefault("schema", SCHEMA_VERSION)
    htext = "\n".join(f"{k}={header[k]}" for k in sorted(header)).encode("utf-8")

    images = np.empty((n, ncam, c, h, w), dtype=np.uint8)
    proprio = np.empty((n, 2 * J + 2 + 8), dtype="<f8")
    actions = np.empty((n, A), dtype="<f8")
    ts = np.empty(n, dtype="<i8")
    events = []
    for i, rec in enumerate(ep.steps):
        for cam, img in enumerate(rec.obs.images):
            images[i, cam] = _quantized_u8(img)
        from .proprio import fuse_proprio
        proprio[i] = fuse_proprio(rec.obs.proprio).data
        actions[i] = rec.action
        ts[i] = rec.obs.t
        for ev in rec.events:
            events.append((i, ev))

    body = [struct.pack("<IHHHHHH", n, ncam, c, h, w, J, A),
            images.tobytes(), proprio.tobytes(), actions.tobytes(), ts.tobytes(),
            struct.pack("<I", len(events))]
    for i, ev in events:
        eb = ev.encode("utf-8")
        body.append(struct.pack("<IH", i, len(eb)) + eb)
    steps_payload = zlib.compress(b"".join(body), level=6)

    btext = "\n".join(f"{name}|{s}|{e}" for name, s, e in ep.boundaries).encode("utf-8")

    with open(path, "wb") as f:
        f.write(EPISODE_MAGIC)
        f.write(struct.pack("<I", SCHEMA_VERSION))
        f.write(_section(htext))
        f.write(_section(steps_payload))
        f.write(_section(btext))


def load_episode(path) -> Episode:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != EPISODE_MAGIC:
        raise IntegrityError(f"{path}: not an episode file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != SCHEMA_VERSION:
        raise IntegrityError(
            f"{path}: schema version {version} needs migration (supported: {SCHEMA_VERSION})")
    htext, off = _read_section(blob, 8)
    steps_payload, off = _read_section(blob, off)
    btext, off = _read_section(blob, off)

    header = {}
    for line in htext.decode("utf-8").splitlines():
        k, _, v = line.partition("=")
        header[k] = v

    raw = zlib.decompress(steps_payload)
    n, ncam, c, h, w, J, A = struct.unpack_from("<IHHHHHH", raw, 0)
    off2 = struct.calcsize("<IHHHHHH")
    P = 2 * J + 2 + 8

    def take(dtype, count, shape):
        nonlocal off2
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off2).reshape(shape)
        off2 += arr.nbytes
        return arr

    images = take(np.uint8, n * ncam * c * h * w, (n, ncam, c, h, w))
    proprio = take("<f8", n * P, (n, P))
    actions = take("<f8", n * A, (n, A))
    ts = take("<i8", n, (n,))
    (n_events,) = struct.unpack_from("<I", raw, off2)
    off2 += 4
    events_by_step: dict[int, list[str]] = {}
    for _ in range(n_events):
        i, elen = struct.unpack_from("<IH", raw, off2)
        off2 += 6
        events_by_step.setdefault(i, []).append(raw[off2:off2 + elen].decode("utf-8"))
        off2 += elen

    steps = []
    for i in range(n):
        p = proprio[i]
        qpos = np.stack([p[:J], p[J + 1:2 * J + 1]])
        grip = np.array([p[J], p[2 * J + 1]])
        qL = Quaternion(*p[2 * J + 2:2 * J + 6])
        qR = Quaternion(*p[2 * J + 6:2 * J + 10])
        obs = Observation(
            images=[images[i, cam].astype(np.float64) / 255.0 for cam in range(ncam)],
            proprio=ProprioState(qpos, grip, qL, qR),
            t=int(ts[i]))
        steps.append(StepRecord(obs, actions[i].astype(np.float64).copy(),
                                events_by_step.get(i, [])))

    boundaries = []
    for line in btext.decode("utf-8").splitlines():
        name, s, e = line.rsplit("|", 2)
        boundaries.append((name, int(s), int(e)))
    ep = Episode(header, steps, boundaries)
    ep.validate()
    return ep


def episode_hash(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(paths, manifest_path) -> None:
    """Dataset manifest: one 'sha256  filename' line per episode file."""
    lines = [f"{episode_hash(p)}  {p.name if hasattr(p, 'name') else p}" for p in paths]
    with open(manifest_path, "w") as f:
        f.write("\n".join(lines) + "\n")


# ----------------------------------------------------------------------
# segmentation
# ----------------------------------------------------------------------

def segment_by_stage(ep: Episode) -> list[Episode]:
    """One sub-episode per stage boundary; concatenating their steps
    reproduces the original step sequence exactly."""
    ep.validate()
    if not ep.boundaries:
        raise ContractError("episode has no stage boundaries")
    subs = []
    for name, start, end in ep.boundaries:
        header = dict(ep.header)
        header["stage"] = name
        header["parent_task"] = ep.header.get("task", "")
        header.pop("step_limit", None)
        subs.append(Episode(header, ep.steps[start:end], [(name, 0, end - start)]))
    return subs


# ----------------------------------------------------------------------
# training sample sets
# ----------------------------------------------------------------------

@dataclass
class DatasetStats:
    """Recomputable summary of a sample set (bit-identical across runs)."""

    action_min: np.ndarray
    action_max: np.ndarray
    proprio_mean: np.ndarray
    proprio_std: np.ndarray
    episode_count: int
    total_steps: int

    def norm(self) -> NormStats:
        return NormStats(self.action_min, self.action_max,
                         self.proprio_mean, self.proprio_std)


class SampleSet:
    """Sliding-window (observation history, action chunk) pairs.

    Episode edges are padded by repetition: the first observation backward,
    the last action forward, so an episode of length L yields L samples.
    """

    def __init__(self, episodes: list[Episode], history: int, horizon: int):
        if not episodes:
            raise ContractError("no episodes supplied")
        self.history = history
        self.horizon = horizon
        self._images: list[np.ndarray] = []
        self._proprio: list[np.ndarray] = []
        self._actions: list[np.ndarray] = []
        self.index: list[tuple[int, int]] = []
        digest = hashlib.sha256()
        kept = 0
        total = 0
        for ep in episodes:
            if len(ep) < history:
                log.warning("skipping episode shorter than history (%d < %d)",
                            len(ep), history)
                continue
            from .proprio import fuse_proprio
            imgs = np.stack([np.stack([_quantized_u8(im) for im in r.obs.images])
                             for r in ep.steps])
            prop = np.stack([fuse_proprio(r.obs.proprio).data for r in ep.steps])
            acts = np.stack([r.action for r in ep.steps])
            e = len(self._images)
            self._images.append(imgs)
            self._proprio.append(prop)
            self._actions.append(acts)
            self.index.extend((e, t) for t in range(len(ep)))
            digest.update(imgs.tobytes())
            digest.update(prop.tobytes())
            digest.update(acts.tobytes())
            kept += 1
            total += len(ep)
        if not self.index:
            raise ContractError("all episodes shorter than the observation history")
        self.content_hash = digest.hexdigest()[:16]

        all_actions = np.concatenate(self._actions)
        all_proprio = np.concatenate(self._proprio)
        self.dataset_stats = DatasetStats(
            action_min=all_actions.min(axis=0), action_max=all_actions.max(axis=0),
            proprio_mean=all_proprio.mean(axis=0),
            proprio_std=all_proprio.std(axis=0),
            episode_count=kept, total_steps=total)
        self.stats = self.dataset_stats.norm()

    def __len__(self):
        return len(self.index)

    @property
    def action_dim(self) -> int:
        return self._actions[0].shape[1]

    @property
    def proprio_dim(self) -> int:
        return self._proprio[0].shape[1]

    @property
    def cameras(self) -> int:
        return self._images[0].shape[1]

    def gather(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Assemble a batch: images [B, history*ncam, 3, H, W] in [0,1],
        proprio [B, history, P], actions [B, horizon, A] (physical units)."""
        B = len(idx)
        ims, props, acts = [], [], []
        for j in idx:
            e, t = self.index[j]
            L = len(self._actions[e])
            hist = np.clip(np.arange(t - self.history + 1, t + 1), 0, L - 1)
            fut = np.clip(np.arange(t, t + self.horizon), 0, L - 1)
            ims.append(self._images[e][hist])
            props.append(self._proprio[e][hist])
            acts.append(self._actions[e][fut])
        images = np.stack(ims).astype(np.float64) / 255.0
        ncam = images.shape[2]
        images = images.reshape(B, self.history * ncam, *images.shape[3:])
        return images, np.stack(props), np.stack(acts)


def build_dataset(episodes: list[Episode], history: int, horizon: int) -> SampleSet:
    return SampleSet(episodes, history, horizon)
