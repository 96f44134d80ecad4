"""Diffusion action policy: noise schedule, conditional noise-prediction
network, training objective, and the ancestral denoising sampler.

The policy predicts chunks of future actions. Conditioning is the
concatenation of per-camera image embeddings and the (optionally
quaternion-stripped) proprioceptive vector over a short observation
history, plus a sinusoidal embedding of the diffusion step, injected into
a small temporal U-Net through per-block FiLM scale/shift.

Two ablation switches reproduce the variant lattice used in evaluation:
`use_fusion` toggles the encoder's spatio-frequency block, `use_quat`
drops the eight wrist-quaternion slots from conditioning. The baseline
(both off) is a plain diffusion policy.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from . import vision as V
from .errors import (ConfigurationError, ContractError, IntegrityError,
                     NumericDivergenceError)
from .proprio import ProprioState, fuse_proprio
from .tensor import ParamStore, Tensor

QUAT_SLOTS = 8  # two wrist quaternions at the tail of the fused vector


# ----------------------------------------------------------------------
# schedule
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionSchedule:
    beta: np.ndarray        # [K]
    alpha: np.ndarray       # [K], 1 - beta
    alpha_bar: np.ndarray   # [K], cumulative products

    @property
    def K(self) -> int:
        return len(self.beta)


def make_schedule(K: int, beta_start: float, beta_end: float) -> DiffusionSchedule:
    """Linear beta schedule with cumulative alpha products."""
    if K < 1:
        raise ConfigurationError(f"schedule needs K >= 1, got {K}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigurationError(
            f"schedule needs 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, K)
    alpha = 1.0 - beta
    return DiffusionSchedule(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


# ----------------------------------------------------------------------
# observation / action containers
# ----------------------------------------------------------------------

@dataclass
class Observation:
    """What the policy sees at one control step."""

    images: list[np.ndarray]       # each [3, H, W], values in [0, 1]
    proprio: ProprioState
    t: int


@dataclass
class ActionChunk:
    """A horizon of action rows [T_a, A] starting at control step t0."""

    actions: np.ndarray
    t0: int = 0

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.actions.ndim != 2:
            raise ContractError(f"actions must be [T_a, A], got {self.actions.shape}")


def forward_noise(a0: ActionChunk, k: int, eps: np.ndarray,
                  sched: DiffusionSchedule) -> ActionChunk:
    """Closed-form forward process: A_k = sqrt(ab_k) A_0 + sqrt(1-ab_k) eps."""
    if not 0 <= k <= sched.K:
        raise IndexError(f"diffusion step {k} outside [0, {sched.K}]")
    if k == 0:  # alpha_bar -> 1 convention: no noise
        return ActionChunk(a0.actions.copy(), a0.t0)
    if eps.shape != a0.actions.shape:
        raise ContractError(f"eps shape {eps.shape} != actions {a0.actions.shape}")
    ab = sched.alpha_bar[k - 1]
    return ActionChunk(math.sqrt(ab) * a0.actions + math.sqrt(1.0 - ab) * eps, a0.t0)


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------

@dataclass
class PolicyConfig:
    action_dim: int
    proprio_dim: int                 # full fused length incl. quaternion slots
    use_fusion: bool = True
    use_quat: bool = True
    horizon: int = 16                # T_a
    history: int = 2                 # T_o
    cameras: int = 1
    diffusion_steps: int = 50
    # chosen so alpha_bar_K ~ 1e-3: the sampler's Gaussian prior must match
    # the fully-noised marginal at this short step count
    beta_start: float = 0.005
    beta_end: float = 0.25
    unet_width: int = 32
    unet_groups: int = 4
    cond_hidden: int = 96
    k_embed_dim: int = 16
    seed: int = 0
    encoder: V.EncoderConfig | None = None

    def __post_init__(self):
        if self.horizon % 4:
            raise ConfigurationError("horizon must be divisible by 4 (two pool levels)")
        if self.encoder is None:
            self.encoder = V.default_encoder_config(use_fusion=self.use_fusion)
        if self.use_quat and self.proprio_dim <= QUAT_SLOTS:
            raise ConfigurationError(f"proprio_dim {self.proprio_dim} too small")

    @property
    def cond_proprio_dim(self) -> int:
        return self.proprio_dim if self.use_quat else self.proprio_dim - QUAT_SLOTS

    @property
    def obs_embed_dim(self) -> int:
        return self.history * (self.cameras * self.encoder.embed_dim
                               + self.cond_proprio_dim)

    @property
    def variant(self) -> str:
        return {(False, False): "dp", (True, False): "dp_quat",
                (False, True): "dp_fusion", (True, True): "dp_full"}[
                    (self.use_quat, self.use_fusion)]

    def to_manifest(self) -> dict:
        enc = self.encoder
        return {
            "action_dim": self.action_dim, "proprio_dim": self.proprio_dim,
            "use_fusion": self.use_fusion, "use_quat": self.use_quat,
            "horizon": self.horizon, "history": self.history,
            "cameras": self.cameras, "diffusion_steps": self.diffusion_steps,
            "beta_start": self.beta_start, "beta_end": self.beta_end,
            "unet_width": self.unet_width, "unet_groups": self.unet_groups,
            "cond_hidden": self.cond_hidden, "k_embed_dim": self.k_embed_dim,
            "seed": self.seed,
            "enc_input": list(enc.input_size),
            "enc_stages": list(enc.stage_channels),
            "enc_fusion_stage": enc.fusion_stage,
            "enc_embed_dim": enc.embed_dim,
            "enc_stem_pool": enc.stem_pool,
            "enc_norm_groups": enc.norm_groups,
            "enc_head": enc.head,
            "enc_coord": enc.coord_channels,
            "enc_fusion_groups": enc.fusion.groups if enc.fusion else 0,
            "enc_alpha_init": enc.fusion.alpha_init if enc.fusion else 0.0,
        }

    @staticmethod
    def from_manifest(m: dict) -> "PolicyConfig":
        fusion = None
        stages = tuple(m["enc_stages"])
        if m["use_fusion"]:
            fusion = V.FusionConfig(channels=stages[m["enc_fusion_stage"] - 1],
                                    groups=m["enc_fusion_groups"],
                                    alpha_init=m["enc_alpha_init"])
        enc = V.EncoderConfig(
            input_size=tuple(m["enc_input"]), stage_channels=stages,
            fusion_stage=m["enc_fusion_stage"], embed_dim=m["enc_embed_dim"],
            stem_pool=m["enc_stem_pool"], norm_groups=m["enc_norm_groups"],
            head=m.get("enc_head", "flatten"),
            coord_channels=m.get("enc_coord", True), fusion=fusion)
        return PolicyConfig(
            action_dim=m["action_dim"], proprio_dim=m["proprio_dim"],
            use_fusion=m["use_fusion"], use_quat=m["use_quat"],
            horizon=m["horizon"], history=m["history"], cameras=m["cameras"],
            diffusion_steps=m["diffusion_steps"], beta_start=m["beta_start"],
            beta_end=m["beta_end"], unet_width=m["unet_width"],
            unet_groups=m["unet_groups"], cond_hidden=m["cond_hidden"],
            k_embed_dim=m["k_embed_dim"], seed=m["seed"], encoder=enc)


# ----------------------------------------------------------------------
# parameters
# ----------------------------------------------------------------------

def _lin_w(rng, fan_in, fan_out, scale=1.0):
    return Tensor(rng.standard_normal((fan_in, fan_out)) * scale * math.sqrt(1.0 / fan_in))


def _conv1d_w(rng, cout, cin, k=3):
    return Tensor(rng.standard_normal((cout, cin, k)) * math.sqrt(2.0 / (cin * k)))


_UNET_BLOCKS = ("in", "d1", "d2", "u1", "u2")


def _unet_dims(cfg: PolicyConfig):
    # the conditioning vector is also tiled over time and concatenated to
    # the input channels: a direct path that the FiLM modulation refines
    w = cfg.unet_width
    return {"in": (cfg.action_dim + cfg.cond_hidden, w),
            "d1": (w, 2 * w), "d2": (2 * w, 2 * w),
            "u1": (4 * w, w), "u2": (2 * w, w)}


def init_policy_params(cfg: PolicyConfig, rng: np.random.Generator) -> ParamStore:
    store = ParamStore()
    V.init_encoder_params(cfg.encoder, store, "enc.", rng)
    cond_in = cfg.obs_embed_dim + cfg.k_embed_dim
    store.add("cond.w", _lin_w(rng, cond_in, cfg.cond_hidden))
    store.add("cond.b", Tensor.zeros(cfg.cond_hidden))
    for name, (cin, cout) in _unet_dims(cfg).items():
        p = f"unet.{name}."
        store.add(p + "w", _conv1d_w(rng, cout, cin))
        store.add(p + "b", Tensor.zeros(cout))
        store.add(p + "gn.g", Tensor.ones(cout))
        store.add(p + "gn.b", Tensor.zeros(cout))
        store.add(p + "film_s.w", _lin_w(rng, cfg.cond_hidden, cout))
        store.add(p + "film_t.w", _lin_w(rng, cfg.cond_hidden, cout))
    store.add("unet.out.w", Tensor.zeros((cfg.action_dim, cfg.unet_width, 3)))
    store.add("unet.out.b", Tensor.zeros(cfg.action_dim))
    return store


# ----------------------------------------------------------------------
# network
# ----------------------------------------------------------------------

def _pool1d(x: Tensor) -> Tensor:
    B, C, L = x.shape
    return T.tmean(T.reshape(x, (B, C, L // 2, 2)), axis=-1)


def _up1d(x: Tensor) -> Tensor:
    B, C, L = x.shape
    y = T.reshape(x, (B, C, L, 1))
    return T.reshape(T.concat([y, y], axis=3), (B, C, 2 * L))


def _film_block(x: Tensor, cond_h: Tensor, params: ParamStore, name: str,
                groups: int) -> Tensor:
    p = f"unet.{name}."
    h = T.conv1d(x, params[p + "w"], params[p + "b"])
    h = T.group_norm(h, params[p + "gn.g"], params[p + "gn.b"], groups)
    cout = h.shape[1]
    scale = T.reshape(T.linear(cond_h, params[p + "film_s.w"]), (-1, cout, 1))
    shift = T.reshape(T.linear(cond_h, params[p + "film_t.w"]), (-1, cout, 1))
    h = T.add(T.mul(h, T.add(scale, 1.0)), shift)
    return T.silu(h)


def embed_observations(images: np.ndarray, proprio: np.ndarray,
                       params: ParamStore, cfg: PolicyConfig) -> Tensor:
    """Batch of observation histories -> conditioning matrix [B, E].

    images: [B, history*cameras, 3, H, W]; proprio: [B, history, P]
    (already normalized). The quaternion slots are dropped here when the
    configuration says so.
    """
    B = images.shape[0]
    n = cfg.history * cfg.cameras
    flat = Tensor(images.reshape(B * n, *images.shape[2:]))
    emb = V.encode_image(flat, params, cfg.encoder)              # [B*n, D]
    emb = T.reshape(emb, (B, n * cfg.encoder.embed_dim))
    prop = proprio if cfg.use_quat else proprio[:, :, :-QUAT_SLOTS]
    prop = Tensor(prop.reshape(B, cfg.history * cfg.cond_proprio_dim))
    return T.concat([emb, prop], axis=1)


def predict_noise(obs_embedding: Tensor, a_k: np.ndarray, k: np.ndarray,
                  params: ParamStore, cfg: PolicyConfig) -> Tensor:
    """Temporal U-Net: noised chunks [B, T_a, A] + step k -> predicted noise.

    Output shape equals the chunk shape. The conditioning embedding is the
    only gradient path into the observation encoder.
    """
    if obs_embedding.shape[-1] != cfg.obs_embed_dim:
        raise ConfigurationError(
            f"conditioning dim {obs_embedding.shape[-1]} != expected {cfg.obs_embed_dim}")
    B = a_k.shape[0]
    if a_k.shape[1:] != (cfg.horizon, cfg.action_dim):
        raise ConfigurationError(
            f"chunk shape {a_k.shape[1:]} != ({cfg.horizon}, {cfg.action_dim})")
    kv = np.asarray(k, dtype=np.float64).reshape(B)
    cond = T.concat([obs_embedding, T.sinusoidal_embed(kv, cfg.k_embed_dim)], axis=1)
    cond_h = T.silu(T.linear(cond, params["cond.w"], params["cond.b"]))

    x = Tensor(np.swapaxes(a_k, 1, 2))                           # [B, A, T]
    tiled = T.mul(T.reshape(cond_h, (B, cfg.cond_hidden, 1)),
                  Tensor(np.ones((1, 1, cfg.horizon))))
    x = T.concat([x, tiled], axis=1)                             # [B, A+H, T]
    g = cfg.unet_groups
    h0 = _film_block(x, cond_h, params, "in", g)                 # [B, W, T]
    h1 = _film_block(_pool1d(h0), cond_h, params, "d1", g)       # [B, 2W, T/2]
    h2 = _film_block(_pool1d(h1), cond_h, params, "d2", g)       # [B, 2W, T/4]
    u1 = _film_block(T.concat([_up1d(h2), h1], axis=1), cond_h, params, "u1", g)
    u2 = _film_block(T.concat([_up1d(u1), h0], axis=1), cond_h, params, "u2", g)
    out = T.conv1d(u2, params["unet.out.w"], params["unet.out.b"])
    return T.swapaxes(out, 1, 2)                                 # [B, T, A]


def diffusion_loss(images: np.ndarray, proprio: np.ndarray, actions: np.ndarray,
                   sched: DiffusionSchedule, params: ParamStore,
                   cfg: PolicyConfig, rng: np.random.Generator) -> Tensor:
    """Mean over the batch of || eps - eps_hat ||^2 with uniform k per element."""
    B = actions.shape[0]
    if B == 0:
        raise ContractError("empty batch")
    k = rng.integers(1, sched.K + 1, size=B)
    eps = rng.standard_normal(actions.shape)
    ab = sched.alpha_bar[k - 1].reshape(B, 1, 1)
    a_k = np.sqrt(ab) * actions + np.sqrt(1.0 - ab) * eps
    emb = embed_observations(images, proprio, params, cfg)
    pred = predict_noise(emb, a_k, k, params, cfg)
    per_elem = T.mse(pred, Tensor(eps))
    return T.mul(per_elem, float(cfg.horizon * cfg.action_dim))


# ----------------------------------------------------------------------
# normalization statistics
# ----------------------------------------------------------------------

@dataclass
class NormStats:
    """Per-dimension action min/max and proprio mean/std from the train set."""

    action_min: np.ndarray
    action_max: np.ndarray
    proprio_mean: np.ndarray
    proprio_std: np.ndarray

    def normalize_actions(self, a: np.ndarray) -> np.ndarray:
        span = np.maximum(self.action_max - self.action_min, 1e-8)
        return 2.0 * (a - self.action_min) / span - 1.0

    def denormalize_actions(self, a: np.ndarray) -> np.ndarray:
        span = np.maximum(self.action_max - self.action_min, 1e-8)
        return (a + 1.0) * 0.5 * span + self.action_min

    def normalize_proprio(self, p: np.ndarray) -> np.ndarray:
        return (p - self.proprio_mean) / np.maximum(self.proprio_std, 1e-6)

    def to_manifest(self) -> dict:
        return {k: list(getattr(self, k)) for k in
                ("action_min", "action_max", "proprio_mean", "proprio_std")}

    @staticmethod
    def from_manifest(m: dict) -> "NormStats":
        return NormStats(**{k: np.asarray(m[k], dtype=np.float64) for k in
                            ("action_min", "action_max", "proprio_mean", "proprio_std")})


# ----------------------------------------------------------------------
# sampling
# ----------------------------------------------------------------------

def sample_chunk(obs_embedding: Tensor, sched: DiffusionSchedule,
                 params: ParamStore, cfg: PolicyConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Ancestral denoising from pure noise; returns a chunk in [-1, 1].

    Standard DDPM posterior with the implied clean chunk clipped to the
    normalized action range at every step (clip-denoised), which keeps
    early large-noise steps from wandering outside the data support.
    """
    x = rng.standard_normal((cfg.horizon, cfg.action_dim))
    with T.no_grad():
        for k in range(sched.K, 0, -1):
            ab = sched.alpha_bar[k - 1]
            ab_prev = sched.alpha_bar[k - 2] if k > 1 else 1.0
            beta = sched.beta[k - 1]
            alpha = sched.alpha[k - 1]
            eps_hat = predict_noise(obs_embedding, x[None], np.array([k]),
                                    params, cfg).data[0]
            x0 = (x - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)
            x0 = np.clip(x0, -1.0, 1.0)
            coef0 = math.sqrt(ab_prev) * beta / (1.0 - ab)
            coefk = math.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab)
            x = coef0 * x0 + coefk * x
            if k > 1:
                sigma = math.sqrt((1.0 - ab_prev) / (1.0 - ab) * beta)
                x = x + sigma * rng.standard_normal(x.shape)
            if not np.all(np.isfinite(x)):
                raise NumericDivergenceError(f"sampling diverged at step k={k}")
    return np.clip(x, -1.0, 1.0)


class PolicyRuntime:
    """A trained policy ready for closed-loop control."""

    def __init__(self, params: ParamStore, cfg: PolicyConfig, stats: NormStats,
                 meta: dict | None = None):
        self.params = params
        self.cfg = cfg
        self.stats = stats
        self.meta = meta or {}
        self.sched = make_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)

    def embed_history(self, history: list[Observation]) -> Tensor:
        """Observation history (oldest first, padded by caller) -> [1, E]."""
        if len(history) != self.cfg.history:
            raise ContractError(
                f"need exactly {self.cfg.history} observations, got {len(history)}")
        imgs = np.stack([img for obs in history for img in obs.images])
        props = np.stack([fuse_proprio(obs.proprio).data for obs in history])
        props = self.stats.normalize_proprio(props)
        return embed_observations(imgs[None], props[None], self.params, self.cfg)

    def sample_action(self, history: list[Observation],
                      rng: np.random.Generator) -> ActionChunk:
        """Denoise a fresh chunk and denormalize it to physical units."""
        with T.no_grad():
            emb = self.embed_history(history)
        chunk = sample_chunk(emb, self.sched, self.params, self.cfg, rng)
        return ActionChunk(self.stats.denormalize_actions(chunk),
                           t0=history[-1].t)


# ----------------------------------------------------------------------
# checkpoint container: text manifest + parameter blob
# ----------------------------------------------------------------------

CKPT_MAGIC = b"DBCK"


def save_checkpoint(path, params: ParamStore, cfg: PolicyConfig,
                    stats: NormStats, extra: dict | None = None) -> None:
    manifest = {"config": cfg.to_manifest(), "stats": stats.to_manifest(),
                "extra": extra or {}}
    text = json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(text)))
        f.write(text)
        f.write(params.save_bytes())


def load_checkpoint(path) -> PolicyRuntime:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CKPT_MAGIC:
        raise IntegrityError(f"{path}: not a policy checkpoint")
    (mlen,) = struct.unpack_from("<I", blob, 4)
    manifest = json.loads(blob[8:8 + mlen].decode("utf-8"))
    params = ParamStore.load_bytes(blob[8 + mlen:])
    cfg = PolicyConfig.from_manifest(manifest["config"])
    stats = NormStats.from_manifest(manifest["stats"])
    return PolicyRuntime(params, cfg, stats, meta=manifest.get("extra", {}))


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------

def config_hash(cfg: PolicyConfig) -> str:
    return hashlib.sha256(
        json.dumps(cfg.to_manifest(), sort_keys=True).encode()).hexdigest()[:16]


def train(dataset, cfg: PolicyConfig, steps: int = 1500, batch_size: int = 24,
          lr: float = 2e-3, log_every: int = 50,
          progress=None) -> tuple[ParamStore, dict]:
    """Adam optimization of the denoising objective on a sample dataset.

    dataset is a datastore.SampleSet; determinism: one seeded generator
    drives init, batch order, diffusion steps, and noise.
    """
    if len(dataset) == 0:
        raise ContractError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    params = init_policy_params(cfg, rng)
    sched = make_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)
    stats = dataset.stats
    curve = []
    for step in range(steps):
        idx = rng.integers(0, len(dataset), size=batch_size)
        images, proprio, actions = dataset.gather(idx)
        proprio = stats.normalize_proprio(proprio)
        actions = stats.normalize_actions(actions)
        loss = diffusion_loss(images, proprio, actions, sched, params, cfg, rng)
        params.zero_grads()
        T.backward(loss)
        T.adam_step(params, lr)
        if step % log_every == 0 or step == steps - 1:
            curve.append((step, float(loss.data)))
            if progress:
                progress(step, steps, float(loss.data))
    report = {
        "variant": cfg.variant,
        "steps": steps,
        "batch_size": batch_size,
        "lr": lr,
        "loss_curve": curve,
        "loss_first": curve[0][1],
        "loss_last": curve[-1][1],
        "config_hash": config_hash(cfg),
        "dataset_hash": dataset.content_hash,
        "num_samples": len(dataset),
        "param_count": params.num_params(),
    }
    return params, report
