"""Visual encoder with a spatio-frequency fusion block.

The fusion block blends two views of a feature map:

  spatial path   -- grouped cross-space attention: a group-normalized 1x1
                    branch and a 3x3 branch are dotted per group, softmaxed
                    over spatial positions, and gate the input features;
  frequency path -- one-level Haar decomposition; the detail bands are
                    summed onto the approximation band, refined by a small
                    residual block, and upsampled back to input resolution;

  out = alpha * spatial + (1 - alpha) * frequency

with alpha a single learnable scalar through a sigmoid (or a fixed
constant). Both branch convolutions operate on the grouped channel view
and share weights across groups, which keeps the block's parameter count
negligible next to the backbone; `fusion_overhead` reports exact counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import ParamStore, Tensor
from .wavelet import DwtQuad, haar_dwt2


@dataclass
class FusionConfig:
    channels: int
    groups: int
    alpha_init: float = 0.5
    alpha_learnable: bool = True

    def __post_init__(self):
        if self.channels % self.groups:
            raise ConfigurationError(
                f"fusion groups {self.groups} do not divide channels {self.channels}")
        if not 0.0 < self.alpha_init < 1.0:
            raise ConfigurationError(f"alpha_init must be in (0,1), got {self.alpha_init}")


@dataclass
class EncoderConfig:
    """Conv backbone: stem pool, then conv3x3+GN+SiLU+avgpool stages.

    head "flatten" keeps the final map's coarse spatial layout in the
    embedding (object positions matter downstream); "gap" averages it out.
    """

    input_size: tuple[int, int, int] = (3, 64, 64)
    stage_channels: tuple[int, ...] = (12, 24, 48)
    fusion_stage: int = 2            # fusion applied after this stage's activation
    embed_dim: int = 32
    stem_pool: int = 2               # spatial downsample factor before stage 1
    norm_groups: int = 4
    head: str = "flatten"
    coord_channels: bool = True      # append x/y position ramps to the input
    fusion: FusionConfig | None = None

    def __post_init__(self):
        if self.stem_pool not in (1, 2, 4):
            raise ConfigurationError(f"stem_pool must be 1, 2 or 4, got {self.stem_pool}")
        if self.head not in ("flatten", "gap"):
            raise ConfigurationError(f"head must be 'flatten' or 'gap', got {self.head}")
        for c in self.stage_channels:
            if c % self.norm_groups:
                raise ConfigurationError(
                    f"norm_groups {self.norm_groups} does not divide stage width {c}")
        if not 1 <= self.fusion_stage <= len(self.stage_channels):
            raise ConfigurationError(f"fusion_stage {self.fusion_stage} out of range")
        h, w = self.spatial_at_stage(self.fusion_stage)
        if h % 2 or w % 2 or h < 2 or w < 2:
            raise ConfigurationError(
                f"fusion insertion point has odd/degenerate dims {h}x{w}")
        if self.fusion is not None and self.fusion.channels != self.stage_channels[self.fusion_stage - 1]:
            raise ConfigurationError("fusion channels must match the insertion stage width")

    def spatial_at_stage(self, stage: int) -> tuple[int, int]:
        """Spatial dims of stage's activation (before its pool), 1-based."""
        h, w = self.input_size[1] // self.stem_pool, self.input_size[2] // self.stem_pool
        for _ in range(stage - 1):
            h, w = h // 2, w // 2
        return h, w

    def head_in_dim(self) -> int:
        h, w = self.spatial_at_stage(len(self.stage_channels))
        c = self.stage_channels[-1]
        return c * (h // 2) * (w // 2) if self.head == "flatten" else c


def default_encoder_config(use_fusion: bool = True) -> EncoderConfig:
    cfg = EncoderConfig()
    if use_fusion:
        cfg.fusion = FusionConfig(channels=cfg.stage_channels[cfg.fusion_stage - 1],
                                  groups=12)
    return cfg


# ----------------------------------------------------------------------
# parameter initialization
# ----------------------------------------------------------------------

def _conv_w(rng, cout, cin, k=3):
    return Tensor(rng.standard_normal((cout, cin, k, k)) * math.sqrt(2.0 / (cin * k * k)))


def init_fusion_params(cfg: FusionConfig, store: ParamStore, prefix: str,
                       rng: np.random.Generator) -> None:
    cg = cfg.channels // cfg.groups
    store.add(prefix + "sp.conv1.w", Tensor(rng.standard_normal((cg, cg)) * math.sqrt(1.0 / cg)))
    store.add(prefix + "sp.conv1.b", Tensor.zeros(cg))
    store.add(prefix + "sp.gn.g", Tensor.ones(cg))
    store.add(prefix + "sp.gn.b", Tensor.zeros(cg))
    store.add(prefix + "sp.conv3.w", _conv_w(rng, cg, cg))
    store.add(prefix + "sp.conv3.b", Tensor.zeros(cg))
    store.add(prefix + "fr.gn1.g", Tensor.ones(cg))
    store.add(prefix + "fr.gn1.b", Tensor.zeros(cg))
    store.add(prefix + "fr.conv1.w", _conv_w(rng, cg, cg))
    store.add(prefix + "fr.conv1.b", Tensor.zeros(cg))
    store.add(prefix + "fr.gn2.g", Tensor.ones(cg))
    store.add(prefix + "fr.gn2.b", Tensor.zeros(cg))
    store.add(prefix + "fr.conv2.w", _conv_w(rng, cg, cg))
    store.add(prefix + "fr.conv2.b", Tensor.zeros(cg))
    if cfg.alpha_learnable:
        logit = math.log(cfg.alpha_init / (1.0 - cfg.alpha_init))
        store.add(prefix + "alpha_logit", Tensor(np.array([logit])))


def init_encoder_params(cfg: EncoderConfig, store: ParamStore, prefix: str,
                        rng: np.random.Generator) -> None:
    cin = cfg.input_size[0] + (2 if cfg.coord_channels else 0)
    for i, cout in enumerate(cfg.stage_channels, start=1):
        store.add(f"{prefix}stage{i}.w", _conv_w(rng, cout, cin))
        store.add(f"{prefix}stage{i}.b", Tensor.zeros(cout))
        store.add(f"{prefix}stage{i}.gn.g", Tensor.ones(cout))
        store.add(f"{prefix}stage{i}.gn.b", Tensor.zeros(cout))
        cin = cout
    head_in = cfg.head_in_dim()
    store.add(prefix + "head.w",
              Tensor(rng.standard_normal((head_in, cfg.embed_dim))
                     * math.sqrt(1.0 / head_in)))
    store.add(prefix + "head.b", Tensor.zeros(cfg.embed_dim))
    if cfg.fusion is not None:
        init_fusion_params(cfg.fusion, store, prefix + "fusion.", rng)


def fusion_overhead(store: ParamStore, prefix: str = "enc.") -> dict:
    """Exact parameter counts: fusion block vs the rest of the encoder."""
    total = store.num_params(prefix)
    fusion = store.num_params(prefix + "fusion.")
    backbone = total - fusion
    return {
        "encoder_params": backbone,
        "fusion_params": fusion,
        "overhead_fraction": fusion / backbone if backbone else 0.0,
    }


# ----------------------------------------------------------------------
# fusion block operations (batched [B, C, H, W])
# ----------------------------------------------------------------------

def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbor x2 upsample of the trailing two dims."""
    *lead, h, w = x.shape
    y = T.reshape(x, (*lead, h, w, 1))
    y = T.concat([y, y], axis=len(lead) + 2)
    y = T.reshape(y, (*lead, h, 1, 2 * w))
    y = T.concat([y, y], axis=len(lead) + 1)
    return T.reshape(y, (*lead, 2 * h, 2 * w))


def high_freq_sum(q: DwtQuad) -> Tensor:
    """Sum of the three detail bands."""
    return T.add(T.add(q.cH, q.cV), q.cD)


def _grouped(x: Tensor, groups: int) -> Tensor:
    B, C, H, W = x.shape
    return T.reshape(x, (B * groups, C // groups, H, W))


def _ungrouped(x: Tensor, groups: int, batch: int) -> Tensor:
    bg, cg, H, W = x.shape
    return T.reshape(x, (batch, cg * groups, H, W))


def _resblock(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    h = T.group_norm(x, params[prefix + "gn1.g"], params[prefix + "gn1.b"], groups=1)
    h = T.conv2d(T.silu(h), params[prefix + "conv1.w"], params[prefix + "conv1.b"])
    h = T.group_norm(h, params[prefix + "gn2.g"], params[prefix + "gn2.b"], groups=1)
    h = T.conv2d(T.silu(h), params[prefix + "conv2.w"], params[prefix + "conv2.b"])
    return T.add(x, h)


def freq_branch(q: DwtQuad, params: ParamStore, cfg: FusionConfig,
                prefix: str = "enc.fusion.") -> Tensor:
    """Residual-refined approximation+detail features at input resolution."""
    base = T.add(q.cA, high_freq_sum(q))
    B = base.shape[0]
    if base.shape[1] != cfg.channels:
        raise ConfigurationError(
            f"freq_branch: got {base.shape[1]} channels, config says {cfg.channels}")
    g = _grouped(base, cfg.groups)
    out = _resblock(g, params, prefix + "fr.")
    return upsample_nearest2(_ungrouped(out, cfg.groups, B))


def attention_map(x: Tensor, params: ParamStore, cfg: FusionConfig,
                  prefix: str = "enc.fusion.") -> Tensor:
    """Per-group spatial attention rows [B*G, H*W]; each row sums to 1."""
    B, C, H, W = x.shape
    if C % cfg.groups:
        raise ConfigurationError(f"spatial_branch: {cfg.groups} groups vs {C} channels")
    cg = C // cfg.groups
    g = _grouped(x, cfg.groups)                                   # [B*G, cg, H, W]
    flat = T.reshape(g, (B * cfg.groups, cg, H * W))
    # 1x1 conv as a per-position channel mix
    b1 = T.matmul(params[prefix + "sp.conv1.w"], flat)
    b1 = T.add(b1, T.reshape(params[prefix + "sp.conv1.b"], (cg, 1)))
    b1 = T.group_norm(T.reshape(b1, (B * cfg.groups, cg, H, W)),
                      params[prefix + "sp.gn.g"], params[prefix + "sp.gn.b"], groups=1)
    b2 = T.conv2d(g, params[prefix + "sp.conv3.w"], params[prefix + "sp.conv3.b"],
                  pad_mode="symmetric")
    scores = T.tsum(T.mul(T.reshape(b1, (B * cfg.groups, cg, H * W)),
                          T.reshape(b2, (B * cfg.groups, cg, H * W))), axis=1)
    return T.softmax(scores, axis=-1)


def spatial_branch(x: Tensor, params: ParamStore, cfg: FusionConfig,
                   prefix: str = "enc.fusion.") -> Tensor:
    """Grouped cross-space attention: the softmax map gates the features."""
    B, C, H, W = x.shape
    attn = attention_map(x, params, cfg, prefix)
    gate = T.sigmoid(T.reshape(attn, (B * cfg.groups, 1, H, W)))
    return _ungrouped(T.mul(_grouped(x, cfg.groups), gate), cfg.groups, B)


def fuse_spatio_freq(x: Tensor, params: ParamStore, cfg: FusionConfig,
                     prefix: str = "enc.fusion.",
                     alpha_override: float | None = None) -> Tensor:
    """alpha-blend of the spatial and frequency branches (even dims required)."""
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise DimensionError(f"fuse_spatio_freq: spatial dims must be even, got {x.shape}")
    xs = spatial_branch(x, params, cfg, prefix)
    xf = freq_branch(haar_dwt2(x), params, cfg, prefix)
    if alpha_override is not None:
        alpha = Tensor(np.array([float(alpha_override)]))
    elif cfg.alpha_learnable:
        alpha = T.sigmoid(params[prefix + "alpha_logit"])
    else:
        alpha = Tensor(np.array([cfg.alpha_init]))
    return T.add(T.mul(alpha, xs), T.mul(T.sub(1.0, alpha), xf))


# ----------------------------------------------------------------------
# encoder
# ----------------------------------------------------------------------

_coord_cache: dict = {}


def _coord_planes(h: int, w: int) -> np.ndarray:
    key = (h, w)
    if key not in _coord_cache:
        ys, xs = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w),
                             indexing="ij")
        _coord_cache[key] = np.stack([xs, ys])[None]
    return _coord_cache[key]


def encode_image(img: Tensor, params: ParamStore, cfg: EncoderConfig,
                 prefix: str = "enc.") -> Tensor:
    """Embed [C,H,W] (or [B,C,H,W]) pixels in [0,1] to a D-dim vector."""
    squeeze = img.data.ndim == 3
    x = T.reshape(img, (1, *img.shape)) if squeeze else img
    if tuple(x.shape[1:]) != tuple(cfg.input_size):
        raise DimensionError(
            f"encode_image: expected input {cfg.input_size}, got {tuple(x.shape[1:])}")
    if cfg.coord_channels:
        B, _, H, W = x.shape
        coords = np.broadcast_to(_coord_planes(H, W), (B, 2, H, W))
        x = T.concat([x, Tensor(np.ascontiguousarray(coords))], axis=1)
    pools = {1: 0, 2: 1, 4: 2}[cfg.stem_pool]
    for _ in range(pools):
        x = T.avg_pool2d(x)
    for i in range(1, len(cfg.stage_channels) + 1):
        p = f"{prefix}stage{i}."
        x = T.conv2d(x, params[p + "w"], params[p + "b"])
        x = T.group_norm(x, params[p + "gn.g"], params[p + "gn.b"], cfg.norm_groups)
        x = T.silu(x)
        if i == cfg.fusion_stage and cfg.fusion is not None:
            x = fuse_spatio_freq(x, params, cfg.fusion, prefix + "fusion.")
        x = T.avg_pool2d(x)
    if cfg.head == "flatten":
        x = T.reshape(x, (x.shape[0], -1))
    else:
        x = T.tmean(x, axis=(-2, -1))
    out = T.linear(x, params[prefix + "head.w"], params[prefix + "head.b"])
    return T.reshape(out, (cfg.embed_dim,)) if squeeze else out
