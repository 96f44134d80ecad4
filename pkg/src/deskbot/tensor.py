"""Dense float64 tensors with reverse-mode automatic differentiation.

The operator set is fixed and small: exactly what the policy networks in
this package need. Every operator records a backward closure when gradients
are required; `backward()` walks the tape in reverse topological order.
Gradients accumulate on requires_grad leaves until explicitly zeroed, which
is what a standard training loop expects.

All math is 64-bit and deterministic: identical inputs give bit-identical
outputs and gradients.
"""

from __future__ import annotations

import os
import struct
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError

_GRAD_ENABLED = True
_DEBUG = bool(int(os.environ.get("DESKBOT_DEBUG", "0")))


def set_debug(flag: bool) -> None:
    """Enable finite-value checks after every operation (slow)."""
    global _DEBUG
    _DEBUG = flag


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """N-dimensional float64 array, optionally tracked by the autodiff tape.

    data is row-major; grad (when populated) always has data's shape.
    Tensors are treated as immutable after construction except for the
    in-place parameter updates applied by the optimizer.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- constructors -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=np.float64), requires_grad)

    @staticmethod
    def ones(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=np.float64), requires_grad)

    @staticmethod
    def randn(shape, rng: np.random.Generator, scale: float = 1.0,
              requires_grad: bool = False) -> "Tensor":
        return Tensor(rng.standard_normal(shape) * scale, requires_grad)

    # -- misc ----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the module-level functions do the work
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def reshape(self, shape):
        return reshape(self, shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result, recording the tape edge when gradients are on."""
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by tensor op")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce grad over dims that were broadcast to reach grad.shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g, acc):
        acc(a, _unbroadcast(g * b.data, a.data.shape))
        acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """numpy-semantics matmul for >=2D operands (leading dims broadcast)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul: operands must be >=2D, got {a.shape} and {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")

    def bw(g, acc):
        acc(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _make(data, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[..., in] @ w[in, out] (+ b[out])."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.shape[-1] != w.data.shape[0]:
        raise DimensionError(f"linear: input dim {x.shape} vs weight {w.shape}")
    data = x.data @ w.data
    if b is not None:
        data = data + b.data

    def bw(g, acc):
        acc(x, g @ w.data.T)
        xf = x.data.reshape(-1, x.data.shape[-1])
        gf = g.reshape(-1, g.shape[-1])
        acc(w, xf.T @ gf)
        if b is not None:
            acc(b, gf.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, parents, bw)


# ----------------------------------------------------------------------
# convolutions (stride 1, same padding)
# ----------------------------------------------------------------------

def _conv2d_cols(xp: np.ndarray, kh: int, kw: int, H: int, W: int) -> np.ndarray:
    """im2col for padded input xp [B, C, H+kh-1, W+kw-1] -> [B, C*kh*kw, H*W]."""
    B, C = xp.shape[0], xp.shape[1]
    views = [xp[:, :, i:i + H, j:j + W] for i in range(kh) for j in range(kw)]
    cols = np.stack(views, axis=2)  # [B, C, kh*kw, H, W]
    return cols.reshape(B, C * kh * kw, H * W)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           pad_mode: str = "zero") -> Tensor:
    """3x3 convolution, stride 1, pad 1. x: [C,H,W] or [B,C,H,W].

    pad_mode "zero" or "symmetric" (edge rows mirrored; preserves
    spatially-constant inputs, which attention branches rely on).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise DimensionError(f"conv2d: expected 3D or 4D input, got {x.shape}")
    if w.data.ndim != 4 or w.data.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d: expected [Cout,Cin,3,3] weight, got {w.shape}")
    B, C, H, W = xd.shape
    Cout, Cin = w.data.shape[:2]
    if Cin != C:
        raise DimensionError(f"conv2d: input channels {C} vs weight {w.shape}")
    pad = ((0, 0), (0, 0), (1, 1), (1, 1))
    xp = np.pad(xd, pad) if pad_mode == "zero" else np.pad(xd, pad, mode="symmetric")
    cols = _conv2d_cols(xp, 3, 3, H, W)                      # [B, C*9, H*W]
    wf = w.data.reshape(Cout, Cin * 9)
    out = wf @ cols                                          # [B, Cout, H*W]
    out = out.reshape(B, Cout, H, W)
    if b is not None:
        out = out + b.data.reshape(1, Cout, 1, 1)
    if squeeze:
        out = out[0]

    def bw(g, acc):
        gd = g[None] if squeeze else g
        gf = gd.reshape(B, Cout, H * W)
        acc(w, np.einsum("boh,bch->oc", gf, cols).reshape(w.data.shape))
        dcols = wf.T @ gf                                    # [B, C*9, H*W]
        dcols = dcols.reshape(B, C, 9, H, W)
        dxp = np.zeros_like(xp)
        for idx in range(9):
            i, j = divmod(idx, 3)
            dxp[:, :, i:i + H, j:j + W] += dcols[:, :, idx]
        if pad_mode != "zero":  # fold mirrored borders back onto edge rows/cols
            dxp[:, :, 1, :] += dxp[:, :, 0, :]
            dxp[:, :, H, :] += dxp[:, :, H + 1, :]
            dxp[:, :, :, 1] += dxp[:, :, :, 0]
            dxp[:, :, :, W] += dxp[:, :, :, W + 1]
        dx = dxp[:, :, 1:1 + H, 1:1 + W]
        acc(x, dx[0] if squeeze else dx)
        if b is not None:
            acc(b, gd.sum(axis=(0, 2, 3)))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """1D convolution with odd kernel, stride 1, same zero padding.

    x: [C,T] or [B,C,T]; w: [Cout, Cin, k].
    """
    x, w = _as_tensor(x), _as_tensor(w)
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.data.ndim != 3:
        raise DimensionError(f"conv1d: got input {x.shape}, weight {w.shape}")
    B, C, T = xd.shape
    Cout, Cin, k = w.data.shape
    if Cin != C or k % 2 == 0:
        raise DimensionError(f"conv1d: input {x.shape} vs weight {w.shape}")
    p = k // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p)))
    views = [xp[:, :, i:i + T] for i in range(k)]
    cols = np.stack(views, axis=2).reshape(B, C * k, T)
    wf = w.data.reshape(Cout, Cin * k)
    out = (wf @ cols).reshape(B, Cout, T)
    if b is not None:
        out = out + b.data.reshape(1, Cout, 1)
    if squeeze:
        out = out[0]

    def bw(g, acc):
        gd = g[None] if squeeze else g
        gf = gd.reshape(B, Cout, T)
        acc(w, np.einsum("bot,bct->oc", gf, cols).reshape(w.data.shape))
        dcols = (wf.T @ gf).reshape(B, C, k, T)
        dxp = np.zeros_like(xp)
        for i in range(k):
            dxp[:, :, i:i + T] += dcols[:, :, i]
        dx = dxp[:, :, p:p + T]
        acc(x, dx[0] if squeeze else dx)
        if b is not None:
            acc(b, gd.sum(axis=(0, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw)


# ----------------------------------------------------------------------
# nonlinearities
# ----------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g, acc: acc(x, g * mask))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _make(s, (x,), lambda g, acc: acc(x, g * s * (1.0 - s)))


def silu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    y = x.data * s
    return _make(y, (x,), lambda g, acc: acc(x, g * (s + y * (1.0 - s))))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g, acc):
        acc(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), bw)


# ----------------------------------------------------------------------
# normalization
# ----------------------------------------------------------------------

def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int,
               eps: float = 1e-5) -> Tensor:
    """Group normalization over batched input [B, C, spatial...].

    Normalizes each (sample, group) slice to zero mean / unit variance,
    then applies per-channel affine gamma/beta (shape [C]). Callers with
    a single sample promote to a leading batch dim of 1.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    xd = x.data
    if xd.ndim < 2:
        raise DimensionError(f"group_norm: expected [B, C, ...], got {x.shape}")
    B, C = xd.shape[0], xd.shape[1]
    if C % groups:
        raise ConfigurationError(f"group_norm: {groups} groups do not divide {C} channels")
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise DimensionError(f"group_norm: affine params must be [{C}]")
    spatial = xd.shape[2:]
    n = (C // groups) * int(np.prod(spatial)) if spatial else C // groups
    xg = xd.reshape(B, groups, n)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xg - mu) * inv
    xhat_full = xhat.reshape(xd.shape)
    gshape = (1, C) + (1,) * len(spatial)
    out = xhat_full * gamma.data.reshape(gshape) + beta.data.reshape(gshape)

    def bw(g, acc):
        axes = (0,) + tuple(range(2, xd.ndim))
        acc(beta, g.sum(axis=axes))
        acc(gamma, (g * xhat_full).sum(axis=axes))
        dxhat = (g * gamma.data.reshape(gshape)).reshape(B, groups, n)
        # standard layer-norm backward per group
        dx = inv * (dxhat
                    - dxhat.mean(axis=2, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=2, keepdims=True))
        acc(x, dx.reshape(xd.shape))

    return _make(out, (x, gamma, beta), bw)


# ----------------------------------------------------------------------
# reductions and reshaping
# ----------------------------------------------------------------------

def _reduce_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _reduce_axes(axis, x.data.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g, acc):
        gg = g if keepdims else np.expand_dims(g, axes)
        acc(x, np.broadcast_to(gg, x.data.shape).copy())

    return _make(data, (x,), bw)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _reduce_axes(axis, x.data.ndim)
    count = int(np.prod([x.data.shape[a] for a in axes]))
    data = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g, acc):
        gg = g if keepdims else np.expand_dims(g, axes)
        acc(x, np.broadcast_to(gg, x.data.shape) / count)

    return _make(data, (x,), bw)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Scalar mean of squared differences over all elements."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    n = diff.size
    data = np.asarray((diff * diff).sum() / n)

    def bw(g, acc):
        s = 2.0 * float(g) / n
        acc(a, s * diff)
        acc(b, -s * diff)

    return _make(data, (a, b), bw)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: shapes {[t.shape for t in ts]} incompatible on axis {axis}")
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw(g, acc):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            acc(t, g[tuple(idx)])

    return _make(data, tuple(ts), bw)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    return _make(data, (x,), lambda g, acc: acc(x, g.reshape(x.data.shape)))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    x = _as_tensor(x)
    data = np.ascontiguousarray(np.swapaxes(x.data, a, b))
    return _make(data, (x,), lambda g, acc: acc(x, np.swapaxes(g, a, b)))


def avg_pool2d(x: Tensor) -> Tensor:
    """2x2 average pooling, stride 2, over the trailing two dims."""
    x = _as_tensor(x)
    H, W = x.data.shape[-2:]
    if H % 2 or W % 2:
        raise DimensionError(f"avg_pool2d: spatial dims {H}x{W} must be even")
    lead = x.data.shape[:-2]
    v = x.data.reshape(*lead, H // 2, 2, W // 2, 2)
    data = v.mean(axis=(-3, -1))

    def bw(g, acc):
        gg = np.repeat(np.repeat(g, 2, axis=-1), 2, axis=-2) / 4.0
        acc(x, gg)

    return _make(data, (x,), bw)


def sinusoidal_embed(t, dim: int) -> Tensor:
    """Transformer-style sinusoidal embedding of integer step(s) t.

    Scalar t -> [dim]; vector t [B] -> [B, dim]. Constant w.r.t. the tape.
    """
    if dim % 2:
        raise ConfigurationError("sinusoidal_embed: dim must be even")
    tv = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = tv[..., None] * freqs
    return Tensor(np.concatenate([np.sin(ang), np.cos(ang)], axis=-1))


# ----------------------------------------------------------------------
# backward pass
# ----------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad leaf reachable from loss.

    loss must be scalar. Grads accumulate across calls until zeroed.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def acc(node: Tensor, g: np.ndarray):
        if not node.requires_grad:
            return
        key = id(node)
        if key in grads:
            grads[key] = grads[key] + g
        else:
            grads[key] = np.array(g, dtype=np.float64, copy=True)

    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            node._backward(g, acc)
        else:
            node.grad = g if node.grad is None else node.grad + g


# ----------------------------------------------------------------------
# parameter store + Adam
# ----------------------------------------------------------------------

CHECKPOINT_MAGIC = b"DBTP"
CHECKPOINT_VERSION = 1


class ParamStore:
    """Named trainable parameters with deterministic (sorted) iteration."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.step_count = 0
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name: {name}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def num_params(self, prefix: str = "") -> int:
        return sum(p.size for n, p in self.items() if n.startswith(prefix))

    def zero_grads(self) -> None:
        for _, p in self.items():
            p.grad = None

    # -- persistence ---------------------------------------------------

    def save_bytes(self) -> bytes:
        """Serialize: magic, version, count, then sorted (name, shape, f64le)."""
        out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(self._params))]
        for name, p in self.items():
            nb = name.encode("utf-8")
            out.append(struct.pack("<H", len(nb)))
            out.append(nb)
            out.append(struct.pack("<B", p.data.ndim))
            out.append(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            out.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        return b"".join(out)

    @staticmethod
    def load_bytes(blob: bytes) -> "ParamStore":
        from .errors import IntegrityError
        if blob[:4] != CHECKPOINT_MAGIC:
            raise IntegrityError("parameter blob: bad magic")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != CHECKPOINT_VERSION:
            raise IntegrityError(f"parameter blob: unsupported version {version}")
        store = ParamStore()
        off = 12
        try:
            for _ in range(count):
                (nlen,) = struct.unpack_from("<H", blob, off)
                off += 2
                name = blob[off:off + nlen].decode("utf-8")
                off += nlen
                (ndim,) = struct.unpack_from("<B", blob, off)
                off += 1
                shape = struct.unpack_from(f"<{ndim}I", blob, off)
                off += 4 * ndim
                n = int(np.prod(shape)) if ndim else 1
                arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
                off += 8 * n
                store.add(name, Tensor(arr.astype(np.float64)))
        except (struct.error, ValueError) as e:
            raise IntegrityError(f"parameter blob truncated: {e}")
        return store

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.save_bytes())

    @staticmethod
    def load(path) -> "ParamStore":
        with open(path, "rb") as f:
            return ParamStore.load_bytes(f.read())


def adam_step(store: ParamStore, lr: float, betas=(0.9, 0.999),
              eps: float = 1e-8) -> None:
    """One Adam update over all parameters. Grads are left untouched."""
    b1, b2 = betas
    for name, p in store.items():
        if p.grad is None:
            raise ContractError(f"adam_step: parameter '{name}' has no gradient")
    store.step_count += 1
    t = store.step_count
    for name, p in store.items():
        g = p.grad
        m = store._adam_m.get(name)
        v = store._adam_v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        store._adam_m[name] = m
        store._adam_v[name] = v
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
