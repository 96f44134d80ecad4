"""Single-level 2D Haar wavelet analysis/synthesis, orthonormal convention.

For each 2x2 block (a b / c d) the four coefficients are

    cA = (a+b+c+d)/2    cH = (a+b-c-d)/2
    cV = (a-b+c-d)/2    cD = (a-b-c+d)/2

so the per-block transform matrix is orthogonal: energy is conserved
exactly and the synthesis transform equals the transpose. Both directions
are differentiable (linear maps; the gradient is the transpose map).
Inputs are [C,H,W] or [B,C,H,W] with even spatial dims.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, _make


@dataclass
class DwtQuad:
    """One decomposition level: approximation + H/V/D detail bands."""

    cA: Tensor
    cH: Tensor
    cV: Tensor
    cD: Tensor

    def components(self):
        return (self.cA, self.cH, self.cV, self.cD)

    @property
    def shape(self):
        return self.cA.shape


def _check_even(x: Tensor) -> None:
    if x.data.ndim not in (3, 4):
        raise DimensionError(f"haar_dwt2: expected [C,H,W] or [B,C,H,W], got {x.shape}")
    H, W = x.data.shape[-2:]
    if H % 2 or W % 2:
        raise DimensionError(
            f"haar_dwt2: spatial dims {H}x{W} must be even (apply pad_even first)")


def _blocks(xd: np.ndarray):
    """Views of the four corners of every 2x2 block: a b / c d."""
    lead = xd.shape[:-2]
    H, W = xd.shape[-2:]
    v = xd.reshape(*lead, H // 2, 2, W // 2, 2)
    return v[..., 0, :, 0], v[..., 0, :, 1], v[..., 1, :, 0], v[..., 1, :, 1]


def _merge(a, b, c, d) -> np.ndarray:
    lead = a.shape[:-2]
    h2, w2 = a.shape[-2:]
    out = np.empty((*lead, h2, 2, w2, 2), dtype=np.float64)
    out[..., 0, :, 0] = a
    out[..., 0, :, 1] = b
    out[..., 1, :, 0] = c
    out[..., 1, :, 1] = d
    return out.reshape(*lead, h2 * 2, w2 * 2)


# signs of (a, b, c, d) in each coefficient, and of each coefficient in (a..d)
_SIGNS = {
    "cA": (1, 1, 1, 1),
    "cH": (1, 1, -1, -1),
    "cV": (1, -1, 1, -1),
    "cD": (1, -1, -1, 1),
}


def haar_dwt2(x: Tensor) -> DwtQuad:
    """Orthonormal single-level Haar analysis of an even-dim feature map."""
    _check_even(x)
    a, b, c, d = _blocks(x.data)
    comps = {}
    for name, (sa, sb, sc, sd) in _SIGNS.items():
        data = (sa * a + sb * b + sc * c + sd * d) * 0.5
        comps[name] = _make(data, (x,), _coeff_backward(x, (sa, sb, sc, sd)))
    return DwtQuad(comps["cA"], comps["cH"], comps["cV"], comps["cD"])


def _coeff_backward(x: Tensor, signs):
    sa, sb, sc, sd = signs

    def bw(g, acc):
        acc(x, _merge(sa * g * 0.5, sb * g * 0.5, sc * g * 0.5, sd * g * 0.5))

    return bw


def haar_idwt2(q: DwtQuad) -> Tensor:
    """Exact synthesis inverse of haar_dwt2."""
    shapes = {t.data.shape for t in q.components()}
    if len(shapes) != 1:
        raise DimensionError(f"haar_idwt2: component shapes differ: {sorted(shapes)}")
    A, Hc, V, D = (t.data for t in q.components())
    a = (A + Hc + V + D) * 0.5
    b = (A + Hc - V - D) * 0.5
    c = (A - Hc + V - D) * 0.5
    d = (A - Hc - V + D) * 0.5
    data = _merge(a, b, c, d)

    def bw(g, acc):
        ga, gb, gc, gd = _blocks(g)
        for t, (sa, sb, sc, sd) in zip(q.components(), _SIGNS.values()):
            acc(t, (sa * ga + sb * gb + sc * gc + sd * gd) * 0.5)

    return _make(data, q.components(), bw)


def pad_even(x: Tensor) -> tuple[Tensor, tuple[int, int]]:
    """Mirror-pad at most one trailing row/column so spatial dims are even.

    Returns (padded, (pad_h, pad_w)) so callers can crop back. The added
    row/column repeats the last one (symmetric reflection about the edge).
    """
    if x.data.ndim < 2:
        raise DimensionError(f"pad_even: need at least 2 dims, got {x.shape}")
    H, W = x.data.shape[-2:]
    ph, pw = H % 2, W % 2
    if not ph and not pw:
        return x, (0, 0)
    width = [(0, 0)] * (x.data.ndim - 2) + [(0, ph), (0, pw)]
    data = np.pad(x.data, width, mode="symmetric")

    def bw(g, acc):
        gx = g.copy()
        if ph:
            gx[..., H - 1, :] += gx[..., H, :]
        if pw:
            gx[..., :, W - 1] += gx[..., :, W]
        acc(x, gx[..., :H, :W])

    return _make(data, (x,), bw), (ph, pw)
