"""Flat-shaded rasterizer producing 8-bit-quantized frames.

Views are world-space windows (center + half-extent) sampled at RES^2, so
a wrist camera is rendered natively at higher effective resolution rather
than cropped from the top view. Everything is vectorized boolean masks in
painter's order; identical states give byte-identical frames.
"""

from __future__ import annotations

import numpy as np

RES = 64

COLORS = {
    "background": (235, 235, 235),
    "red": (200, 40, 40),
    "green": (50, 160, 60),
    "blue": (40, 70, 200),
    "yellow": (225, 195, 40),
    "gray": (105, 105, 105),
    "orange": (210, 130, 40),
    "magenta": (180, 50, 180),
    "cyan": (40, 170, 180),
    "body": (45, 45, 70),
    "nose": (250, 250, 250),
    "arm": (20, 20, 20),
    "out_of_arena": (60, 60, 60),
}


class View:
    """World-space sampling grid for one camera window."""

    def __init__(self, cx: float, cy: float, half: float):
        ticks = (np.arange(RES) + 0.5) / RES * (2 * half)
        self.xx = cx - half + ticks[None, :] * np.ones((RES, 1))
        self.yy = cy + half - ticks[:, None] * np.ones((1, RES))
        self.scale = half / 0.5  # 1.0 for the full-arena view


def _circle(view, img, cx, cy, r, color):
    m = (view.xx - cx) ** 2 + (view.yy - cy) ** 2 <= r * r
    img[m] = color


def _ring(view, img, cx, cy, r_out, width, color):
    d2 = (view.xx - cx) ** 2 + (view.yy - cy) ** 2
    m = (d2 <= r_out * r_out) & (d2 >= (r_out - width) ** 2)
    img[m] = color


def _segment(view, img, ax, ay, bx, by, width, color):
    ux, uy = bx - ax, by - ay
    L2 = ux * ux + uy * uy
    if L2 < 1e-12:
        t = np.zeros_like(view.xx)
    else:
        t = np.clip(((view.xx - ax) * ux + (view.yy - ay) * uy) / L2, 0.0, 1.0)
    dx = view.xx - (ax + t * ux)
    dy = view.yy - (ay + t * uy)
    img[dx * dx + dy * dy <= width * width] = color


def _triangle(view, img, p0, p1, p2, color):
    xx, yy = view.xx, view.yy

    def half(a, b):
        return (b[0] - a[0]) * (yy - a[1]) - (b[1] - a[1]) * (xx - a[0])

    s0, s1, s2 = half(p0, p1), half(p1, p2), half(p2, p0)
    m = ((s0 >= 0) & (s1 >= 0) & (s2 >= 0)) | ((s0 <= 0) & (s1 <= 0) & (s2 <= 0))
    img[m] = color


def _render(state, spec, view: View) -> np.ndarray:
    img = np.empty((RES, RES, 3), dtype=np.uint8)
    img[:] = COLORS["background"]
    if view.scale < 1.0:  # windowed views can see past the arena edge
        outside = ((view.xx < 0) | (view.xx > 1) | (view.yy < 0) | (view.yy > 1))
        img[outside] = COLORS["out_of_arena"]

    for zone in state.zones.values():
        color = COLORS[zone.color]
        if zone.style == "ring":
            _ring(view, img, zone.pos[0], zone.pos[1], zone.radius, 0.02, color)
        else:
            _circle(view, img, zone.pos[0], zone.pos[1], zone.radius, color)

    for obj in state.objects.values():
        _circle(view, img, obj.pos[0], obj.pos[1], obj.radius, COLORS[obj.color])

    # base disc with a white nose wedge showing the heading
    bx, by, th = state.base
    R = spec.base_radius
    _circle(view, img, bx, by, R, COLORS["body"])
    tip = (bx + R * 0.95 * np.cos(th), by + R * 0.95 * np.sin(th))
    left = (bx + R * 0.55 * np.cos(th + 2.4), by + R * 0.55 * np.sin(th + 2.4))
    right = (bx + R * 0.55 * np.cos(th - 2.4), by + R * 0.55 * np.sin(th - 2.4))
    _triangle(view, img, tip, left, right, COLORS["nose"])

    for arm in ("left", "right"):
        pts = state.arm_points(spec, arm)
        for a, b in zip(pts[:-1], pts[1:]):
            _segment(view, img, a[0], a[1], b[0], b[1], 0.007, COLORS["arm"])
        g = state.grip[0 if arm == "left" else 1]
        shade = int(round(255 * g))  # open = white, closed = black
        _circle(view, img, pts[-1][0], pts[-1][1], 0.014, (shade, shade, shade))

    return np.ascontiguousarray(img.transpose(2, 0, 1)).astype(np.float64) / 255.0


def render_top(state, spec) -> np.ndarray:
    """Full arena to [3, RES, RES] float64 pixels in {k/255}."""
    return _render(state, spec, View(0.5, 0.5, 0.5))


WRIST_HALF = 0.12


def render_wrist(state, spec, arm: str) -> np.ndarray:
    """Window centered on the wrist, rendered natively (4x finer detail)."""
    ee = state.arm_points(spec, arm)[-1]
    return _render(state, spec, View(float(ee[0]), float(ee[1]), WRIST_HALF))


def export_png(frame: np.ndarray, path) -> None:
    """Debug export of a [3,H,W] float frame."""
    from PIL import Image
    arr = np.round(frame * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr).save(path)
