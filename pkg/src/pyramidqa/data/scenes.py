"""Synthetic scene specs and their rasterization.

A scene is a handful of colored shapes on a black square canvas, each
with a start position and a constant per-frame velocity.  Rendering is
pure: the same spec always produces the same uint8 frames, which is what
lets tests re-derive labels from pixels instead of trusting the
generator's bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from ..errors import InputError

CANVAS = 32
RAW_FRAMES = 32

# name -> RGB; answer classes for the color task use the same order
PALETTE: Tuple[Tuple[str, Tuple[int, int, int]], ...] = (
    ("red", (220, 40, 40)),
    ("green", (40, 200, 60)),
    ("blue", (50, 90, 230)),
    ("yellow", (230, 220, 50)),
    ("magenta", (200, 60, 200)),
    ("cyan", (60, 210, 210)),
    ("white", (235, 235, 235)),
    ("orange", (240, 150, 40)),
)
COLOR_NAMES = tuple(name for name, _ in PALETTE)
COLOR_VALUES = np.array([rgb for _, rgb in PALETTE], dtype=np.uint8)

KINDS = ("square", "circle", "triangle")
MOTIONS = ("left", "right", "up", "down", "static")
MOTION_STEPS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "up": (0.0, -1.0),
    "down": (0.0, 1.0),
    "static": (0.0, 0.0),
}


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    color: int          # palette index
    size: int           # half-extent in pixels
    x: float            # start centroid
    y: float
    motion: str
    speed: float = 0.0

    @property
    def velocity(self) -> Tuple[float, float]:
        dx, dy = MOTION_STEPS[self.motion]
        return dx * self.speed, dy * self.speed

    def center_at(self, t: int) -> Tuple[float, float]:
        vx, vy = self.velocity
        return self.x + vx * t, self.y + vy * t


@dataclass(frozen=True)
class SceneSpec:
    shapes: Tuple[ShapeSpec, ...]
    canvas: int = CANVAS
    n_frames: int = RAW_FRAMES


def shape_mask(shape: ShapeSpec, t: int, canvas: int) -> np.ndarray:
    cx, cy = shape.center_at(t)
    ys, xs = np.ogrid[:canvas, :canvas]
    dx = xs - cx
    dy = ys - cy
    r = shape.size
    if shape.kind == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if shape.kind == "circle":
        return dx * dx + dy * dy <= r * r
    if shape.kind == "triangle":
        # apex up: zero width at the top edge, full width at the bottom
        return (np.abs(dy) <= r) & (np.abs(dx) <= (dy + r) / 2)
    raise InputError(f"unknown shape kind {shape.kind!r}")


def trajectory_in_bounds(shape: ShapeSpec, canvas: int = CANVAS,
                         n_frames: int = RAW_FRAMES) -> bool:
    """True when the shape's bounding box stays on canvas in every frame."""
    for t in (0, n_frames - 1):
        cx, cy = shape.center_at(t)
        if not (shape.size <= cx <= canvas - 1 - shape.size
                and shape.size <= cy <= canvas - 1 - shape.size):
            return False
    return True


def render(scene: SceneSpec) -> np.ndarray:
    """Spec -> (F, H, W, 3) uint8 frames; later shapes draw on top."""
    frames = np.zeros((scene.n_frames, scene.canvas, scene.canvas, 3), dtype=np.uint8)
    for t in range(scene.n_frames):
        for shape in scene.shapes:
            mask = shape_mask(shape, t, scene.canvas)
            frames[t][mask] = COLOR_VALUES[shape.color]
    return frames


# ---------------------------------------------------------------------------
# pixel-level analysis, used to re-derive labels independently of the specs


def centroid(mask: np.ndarray) -> Tuple[float, float]:
    """(x, y) mean of set pixels; raises on an empty mask."""
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise InputError("centroid of an empty mask")
    return float(xs.mean()), float(ys.mean())


def color_id_mask(frame: np.ndarray, color: int) -> np.ndarray:
    return np.all(frame == COLOR_VALUES[color], axis=-1)


def moving_mask(frames: np.ndarray) -> np.ndarray:
    """Pixels whose value changes at any point in the clip."""
    return np.any(frames != frames[0:1], axis=(0, 3))


def dominant_color(frames: np.ndarray, mask: np.ndarray) -> int:
    """Most frequent palette color among non-black pixels under ``mask``."""
    counts = np.zeros(len(PALETTE), dtype=np.int64)
    sel = frames[:, mask, :].reshape(-1, 3)
    for cid in range(len(PALETTE)):
        counts[cid] = int(np.all(sel == COLOR_VALUES[cid], axis=-1).sum())
    if counts.sum() == 0:
        raise InputError("no palette pixels under the mask")
    return int(counts.argmax())


def connected_components(mask: np.ndarray) -> int:
    """4-connected component count via flood fill."""
    seen = np.zeros_like(mask, dtype=bool)
    h, w = mask.shape
    count = 0
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or seen[sy, sx]:
                continue
            count += 1
            stack: List[Tuple[int, int]] = [(sy, sx)]
            seen[sy, sx] = True
            while stack:
                y, x = stack.pop()
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
    return count


def displacement_direction(frames: np.ndarray, mask_color: int) -> str:
    """Track the centroid of one palette color first-to-last frame."""
    x0, y0 = centroid(color_id_mask(frames[0], mask_color))
    x1, y1 = centroid(color_id_mask(frames[-1], mask_color))
    dx, dy = x1 - x0, y1 - y0
    if abs(dx) < 0.5 and abs(dy) < 0.5:
        return "static"
    if abs(dx) >= abs(dy):
        return "right" if dx > 0 else "left"
    return "down" if dy > 0 else "up"
