"""Frame sampling and clip augmentation.

Raw clips carry more frames than the model consumes.  The raw range is
split into ``t_out`` equal segments; training draws one random frame per
segment, evaluation always takes the segment midpoint, so eval inputs
are deterministic while training sees temporal jitter.

Augmentation operates on whole clips to keep motion coherent: one
crop-or-pad window with a resize back to the input size, and one zeroed
rectangle, both shared across the clip's frames.  Rotation and blur are
deliberately absent; direction labels would not survive the former and
the shapes are too small for the latter.
"""

from __future__ import annotations

import numpy as np

from ..errors import InputError
from ..rng import Rng

CROP_LO = 0.8
CROP_HI = 1.2


def segment_starts(n_raw: int, t_out: int) -> np.ndarray:
    """Midpoint frame index of each segment: floor((2i + 1) * n / (2t))."""
    if t_out < 1 or t_out > n_raw:
        raise InputError(f"cannot draw {t_out} segments from {n_raw} frames")
    i = np.arange(t_out, dtype=np.int64)
    return (2 * i + 1) * n_raw // (2 * t_out)


def sample_frame_indices(n_raw: int, t_out: int, rng: Rng | None = None) -> np.ndarray:
    """One frame per segment: random within it for training, midpoint else."""
    if rng is None:
        return segment_starts(n_raw, t_out)
    if t_out < 1 or t_out > n_raw:
        raise InputError(f"cannot draw {t_out} segments from {n_raw} frames")
    i = np.arange(t_out, dtype=np.int64)
    lo = i * n_raw // t_out
    hi = (i + 1) * n_raw // t_out
    return np.array([int(rng.integers(int(a), int(b))) for a, b in zip(lo, hi)],
                    dtype=np.int64)


def _resize_nearest(clip: np.ndarray, side: int) -> np.ndarray:
    src = clip.shape[1]
    idx = (np.arange(side, dtype=np.int64) * src) // side
    return clip[:, idx][:, :, idx]


def crop_resize(clip: np.ndarray, ratio: float, oy: float, ox: float) -> np.ndarray:
    """Zoom by ``ratio`` around a fractional window position in [0, 1].

    ratio < 1 crops a window and blows it back up; ratio > 1 pads with
    black and shrinks, so the scene moves toward the canvas centre.
    """
    f, h, w, c = clip.shape
    side = max(4, int(round(h * ratio)))
    if side <= h:
        y0 = int(round(oy * (h - side)))
        x0 = int(round(ox * (w - side)))
        window = clip[:, y0:y0 + side, x0:x0 + side]
    else:
        window = np.zeros((f, side, side, c), dtype=clip.dtype)
        y0 = int(round(oy * (side - h)))
        x0 = int(round(ox * (side - w)))
        window[:, y0:y0 + h, x0:x0 + w] = clip
    return _resize_nearest(window, h)


def zero_mask(clip: np.ndarray, rng: Rng) -> np.ndarray:
    """Black out one random rectangle across every frame.

    The rectangle is capped at 6 pixels per side, below the smallest
    object diameter, so occlusion can never delete an object outright
    and counting labels survive augmentation.
    """
    h, w = clip.shape[1], clip.shape[2]
    mh = int(rng.integers(2, max(3, min(h // 4, 6) + 1)))
    mw = int(rng.integers(2, max(3, min(w // 4, 6) + 1)))
    y0 = int(rng.integers(0, h - mh + 1))
    x0 = int(rng.integers(0, w - mw + 1))
    out = clip.copy()
    out[:, y0:y0 + mh, x0:x0 + mw] = 0
    return out


def augment_clip(clip: np.ndarray, rng: Rng, crop: bool = True,
                 mask: bool = True) -> np.ndarray:
    if crop:
        ratio = float(rng.uniform(CROP_LO, CROP_HI))
        oy = float(rng.uniform(0.0, 1.0))
        ox = float(rng.uniform(0.0, 1.0))
        clip = crop_resize(clip, ratio, oy, ox)
    if mask:
        clip = zero_mask(clip, rng)
    return clip


def prepare_clip(raw: np.ndarray, t_out: int, rng: Rng | None = None,
                 augment: bool = False) -> np.ndarray:
    """Raw (F, H, W, 3) frames -> model-ready (t_out, H, W, 3) clip."""
    idx = sample_frame_indices(raw.shape[0], t_out, rng)
    clip = raw[idx]
    if augment:
        if rng is None:
            raise InputError("augmentation needs a generator")
        clip = augment_clip(clip, rng)
    return clip
