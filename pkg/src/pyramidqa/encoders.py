"""Input encoders: video clips to feature volumes, token ids to sequences.

The video path is a small stack of three 3-D convolutions (3x3x3
kernels, ELU) that keeps the temporal extent and shrinks each spatial
side by four, followed by a pointwise projection to the model width and
a learnable per-position embedding table.

The language path embeds token ids, applies a linear transform, and
runs a bidirectional gated recurrent encoder (standard input/forget/
output-gate cell) whose per-direction hidden width is half the model
width, so concatenating both directions restores it.  The pooled
sentence vector is the plain mean over timesteps.
"""

from __future__ import annotations

from typing import Dict, Tuple

import numpy as np

from . import ops
from .errors import ConfigError, InputError
from .config import VIDEO_SPATIAL_STRIDE
from .params import conv_kernel, glorot, zeros
from .rng import Rng
from .tensor import Tensor


def init_video_params(rng: Rng, cfg, dtype) -> Dict[str, Tensor]:
    c1, c2, c3 = cfg.enc_channels
    t = cfg.time_steps
    h = w = cfg.frame_hw // VIDEO_SPATIAL_STRIDE
    p = {
        "video.conv1.w": conv_kernel(rng, 3, 3, 3, 3, c1, dtype),
        "video.conv1.b": zeros(c1, dtype),
        "video.conv2.w": conv_kernel(rng, 3, 3, 3, c1, c2, dtype),
        "video.conv2.b": zeros(c2, dtype),
        "video.conv3.w": conv_kernel(rng, 3, 3, 3, c2, c3, dtype),
        "video.conv3.b": zeros(c3, dtype),
        "video.proj.w": glorot(rng, (c3, cfg.d_model), dtype),
        "video.proj.b": zeros(cfg.d_model, dtype),
        # Learnable position table, one row per (t, h, w) cell.  Starts
        # small but nonzero: the temporal stream needs location cues from
        # the first epoch, and an all-zero table gives it none.
        "video.pos": Tensor(rng.uniform(-0.1, 0.1, (t, h, w, cfg.d_model), dtype=dtype),
                            requires_grad=True),
    }
    return p


def encode_video(frames: Tensor, p: Dict[str, Tensor], cfg) -> Tensor:
    """(B, T, H, W, 3) pixel clip -> (B, T, H/4, W/4, D) feature volume."""
    b, t, h, w, c = frames.shape
    if c != 3:
        raise InputError(f"expected RGB frames, got {c} channels")
    if h % VIDEO_SPATIAL_STRIDE or w % VIDEO_SPATIAL_STRIDE:
        raise ConfigError(
            f"frame sides must be divisible by {VIDEO_SPATIAL_STRIDE}, got {h}x{w}")
    x = ops.elu(ops.add(ops.conv3d(frames, p["video.conv1.w"], (1, 2, 2)), p["video.conv1.b"]))
    x = ops.elu(ops.add(ops.conv3d(x, p["video.conv2.w"], (1, 2, 2)), p["video.conv2.b"]))
    x = ops.elu(ops.add(ops.conv3d(x, p["video.conv3.w"], (1, 1, 1)), p["video.conv3.b"]))
    bb, tt, hh, ww, c3 = x.shape
    flat = ops.reshape(x, (bb * tt * hh * ww, c3))
    proj = ops.add(ops.matmul(flat, p["video.proj.w"]), p["video.proj.b"])
    volume = ops.reshape(proj, (bb, tt, hh, ww, cfg.d_model))
    return ops.add(volume, p["video.pos"])


def init_language_params(rng: Rng, vocab_size: int, d: int, dtype) -> Dict[str, Tensor]:
    if d % 2:
        raise ConfigError(f"model width must be even for a bidirectional encoder, got {d}")
    hidden = d // 2
    p = {
        "lang.embed": glorot(rng, (vocab_size, d), dtype),
        "lang.proj.w": glorot(rng, (d, d), dtype),
        "lang.proj.b": zeros(d, dtype),
    }
    for direction in ("fwd", "bwd"):
        p[f"lang.{direction}.wx"] = glorot(rng, (d, 4 * hidden), dtype)
        p[f"lang.{direction}.wh"] = glorot(rng, (hidden, 4 * hidden), dtype)
        p[f"lang.{direction}.b"] = zeros(4 * hidden, dtype)
    return p


def embed_tokens(ids: np.ndarray, p: Dict[str, Tensor]) -> Tensor:
    """(B, T) int token ids -> (B, T, D) projected embeddings."""
    ids = np.asarray(ids)
    vocab = p["lang.embed"].shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
        raise InputError(f"token id {bad} outside vocabulary of size {vocab}")
    emb = ops.embedding(p["lang.embed"], ids)
    b, t, d = emb.shape
    flat = ops.add(ops.matmul(ops.reshape(emb, (b * t, d)), p["lang.proj.w"]), p["lang.proj.b"])
    return ops.reshape(flat, (b, t, d))


def _gated_step(x_t: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor,
                b: Tensor, hidden: int) -> Tuple[Tensor, Tensor]:
    pre = ops.add(ops.add(ops.matmul(x_t, wx), ops.matmul(h, wh)), b)
    gate_in = ops.sigmoid(ops.narrow(pre, 1, 0, hidden))
    gate_forget = ops.sigmoid(ops.narrow(pre, 1, hidden, hidden))
    cell_new = ops.tanh(ops.narrow(pre, 1, 2 * hidden, hidden))
    gate_out = ops.sigmoid(ops.narrow(pre, 1, 3 * hidden, hidden))
    c_next = ops.add(ops.mul(gate_forget, c), ops.mul(gate_in, cell_new))
    h_next = ops.mul(gate_out, ops.tanh(c_next))
    return h_next, c_next


def _run_direction(steps, wx, wh, b, hidden, reverse: bool):
    order = range(len(steps) - 1, -1, -1) if reverse else range(len(steps))
    batch = steps[0].shape[0]
    dtype = steps[0].dtype
    h = Tensor(np.zeros((batch, hidden), dtype=dtype))
    c = Tensor(np.zeros((batch, hidden), dtype=dtype))
    outputs = [None] * len(steps)
    for i in order:
        h, c = _gated_step(steps[i], h, c, wx, wh, b, hidden)
        outputs[i] = h
    return outputs


def encode_language(emb: Tensor, p: Dict[str, Tensor]) -> Tuple[Tensor, Tensor]:
    """(B, T, D) embeddings -> per-token features (B, T, D) and their mean (B, D).

    Forward-direction states fill the first half of each output row,
    backward-direction states the second half; initial states are zero.
    """
    b, t, d = emb.shape
    hidden = d // 2
    steps = [ops.reshape(ops.narrow(emb, 1, i, 1), (b, d)) for i in range(t)]
    fwd = _run_direction(steps, p["lang.fwd.wx"], p["lang.fwd.wh"], p["lang.fwd.b"],
                         hidden, reverse=False)
    bwd = _run_direction(steps, p["lang.bwd.wx"], p["lang.bwd.wh"], p["lang.bwd.b"],
                         hidden, reverse=True)
    rows = [ops.reshape(ops.concat([fwd[i], bwd[i]], axis=1), (b, 1, d)) for i in range(t)]
    seq = ops.concat(rows, axis=1) if t > 1 else rows[0]
    pooled = ops.mean_axis(seq, 1)
    return seq, pooled
