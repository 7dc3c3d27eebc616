"""Top-down pathway: cross-scale context fusion and language-guided readout.

Starting from the coarsest level, each level's interacted streams are
refined with context from the level above.  The default fusion
("contextual") lets the other stream one level up attend into the same
stream one level up, forming a bridge matrix, then lets the target
stream attend into that bridge; the result is added residually.  Both
attention products run through a shared activated affine map ``f``.

Ablations replace the fusion: "upsample" adds a nearest-neighbour 2x
blow-up of the same stream above, "attention" attends directly into the
same stream above without the bridge, and "none" skips fusion entirely.

The readout turns the fused streams of a level into one vector: token
mean against stream rows gives per-position scores, softmax makes them
weights, and the two weighted sums are blended by a two-way softmax over
a single learnable logit pair, so the blend weights always sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from . import ops
from .params import glorot, zeros
from .rng import Rng
from .tensor import Tensor


def init_topdown_params(rng: Rng, levels: int, d: int, dtype) -> Dict[str, Tensor]:
    p: Dict[str, Tensor] = {}
    for level in range(1, levels):
        for stream in ("s", "m"):
            p[f"td{level}.{stream}.f.w"] = glorot(rng, (d, d), dtype)
            p[f"td{level}.{stream}.f.b"] = zeros(d, dtype)
    p["readout.alpha"] = zeros((), dtype)
    p["readout.beta"] = zeros((), dtype)
    return p


def _activated_map(rows: Tensor, w: Tensor, b: Tensor) -> Tensor:
    batch, n, d = rows.shape
    flat = ops.reshape(rows, (batch * n, d))
    return ops.reshape(ops.elu(ops.add(ops.matmul(flat, w), b)), (batch, n, d))


def contextual_match(target: Tensor, same_above: Tensor, other_above: Tensor,
                     fw: Tensor, fb: Tensor) -> Tensor:
    """Bridge fusion on row matrices (B, N_t, D), (B, N_a, D), (B, N_o, D).

    other_above attends into same_above (rows over same_above positions),
    producing a bridge of other-stream length; the target then attends
    into the bridge.  Output keeps the target shape.
    """
    f_target = _activated_map(target, fw, fb)
    f_same = _activated_map(same_above, fw, fb)
    f_other = _activated_map(other_above, fw, fb)
    w1 = ops.softmax_last(ops.matmul(f_other, ops.transpose(f_same, (0, 2, 1))))
    bridge = ops.matmul(w1, same_above)
    w2 = ops.softmax_last(ops.matmul(f_target, ops.transpose(f_other, (0, 2, 1))))
    return ops.add(target, ops.matmul(w2, bridge))


def direct_attention(target: Tensor, same_above: Tensor, fw: Tensor, fb: Tensor) -> Tensor:
    """Ablation: single-hop attention into the same stream above."""
    f_target = _activated_map(target, fw, fb)
    f_same = _activated_map(same_above, fw, fb)
    w = ops.softmax_last(ops.matmul(f_target, ops.transpose(f_same, (0, 2, 1))))
    return ops.add(target, ops.matmul(w, same_above))


@dataclass
class LevelReadout:
    """Per-level diagnostics captured during the top-down pass."""

    output: Tensor
    eta: Tensor
    gamma: Tensor
    alpha: Tensor
    beta: Tensor


@dataclass
class TopDownResult:
    readouts: List[LevelReadout]
    spatial: List[Tensor] = field(default_factory=list)
    temporal: List[Tensor] = field(default_factory=list)


def _position_weights(rows: Tensor, lang_mean: Tensor) -> Tensor:
    """Softmax over positions of the per-row dot with the sentence vector."""
    b, n, d = rows.shape
    scores = ops.sum_axis(ops.mul(rows, ops.reshape(lang_mean, (b, 1, d))), 2)
    return ops.softmax_last(scores)


def language_readout(s_rows: Tensor, m_rows: Tensor, lang_mean: Tensor,
                     alpha_logit: Tensor, beta_logit: Tensor) -> LevelReadout:
    b, ns, d = s_rows.shape
    eta = _position_weights(s_rows, lang_mean)
    gamma = _position_weights(m_rows, lang_mean)
    s_sum = ops.reshape(ops.matmul(ops.reshape(eta, (b, 1, ns)), s_rows), (b, d))
    m_sum = ops.reshape(ops.matmul(ops.reshape(gamma, (b, 1, m_rows.shape[1])), m_rows), (b, d))
    blend = ops.softmax_last(ops.concat([ops.reshape(alpha_logit, (1, 1)),
                                         ops.reshape(beta_logit, (1, 1))], axis=1))
    alpha = ops.reshape(ops.narrow(blend, 1, 0, 1), ())
    beta = ops.reshape(ops.narrow(blend, 1, 1, 1), ())
    out = ops.add(ops.mul(s_sum, alpha), ops.mul(m_sum, beta))
    return LevelReadout(output=out, eta=eta, gamma=gamma, alpha=alpha, beta=beta)


def _flatten_grid(grid: Tensor) -> Tensor:
    b, h, w, d = grid.shape
    return ops.reshape(grid, (b, h * w, d))


def run_top_down(streams: List[Tuple[Tensor, Tensor]], lang_mean: Tensor,
                 p: Dict[str, Tensor], cfg) -> TopDownResult:
    """Fuse levels coarse-to-fine and read out every level.

    ``streams`` holds the bottom-up interacted pairs (spatial grid,
    temporal rows), index 0 = level 1.  The topmost level passes through
    unchanged; every other level is fused according to ``cfg.topdown``.
    """
    levels = len(streams)
    fused_s: List[Tensor] = [None] * levels
    fused_m: List[Tensor] = [None] * levels
    fused_s[levels - 1], fused_m[levels - 1] = streams[levels - 1]

    for idx in range(levels - 2, -1, -1):
        grid, rows = streams[idx]
        level = idx + 1
        if cfg.topdown == "none":
            fused_s[idx], fused_m[idx] = grid, rows
            continue
        above_s, above_m = fused_s[idx + 1], fused_m[idx + 1]
        if cfg.topdown == "upsample":
            up_s = ops.upsample_double(above_s, [1, 2])
            up_m = ops.upsample_double(above_m, [1])
            fused_s[idx] = ops.add(grid, up_s)
            fused_m[idx] = ops.add(rows, up_m)
            continue
        s_rows = _flatten_grid(grid)
        above_s_rows = _flatten_grid(above_s)
        if cfg.topdown == "attention":
            new_s = direct_attention(s_rows, above_s_rows,
                                     p[f"td{level}.s.f.w"], p[f"td{level}.s.f.b"])
            new_m = direct_attention(rows, above_m,
                                     p[f"td{level}.m.f.w"], p[f"td{level}.m.f.b"])
        else:  # contextual bridge fusion
            new_s = contextual_match(s_rows, above_s_rows, above_m,
                                     p[f"td{level}.s.f.w"], p[f"td{level}.s.f.b"])
            new_m = contextual_match(rows, above_m, above_s_rows,
                                     p[f"td{level}.m.f.w"], p[f"td{level}.m.f.b"])
        b, h, w, d = grid.shape
        fused_s[idx] = ops.reshape(new_s, (b, h, w, d))
        fused_m[idx] = new_m

    readouts = []
    for idx in range(levels):
        readouts.append(language_readout(_flatten_grid(fused_s[idx]), fused_m[idx],
                                         lang_mean, p["readout.alpha"], p["readout.beta"]))
    return TopDownResult(readouts=readouts, spatial=fused_s, temporal=fused_m)
