"""Bottom-up pyramid: stream decomposition and cross-modal interaction.

Each level ``l`` (1-based) splits the feature volume X of shape
(B, T, H, W, D) into two streams by max pooling:

* spatial stream: max over the whole temporal axis, then over RxR
  spatial windows, R = 2**(l-1) -> grid (B, H/R, W/R, D);
* temporal stream: max over all spatial positions, then over length-R
  temporal windows -> rows (B, T/R, D).

From level 2 upward the raw decomposition is merged with a window-2
max-pooled copy of the previous level's interacted stream (a residual
across scales).  Each level then runs a transformer block per stream:
multi-head attention with queries from the (normalized) stream and
keys/values from the (normalized) language sequence, a shared
query/key/value projection across the two streams, per-stream output
mixers, and per-stream feed-forward nets (hidden width 4D, ELU after
both affine layers) with residual connections.
"""

from __future__ import annotations

from typing import Dict, List, Tuple

from . import ops
from .errors import DimensionError
from .params import glorot, ones, zeros
from .rng import Rng
from .tensor import Tensor


def pooling_window(level: int, enabled: bool = True) -> int:
    """Per-dimension pooling extent at a 1-based pyramid level."""
    return 2 ** (level - 1) if enabled else 1


def decompose_spatial(x: Tensor, level: int, enabled: bool = True) -> Tensor:
    """(B, T, H, W, D) -> spatial grid (B, H/R, W/R, D)."""
    b, t, h, w, d = x.shape
    r = pooling_window(level, enabled)
    if h % r or w % r:
        raise DimensionError(f"spatial extents {h}x{w} not divisible by window {r}")
    collapsed = ops.max_pool(x, [1], t)
    grid = ops.reshape(collapsed, (b, h, w, d))
    if r > 1:
        grid = ops.max_pool(grid, [1, 2], r)
    return grid


def decompose_temporal(x: Tensor, level: int, enabled: bool = True) -> Tensor:
    """(B, T, H, W, D) -> temporal rows (B, T/R, D)."""
    b, t, h, w, d = x.shape
    r = pooling_window(level, enabled)
    if t % r:
        raise DimensionError(f"temporal extent {t} not divisible by window {r}")
    collapsed = ops.max_pool(ops.max_pool(x, [2], h), [3], w)
    rows = ops.reshape(collapsed, (b, t, d))
    if r > 1:
        rows = ops.max_pool(rows, [1], r)
    return rows


def halve_spatial(grid: Tensor) -> Tensor:
    """Window-2 max pool over both grid axes of (B, h, w, D)."""
    return ops.max_pool(grid, [1, 2], 2)


def halve_temporal(rows: Tensor) -> Tensor:
    """Window-2 max pool over the time axis of (B, t, D)."""
    return ops.max_pool(rows, [1], 2)


def residual_merge(raw: Tensor, previous: Tensor, spatial: bool, pool: bool = True) -> Tensor:
    """Raw decomposition plus a pooled copy of the previous level's output.

    With ``pool=False`` (the no-decomposition ablation) the previous
    stream already matches the raw shape and is added directly.
    """
    if pool:
        previous = halve_spatial(previous) if spatial else halve_temporal(previous)
    if previous.shape != raw.shape:
        raise DimensionError(
            f"residual shapes differ after pooling: {previous.shape} vs {raw.shape}")
    return ops.add(raw, previous)


# ---------------------------------------------------------------------------
# cross-modal attention


def single_head_attention(stream_rows: Tensor, lang_rows: Tensor, wq: Tensor,
                          wk: Tensor, wv: Tensor, scale: float) -> Tensor:
    """One attention head on already-normalized 2-D inputs.

    Queries come from the visual stream rows, keys and values from the
    language rows, so the score matrix is (stream positions x tokens)
    and every row is a distribution over tokens.
    """
    q = ops.matmul(stream_rows, wq)
    k = ops.matmul(lang_rows, wk)
    v = ops.matmul(lang_rows, wv)
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (1, 0))), 1.0 / scale)
    return ops.matmul(ops.softmax_last(scores), v)


def _multi_head(stream_norm: Tensor, lang_norm: Tensor, p: Dict[str, Tensor],
                prefix: str, heads: int, scale: float) -> Tensor:
    """All heads at once: (B, N, D) x (B, Tg, D) -> (B, N, D)."""
    b, n, d = stream_norm.shape
    tg = lang_norm.shape[1]
    dh = d // heads

    def split_heads(x: Tensor, rows: int) -> Tensor:
        return ops.transpose(ops.reshape(x, (b, rows, heads, dh)), (0, 2, 1, 3))

    q = split_heads(ops.matmul(stream_norm, p[f"{prefix}.wq"]), n)
    k = split_heads(ops.matmul(lang_norm, p[f"{prefix}.wk"]), tg)
    v = split_heads(ops.matmul(lang_norm, p[f"{prefix}.wv"]), tg)
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / scale)
    mixed = ops.matmul(ops.softmax_last(scores), v)
    return ops.reshape(ops.transpose(mixed, (0, 2, 1, 3)), (b, n, d))


def _ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two affine layers, ELU after each, operating on (B, N, D)."""
    b, n, d = x.shape
    flat = ops.reshape(x, (b * n, d))
    hidden = ops.elu(ops.add(ops.matmul(flat, w1), b1))
    out = ops.elu(ops.add(ops.matmul(hidden, w2), b2))
    return ops.reshape(out, (b, n, d))


def init_block_params(rng: Rng, level: int, d: int, dtype) -> Dict[str, Tensor]:
    pre = f"lvl{level}"
    hidden = 4 * d
    p = {
        f"{pre}.attn.wq": glorot(rng, (d, d), dtype),
        f"{pre}.attn.wk": glorot(rng, (d, d), dtype),
        f"{pre}.attn.wv": glorot(rng, (d, d), dtype),
        f"{pre}.attn.mix_s": glorot(rng, (d, d), dtype),
        f"{pre}.attn.mix_m": glorot(rng, (d, d), dtype),
        f"{pre}.ln_vis.g": ones(d, dtype),
        f"{pre}.ln_vis.b": zeros(d, dtype),
        f"{pre}.ln_lang.g": ones(d, dtype),
        f"{pre}.ln_lang.b": zeros(d, dtype),
        f"{pre}.ln_ffn_s.g": ones(d, dtype),
        f"{pre}.ln_ffn_s.b": zeros(d, dtype),
        f"{pre}.ln_ffn_m.g": ones(d, dtype),
        f"{pre}.ln_ffn_m.b": zeros(d, dtype),
        f"{pre}.ffn_s.w1": glorot(rng, (d, hidden), dtype),
        f"{pre}.ffn_s.b1": zeros(hidden, dtype),
        f"{pre}.ffn_s.w2": glorot(rng, (hidden, d), dtype),
        f"{pre}.ffn_s.b2": zeros(d, dtype),
        f"{pre}.ffn_m.w1": glorot(rng, (d, hidden), dtype),
        f"{pre}.ffn_m.b1": zeros(hidden, dtype),
        f"{pre}.ffn_m.w2": glorot(rng, (hidden, d), dtype),
        f"{pre}.ffn_m.b2": zeros(d, dtype),
    }
    return p


def _stream_branch(rows: Tensor, lang_norm: Tensor, p: Dict[str, Tensor], level: int,
                   which: str, heads: int, scale: float) -> Tensor:
    pre = f"lvl{level}"
    stream_norm = ops.layer_norm(rows, p[f"{pre}.ln_vis.g"], p[f"{pre}.ln_vis.b"])
    mixed = _multi_head(stream_norm, lang_norm, p, f"{pre}.attn", heads, scale)
    b, n, d = rows.shape
    mix_w = p[f"{pre}.attn.mix_s" if which == "s" else f"{pre}.attn.mix_m"]
    attended = ops.add(
        ops.reshape(ops.matmul(ops.reshape(mixed, (b * n, d)), mix_w), (b, n, d)), rows)
    ln = "ln_ffn_s" if which == "s" else "ln_ffn_m"
    ffn = "ffn_s" if which == "s" else "ffn_m"
    normed = ops.layer_norm(attended, p[f"{pre}.{ln}.g"], p[f"{pre}.{ln}.b"])
    return ops.add(_ffn(normed, p[f"{pre}.{ffn}.w1"], p[f"{pre}.{ffn}.b1"],
                        p[f"{pre}.{ffn}.w2"], p[f"{pre}.{ffn}.b2"]), attended)


def interaction_block(spatial_grid: Tensor, temporal_rows: Tensor, lang_seq: Tensor,
                      p: Dict[str, Tensor], level: int, heads: int,
                      scale: float) -> Tuple[Tensor, Tensor]:
    """Run both stream branches of one pyramid level.

    The spatial grid is flattened to rows for attention and reshaped
    back afterwards; the language sequence is normalized once and shared
    by both branches (the query/key/value projections are shared too).
    """
    b, h, w, d = spatial_grid.shape
    pre = f"lvl{level}"
    lang_norm = ops.layer_norm(lang_seq, p[f"{pre}.ln_lang.g"], p[f"{pre}.ln_lang.b"])
    s_rows = ops.reshape(spatial_grid, (b, h * w, d))
    s_out = _stream_branch(s_rows, lang_norm, p, level, "s", heads, scale)
    m_out = _stream_branch(temporal_rows, lang_norm, p, level, "m", heads, scale)
    return ops.reshape(s_out, (b, h, w, d)), m_out


def run_bottom_up(x: Tensor, lang_seq: Tensor, p: Dict[str, Tensor], cfg,
                  scale_per_level) -> List[Tuple[Tensor, Tensor]]:
    """Build all pyramid levels bottom-up; returns interacted stream pairs.

    Level 1 consumes the raw decomposition; higher levels re-decompose
    the original volume at their own window and merge in the pooled
    previous streams before their interaction block.
    """
    decompose = cfg.decomposition
    outputs: List[Tuple[Tensor, Tensor]] = []
    for level in range(1, cfg.levels + 1):
        raw_s = decompose_spatial(x, level, decompose)
        raw_m = decompose_temporal(x, level, decompose)
        if level == 1:
            merged_s, merged_m = raw_s, raw_m
        else:
            prev_s, prev_m = outputs[-1]
            merged_s = residual_merge(raw_s, prev_s, spatial=True, pool=decompose)
            merged_m = residual_merge(raw_m, prev_m, spatial=False, pool=decompose)
        outputs.append(interaction_block(merged_s, merged_m, lang_seq, p, level,
                                         cfg.heads, scale_per_level[level - 1]))
    return outputs
