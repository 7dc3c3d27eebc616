"""Deterministic evaluation: finest-level predictions and task metrics.

Evaluation never augments and always samples segment midpoints, so the
same checkpoint and split produce the same numbers every time.  The
validation objective ("loss" here) is computed from raw head outputs
with plain numpy; it matches the training criterion for level 1 but
needs no tape.
"""

from __future__ import annotations

from typing import Dict, Optional, TextIO

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data.container import SplitData
from .data.sampling import prepare_clip
from .encoders import encode_video
from .errors import ConfigError
from .losses import round_counts
from .model import PyramidModel


def _np_log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def predict_split(model: PyramidModel, split: SplitData, cfg: RunConfig,
                  batch_size: Optional[int] = None) -> np.ndarray:
    """Finest-level outputs for every sample, in dataset order."""
    n = split.frames.shape[0]
    bs = batch_size or cfg.batch_size
    outputs = []
    for start in range(0, n, bs):
        idxs = np.arange(start, min(start + bs, n))
        frames = np.stack([prepare_clip(split.frames[int(i)], cfg.time_steps)
                           for i in idxs])
        outputs.append(model.forward_eval(frames, split.tokens[idxs]))
    return np.concatenate(outputs, axis=0)


def metrics_from_outputs(outputs: np.ndarray, labels: np.ndarray,
                         cfg: RunConfig) -> Dict[str, float]:
    """Task metrics; ``metric`` is the headline number, ``loss`` the
    validation objective (lower is better for both plateau and early stop)."""
    if cfg.task == "open_ended":
        ints = labels.astype(np.int64)
        log_probs = _np_log_softmax(outputs.astype(np.float64))
        loss = float(-log_probs[np.arange(len(ints)), ints].mean())
        acc = float((outputs.argmax(axis=1) == ints).mean())
        return {"loss": loss, "metric": acc, "accuracy": acc}
    if cfg.task == "count":
        raw = outputs.reshape(-1).astype(np.float64)
        mse_raw = float(((raw - labels) ** 2).mean())
        rounded = round_counts(raw, cfg.count_lo, cfg.count_hi)
        mse_rounded = float(((rounded - labels) ** 2).mean())
        return {"loss": mse_raw, "metric": mse_rounded,
                "mse_raw": mse_raw, "mse_rounded": mse_rounded}
    if cfg.task == "multi_choice":
        ints = labels.astype(np.int64)
        scores = outputs.astype(np.float64)
        s_correct = scores[np.arange(len(ints)), ints][:, None]
        margins = np.maximum(0.0, 1.0 + scores - s_correct)
        margins[np.arange(len(ints)), ints] = 0.0
        loss = float(margins.sum() / (len(ints) * (scores.shape[1] - 1)))
        acc = float((scores.argmax(axis=1) == ints).mean())
        return {"loss": loss, "metric": acc, "accuracy": acc}
    raise ConfigError(f"unknown task {cfg.task!r}")


def evaluate_split(model: PyramidModel, split: SplitData, cfg: RunConfig) -> Dict[str, float]:
    outputs = predict_split(model, split, cfg)
    return metrics_from_outputs(outputs, split.labels, cfg)


def dump_attention(model: PyramidModel, split: SplitData, cfg: RunConfig,
                   out: TextIO, limit: int = 4) -> None:
    """Write finest-level position weights for a few samples as comment
    lines (prefixed ``#attn``), one line per stream per sample."""
    idxs = np.arange(min(limit, split.frames.shape[0]))
    frames = np.stack([prepare_clip(split.frames[int(i)], cfg.time_steps)
                       for i in idxs])
    tokens = split.tokens[idxs]
    if cfg.task == "multi_choice":
        tokens = tokens[:, 0, :]
    with T.no_tape():
        volume = encode_video(model._frames_tensor(frames), model.params, model.cfg)
        result = model._pyramid(volume, tokens)
    finest = result.readouts[0]
    for i in range(len(idxs)):
        eta = " ".join("{:.6g}".format(v) for v in finest.eta.data[i])
        gamma = " ".join("{:.6g}".format(v) for v in finest.gamma.data[i])
        out.write(f"#attn\tsample={idxs[i]}\tspatial\t{eta}\n")
        out.write(f"#attn\tsample={idxs[i]}\ttemporal\t{gamma}\n")
