"""Per-level answer decoders and the training objective.

Every pyramid level owns an independent decoder: affine -> batch
normalization -> ELU -> affine.  Batch norm uses batch statistics while
training (requiring at least two rows unless running statistics are
explicitly requested) and running statistics during evaluation.

Task losses: softmax cross-entropy for open-ended classification, mean
squared error on the raw scalar for counting, and a margin hinge over
candidate scores for multiple choice.  Training combines the per-level
losses with a monotonicity penalty: every coarse level is encouraged to
be no better than the level below it, so refinement must pay off.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from . import ops
from .errors import ConfigError, ContractError
from .params import glorot, ones, zeros
from .rng import Rng
from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def init_decoder_params(rng: Rng, level: int, d: int, n_out: int, dtype):
    pre = f"dec{level}"
    params = {
        f"{pre}.fc1.w": glorot(rng, (d, d), dtype),
        f"{pre}.fc1.b": zeros(d, dtype),
        f"{pre}.bn.g": ones(d, dtype),
        f"{pre}.bn.b": zeros(d, dtype),
        f"{pre}.fc2.w": glorot(rng, (d, n_out), dtype),
        f"{pre}.fc2.b": zeros(n_out, dtype),
    }
    buffers = {
        f"{pre}.bn.mean": np.zeros(d, dtype=dtype),
        f"{pre}.bn.var": np.ones(d, dtype=dtype),
    }
    return params, buffers


def batch_norm(x: Tensor, gain: Tensor, bias: Tensor, buffers: Dict[str, np.ndarray],
               prefix: str, training: bool, update_running: bool = True,
               use_running_stats: bool = False) -> Tensor:
    """Feature-wise normalization over the batch axis of (N, D).

    Training mode normalizes by batch statistics (biased variance) and
    folds them into the running buffers; ``use_running_stats`` opts a
    training step into the running estimates instead, which is also the
    only legal path for single-row batches.
    """
    n = x.shape[0]
    if training and not use_running_stats:
        if n < 2:
            raise ConfigError(
                "batch statistics need at least 2 rows; enable use_running_stats "
                "or increase the batch size")
        mean = ops.mean_axis(x, 0, keepdims=True)
        centered = ops.sub(x, mean)
        var = ops.mean_axis(ops.mul(centered, centered), 0, keepdims=True)
        inv = ops.rsqrt(ops.add(var, BN_EPS))
        normed = ops.mul(centered, inv)
        if update_running:
            m = BN_MOMENTUM
            buffers[f"{prefix}.mean"] = ((1 - m) * buffers[f"{prefix}.mean"]
                                         + m * mean.data.reshape(-1)).astype(x.dtype)
            buffers[f"{prefix}.var"] = ((1 - m) * buffers[f"{prefix}.var"]
                                        + m * var.data.reshape(-1)).astype(x.dtype)
    else:
        mean = Tensor(buffers[f"{prefix}.mean"].reshape(1, -1))
        var = Tensor(buffers[f"{prefix}.var"].reshape(1, -1))
        normed = ops.mul(ops.sub(x, mean), ops.rsqrt(ops.add(var, BN_EPS)))
    return ops.add(ops.mul(normed, gain), bias)


def decode(features: Tensor, p: Dict[str, Tensor], buffers: Dict[str, np.ndarray],
           level: int, training: bool, update_running: bool = True,
           use_running_stats: bool = False) -> Tensor:
    """(B, D) level readout -> (B, n_out) task head output."""
    pre = f"dec{level}"
    h = ops.add(ops.matmul(features, p[f"{pre}.fc1.w"]), p[f"{pre}.fc1.b"])
    h = batch_norm(h, p[f"{pre}.bn.g"], p[f"{pre}.bn.b"], buffers, f"{pre}.bn",
                   training, update_running, use_running_stats)
    h = ops.elu(h)
    return ops.add(ops.matmul(h, p[f"{pre}.fc2.w"]), p[f"{pre}.fc2.b"])


# ---------------------------------------------------------------------------
# task losses


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row softmax."""
    log_probs = ops.log_softmax_last(logits)
    picked = ops.gather_last(log_probs, np.asarray(labels, dtype=np.int64))
    return ops.scale(ops.sum_all(picked), -1.0 / logits.shape[0])


def squared_error(pred: Tensor, targets: np.ndarray) -> Tensor:
    """Mean squared error of the raw scalar head against float targets."""
    b = pred.shape[0]
    flat = ops.reshape(pred, (b,))
    diff = ops.sub(flat, Tensor(np.asarray(targets, dtype=pred.dtype)))
    return ops.scale(ops.sum_all(ops.mul(diff, diff)), 1.0 / b)


def candidate_hinge(scores: Tensor, correct: np.ndarray, margin: float = 1.0) -> Tensor:
    """Margin hinge over candidate scores (B, C).

    Each wrong candidate pays ``max(0, margin + s_wrong - s_correct)``;
    the sum is averaged over all wrong-candidate terms.
    """
    b, c = scores.shape
    if c < 2:
        raise ContractError(f"hinge needs at least 2 candidates, got {c}")
    correct = np.asarray(correct, dtype=np.int64)
    s_correct = ops.reshape(ops.gather_last(scores, correct), (b, 1))
    margins = ops.maximum0(ops.add(ops.sub(scores, s_correct), margin))
    keep = np.ones((b, c), dtype=scores.dtype)
    keep[np.arange(b), correct] = 0.0
    kept = ops.mul(margins, Tensor(keep))
    return ops.scale(ops.sum_all(kept), 1.0 / (b * (c - 1)))


def task_loss(outputs: Tensor, labels: np.ndarray, task: str) -> Tensor:
    if task == "open_ended":
        return cross_entropy(outputs, labels)
    if task == "count":
        return squared_error(outputs, labels)
    if task == "multi_choice":
        return candidate_hinge(outputs, labels)
    raise ConfigError(f"unknown task {task!r}")


def round_counts(raw: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Round-half-up to integers, clamped to the label range."""
    return np.clip(np.floor(np.asarray(raw, dtype=np.float64) + 0.5), lo, hi)


# ---------------------------------------------------------------------------
# objective assembly


def multistep_penalty(per_level: List[Tensor]) -> Tensor:
    """Sum of hinges between neighbouring levels: fine must beat coarse.

    ``max(0, loss_l - loss_{l+1})`` summed for l = 1..L-1; zero for a
    single level.
    """
    if not per_level:
        raise ContractError("multistep penalty needs at least one level loss")
    dtype = per_level[0].dtype
    total = Tensor(np.zeros((), dtype=dtype))
    for lower, upper in zip(per_level[:-1], per_level[1:]):
        total = ops.add(total, ops.maximum0(ops.sub(lower, upper)))
    return total


def total_loss(per_level: List[Tensor], step_penalty: Tensor, level_weight: float) -> Tensor:
    """Level-1 loss plus weighted coarse-level losses plus the step penalty."""
    if level_weight < 0:
        raise ConfigError(f"level weight must be non-negative, got {level_weight}")
    total = per_level[0]
    for coarse in per_level[1:]:
        total = ops.add(total, ops.scale(coarse, level_weight))
    return ops.add(total, step_penalty)


@dataclass
class LossBundle:
    """Everything the training loop needs from one forward pass."""

    per_level: List[Tensor]
    step_penalty: Tensor
    total: Tensor
    alpha: float
    beta: float
    level1_outputs: np.ndarray
