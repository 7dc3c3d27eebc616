"""Adam, the plateau scheduler, and the epoch loop.

Reproducibility contract: every random decision of a run is derived
from (seed, purpose, epoch, sample), never from call order.  Shuffles
key on the epoch, augmentation keys on (epoch, sample index), and Adam
state is checkpointed, so a run interrupted after any epoch and resumed
from ``last.ckpt`` continues with exactly the bytes the uninterrupted
run would have written: the metrics log is append-only with a fixed
numeric format and serves as the equality witness.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import tensor as T
from .config import RunConfig, parse_config_text
from .data.container import SplitData, load_dataset
from .data.sampling import prepare_clip
from .errors import CheckpointError, ConfigError, InputError, NumericError
from .evaluate import evaluate_split
from .model import PyramidModel
from .rng import DOMAIN_AUGMENT, DOMAIN_SHUFFLE, Rng
from .serialize import load_checkpoint, save_checkpoint

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

METRIC_FMT = "{:.10g}"
METRICS_HEADER = "#epoch\ttrain_loss\tval_loss\tval_metric\tlr\talpha\tbeta"


class Adam:
    """Moment-tracking optimizer over a named parameter dict."""

    def __init__(self, params, lr: float):
        self.params = params
        self.lr = float(lr)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - ADAM_BETA1 ** self.t
        b2t = 1.0 - ADAM_BETA2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            g = g.astype(p.dtype, copy=False)
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1 - ADAM_BETA2) * g * g
            update = (m / b1t) / (np.sqrt(v / b2t) + ADAM_EPS)
            p.data = p.data - self.lr * update


class PlateauScheduler:
    """Halve the learning rate after ``patience`` epochs without improvement."""

    def __init__(self, lr: float, patience: int, factor: float = 0.5):
        self.lr = float(lr)
        self.patience = int(patience)
        self.factor = float(factor)
        self.best = np.inf
        self.since = 0

    def observe(self, value: float) -> float:
        if value < self.best:
            self.best = float(value)
            self.since = 0
        else:
            self.since += 1
            if self.since >= self.patience:
                self.lr *= self.factor
                self.since = 0
        return self.lr

    def state(self) -> Dict[str, float]:
        return {"lr": self.lr, "plateau_best": float(self.best),
                "plateau_since": float(self.since)}

    def load_state(self, state: Dict[str, float]) -> None:
        self.lr = float(state["lr"])
        self.best = float(state["plateau_best"])
        self.since = int(state["plateau_since"])


def batch_labels(labels: np.ndarray, task: str) -> np.ndarray:
    if task == "count":
        return labels.astype(np.float64)
    return labels.astype(np.int64)


def build_batch(split: SplitData, idxs: np.ndarray, cfg: RunConfig, epoch: int,
                train: bool):
    clips = []
    for i in idxs:
        rng = Rng(cfg.seed, DOMAIN_AUGMENT, epoch, int(i)) if train else None
        clips.append(prepare_clip(split.frames[int(i)], cfg.time_steps, rng,
                                  augment=train and cfg.augment))
    frames = np.stack(clips)
    return frames, split.tokens[idxs], batch_labels(split.labels[idxs], cfg.task)


def epoch_batches(n: int, cfg: RunConfig, epoch: int) -> List[np.ndarray]:
    """Shuffled full batches; a trailing partial batch is dropped because
    batch statistics need at least two rows."""
    order = Rng(cfg.seed, DOMAIN_SHUFFLE, epoch).permutation(n)
    full = n // cfg.batch_size
    return [order[b * cfg.batch_size:(b + 1) * cfg.batch_size] for b in range(full)]


def train_epoch(model: PyramidModel, adam: Adam, split: SplitData, cfg: RunConfig,
                epoch: int) -> Dict[str, float]:
    losses = []
    alpha = beta = 0.5
    for idxs in epoch_batches(split.frames.shape[0], cfg, epoch):
        frames, tokens, labels = build_batch(split, idxs, cfg, epoch, train=True)
        model.zero_grads()
        tape = T.Tape()
        with T.record(tape):
            bundle = model.forward_train(frames, tokens, labels)
        loss = bundle.total.item()
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss {loss} at epoch {epoch}")
        T.backward(bundle.total, tape)
        gnorm = model.grad_norm()
        if not np.isfinite(gnorm):
            raise NumericError(f"non-finite gradient norm at epoch {epoch}")
        adam.step()
        losses.append(loss)
        alpha, beta = bundle.alpha, bundle.beta
    if not losses:
        raise InputError("training split has fewer samples than one batch")
    return {"train_loss": float(np.mean(losses)), "alpha": alpha, "beta": beta}


def format_metrics_line(epoch: int, row: Dict[str, float]) -> str:
    cells = [str(epoch)] + [METRIC_FMT.format(row[k]) for k in
                            ("train_loss", "val_loss", "val_metric", "lr",
                             "alpha", "beta")]
    return "\t".join(cells)


@dataclass
class TrainResult:
    epochs_run: int
    best_val_loss: float
    best_val_metric: float
    history: List[Dict[str, float]] = field(default_factory=list)


def _state_dict(epoch_done: int, adam: Adam, sched: PlateauScheduler,
                best_val: float, best_metric: float) -> Dict[str, float]:
    state = {"epoch_done": float(epoch_done), "adam_t": float(adam.t),
             "best_val": float(best_val), "best_metric": float(best_metric)}
    state.update(sched.state())
    return state


def _save(path: str, cfg: RunConfig, model: PyramidModel, adam: Adam,
          state: Dict[str, float]) -> None:
    save_checkpoint(path, cfg.to_text(),
                    {k: p.data for k, p in model.params.items()},
                    model.buffers, adam.m, adam.v, state)


def load_model_for_eval(ckpt_path: str) -> PyramidModel:
    config_text, params, buffers, _, _, _ = load_checkpoint(ckpt_path)
    cfg = parse_config_text(config_text).validate()
    model = PyramidModel(cfg)
    model.load_arrays(params, buffers)
    return model


def train(cfg: RunConfig, data_dir: str, out_dir: str, resume: bool = False,
          stop_when: Optional[Callable[[Dict[str, float]], bool]] = None,
          log: Optional[Callable[[str], None]] = None) -> TrainResult:
    manifest, splits = load_dataset(data_dir)
    if manifest["task"] != cfg.task:
        raise ConfigError(
            f"dataset task {manifest['task']!r} does not match config {cfg.task!r}")
    if "train" not in splits or "val" not in splits:
        raise InputError("training needs train and val splits")
    cfg.vocab_size = len(manifest["vocab"])
    cfg.question_len = manifest["question_len"]
    if manifest["candidates"]:
        cfg.num_candidates = manifest["candidates"]
    cfg.validate()

    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.tsv")
    last_path = os.path.join(out_dir, "last.ckpt")
    best_path = os.path.join(out_dir, "best.ckpt")

    model = PyramidModel(cfg)
    adam = Adam(model.params, cfg.lr)
    sched = PlateauScheduler(cfg.lr, cfg.patience)
    start_epoch = 0
    best_val = np.inf
    best_metric = 0.0

    if resume:
        config_text, params, buffers, m, v, state = load_checkpoint(last_path)
        if config_text != cfg.to_text():
            raise CheckpointError("checkpoint config does not match the requested run")
        model.load_arrays(params, buffers)
        for name in adam.m:
            if name not in m:
                raise CheckpointError(f"checkpoint is missing moment for {name!r}")
            adam.m[name] = m[name].astype(adam.m[name].dtype, copy=True)
            adam.v[name] = v[name].astype(adam.v[name].dtype, copy=True)
        adam.t = int(state["adam_t"])
        sched.load_state(state)
        start_epoch = int(state["epoch_done"]) + 1
        best_val = float(state["best_val"])
        best_metric = float(state["best_metric"])
    elif not os.path.exists(metrics_path):
        with open(metrics_path, "w", encoding="utf-8") as fh:
            fh.write(METRICS_HEADER + "\n")

    result = TrainResult(epochs_run=start_epoch, best_val_loss=best_val,
                         best_val_metric=best_metric)
    for epoch in range(start_epoch, cfg.max_epochs):
        adam.lr = sched.lr
        row = train_epoch(model, adam, splits["train"], cfg, epoch)
        val = evaluate_split(model, splits["val"], cfg)
        row["val_loss"] = val["loss"]
        row["val_metric"] = val["metric"]
        plateau_input = row["val_loss"] if cfg.plateau_on == "val" else row["train_loss"]
        row["lr"] = sched.lr
        sched.observe(plateau_input)

        line = format_metrics_line(epoch, row)
        with open(metrics_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        if log is not None:
            log(line)

        improved = row["val_loss"] < best_val
        if improved:
            best_val = row["val_loss"]
            best_metric = row["val_metric"]
        state = _state_dict(epoch, adam, sched, best_val, best_metric)
        _save(last_path, cfg, model, adam, state)
        if improved:
            _save(best_path, cfg, model, adam, state)

        result.epochs_run = epoch + 1
        result.best_val_loss = best_val
        result.best_val_metric = best_metric
        result.history.append(dict(row, epoch=epoch))
        if stop_when is not None and stop_when(row):
            break
    return result
