"""The full question-answering model: encoders, pyramid, heads, losses.

One :class:`PyramidModel` owns every parameter tensor (a flat ordered
dict of name -> Tensor), the batch-norm running buffers, and the wiring
between the pieces.  Training forwards build the whole graph on the
active tape and return a :class:`~pyramidqa.losses.LossBundle`;
evaluation forwards run untaped and read out only the finest level.

Multiple-choice questions score each candidate with the same weights:
the video is encoded once, then each candidate's token sequence drives
its own pyramid pass, and the per-level scores are concatenated to a
(batch, candidates) matrix for the margin loss.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from . import ops
from . import tensor as T
from .bottom_up import init_block_params, run_bottom_up
from .config import RunConfig
from .encoders import (embed_tokens, encode_language, encode_video,
                       init_language_params, init_video_params)
from .errors import InputError
from .losses import (LossBundle, decode, init_decoder_params, multistep_penalty,
                     task_loss, total_loss)
from .rng import DOMAIN_INIT, Rng
from .tensor import Tensor
from .top_down import TopDownResult, init_topdown_params, run_top_down


class PyramidModel:
    def __init__(self, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        dtype = cfg.dtype
        rng = Rng(cfg.seed, DOMAIN_INIT)

        self.params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self.params.update(init_video_params(rng, cfg, dtype))
        self.params.update(init_language_params(rng, cfg.vocab_size, cfg.d_model, dtype))
        for level in range(1, cfg.levels + 1):
            self.params.update(init_block_params(rng, level, cfg.d_model, dtype))
        self.params.update(init_topdown_params(rng, cfg.levels, cfg.d_model, dtype))
        n_out = cfg.n_outputs()
        for level in range(1, cfg.levels + 1):
            p, b = init_decoder_params(rng, level, cfg.d_model, n_out, dtype)
            self.params.update(p)
            self.buffers.update(b)

        scale = ops.attention_scale(cfg.d_model, cfg.d_model // cfg.heads,
                                    cfg.attention_scale)
        self.scales = [scale] * cfg.levels

    # -- plumbing ----------------------------------------------------------

    def _frames_tensor(self, frames: np.ndarray) -> Tensor:
        arr = np.asarray(frames)
        if arr.ndim != 5 or arr.shape[-1] != 3:
            raise InputError(f"expected a (B, T, H, W, 3) clip batch, got {arr.shape}")
        if arr.dtype == np.uint8:
            arr = arr.astype(self.cfg.dtype) / np.asarray(255, dtype=self.cfg.dtype)
        else:
            arr = arr.astype(self.cfg.dtype, copy=False)
        return Tensor(arr)

    def _pyramid(self, volume: Tensor, tokens: np.ndarray) -> TopDownResult:
        emb = embed_tokens(tokens, self.params)
        lang_seq, lang_mean = encode_language(emb, self.params)
        streams = run_bottom_up(volume, lang_seq, self.params, self.cfg, self.scales)
        return run_top_down(streams, lang_mean, self.params, self.cfg)

    def _decode_levels(self, result: TopDownResult, training: bool,
                       update_running: bool) -> List[Tensor]:
        return [decode(r.output, self.params, self.buffers, level + 1, training,
                       update_running) for level, r in enumerate(result.readouts)]

    # -- forwards ----------------------------------------------------------

    def level_outputs(self, frames: np.ndarray, tokens: np.ndarray, training: bool,
                      update_running: bool = True) -> Tuple[List[Tensor], TopDownResult]:
        """Head outputs for every level, finest first.

        Open-ended and counting get one pyramid pass.  Multiple choice
        (tokens of shape (B, C, Tq)) shares the encoded video across
        candidates; each level's outputs are (B, C) score matrices.
        """
        volume = encode_video(self._frames_tensor(frames), self.params, self.cfg)
        tokens = np.asarray(tokens)
        if self.cfg.task != "multi_choice":
            result = self._pyramid(volume, tokens)
            return self._decode_levels(result, training, update_running), result
        if tokens.ndim != 3:
            raise InputError(
                f"multi_choice tokens must be (B, C, Tq), got {tokens.shape}")
        per_candidate: List[List[Tensor]] = []
        result = None
        for c in range(tokens.shape[1]):
            result = self._pyramid(volume, tokens[:, c, :])
            per_candidate.append(self._decode_levels(result, training, update_running))
        levels = [ops.concat([cand[lvl] for cand in per_candidate], axis=1)
                  for lvl in range(self.cfg.levels)]
        return levels, result

    def forward_train(self, frames: np.ndarray, tokens: np.ndarray,
                      labels: np.ndarray, update_running: bool = True) -> LossBundle:
        outputs, result = self.level_outputs(frames, tokens, training=True,
                                             update_running=update_running)
        per_level = [task_loss(out, labels, self.cfg.task) for out in outputs]
        if self.cfg.no_constraint:
            step = Tensor(np.zeros((), dtype=per_level[0].dtype))
        else:
            step = multistep_penalty(per_level)
        total = total_loss(per_level, step, self.cfg.level_weight)
        finest = result.readouts[0]
        return LossBundle(per_level=per_level, step_penalty=step, total=total,
                          alpha=float(finest.alpha.data), beta=float(finest.beta.data),
                          level1_outputs=outputs[0].data.copy())

    def forward_eval(self, frames: np.ndarray, tokens: np.ndarray) -> np.ndarray:
        """Finest-level head outputs with frozen statistics, untaped."""
        with T.no_tape():
            outputs, _ = self.level_outputs(frames, tokens, training=False)
        return outputs[0].data.copy()

    def loss_closure(self, frames: np.ndarray, tokens: np.ndarray, labels: np.ndarray):
        """Zero-argument total-loss closure, pure in the parameters.

        Running statistics are left untouched so repeated calls see the
        same function; built for the finite-difference checker.
        """
        def fn() -> Tensor:
            return self.forward_train(frames, tokens, labels,
                                      update_running=False).total
        return fn

    # -- bookkeeping -------------------------------------------------------

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                g = p.grad.astype(np.float64, copy=False)
                total += float((g * g).sum())
        return float(np.sqrt(total))

    def load_arrays(self, params: Dict[str, np.ndarray],
                    buffers: Optional[Dict[str, np.ndarray]] = None) -> None:
        for name, arr in params.items():
            if name not in self.params:
                raise InputError(f"unknown parameter {name!r} in checkpoint")
            if self.params[name].shape != arr.shape:
                raise InputError(
                    f"shape mismatch for {name!r}: model {self.params[name].shape}, "
                    f"checkpoint {arr.shape}")
            self.params[name].data = arr.astype(self.params[name].dtype, copy=True)
        for name, arr in (buffers or {}).items():
            if name not in self.buffers:
                raise InputError(f"unknown buffer {name!r} in checkpoint")
            self.buffers[name] = arr.astype(self.buffers[name].dtype, copy=True)
