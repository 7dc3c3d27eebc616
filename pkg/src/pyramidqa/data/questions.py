"""Question templates, task sample builders, vocabulary, label checks.

Three tasks share the scene machinery:

* ``open_ended``: one moving square plus a small static distractor; the
  question asks for the mover's color, answered as a palette class id.
* ``count``: one to five static circles on a jittered grid; the answer
  is the circle count as a float target for the regression head.
* ``multi_choice``: one moving square; four candidate phrases name a
  direction each, in shuffled order, and the label is the index of the
  phrase matching the actual motion.

Class balance is by construction: the answer class of sample ``i`` is
``i`` modulo the number of classes, so every contiguous block of samples
covers all classes equally.

Each builder only records what it drew; :func:`verify_label` re-derives
the label from rendered pixels (change masks, flood fill, centroid
tracking) so tests can catch the generator lying.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import InputError
from ..rng import Rng
from .scenes import (CANVAS, COLOR_NAMES, MOTION_STEPS, PALETTE, RAW_FRAMES,
                     SceneSpec, ShapeSpec, centroid, connected_components,
                     dominant_color, moving_mask, render)

PAD = "<pad>"
VOCAB_CAP = 64

MOVER_SIZE = 3
MOVER_SPEED = 0.6
DISTRACTOR_SIZE = 2
CIRCLE_SIZE = 3
MC_DIRECTIONS = ("left", "right", "up", "down")

COLOR_QUESTION = ("what", "color", "is", "the", "moving", "square")
COUNT_QUESTION = ("how", "many", "circles", "appear")
MOTION_QUESTION = ("what", "does", "the", "square", "do")


def candidate_phrase(direction: str) -> Tuple[str, ...]:
    return ("the", "square", "moves", direction)


@dataclass(frozen=True)
class Sample:
    scene: SceneSpec
    question: Tuple[str, ...]
    candidates: Optional[Tuple[Tuple[str, ...], ...]]
    label: float
    aux: int  # balanced class id: color, count-1, or direction index


def _start_range(speed_x: float, speed_y: float, size: int) -> Tuple[float, float, float, float]:
    margin = size + 1
    travel_x = speed_x * (RAW_FRAMES - 1)
    travel_y = speed_y * (RAW_FRAMES - 1)
    lo_x = margin - min(0.0, travel_x)
    hi_x = CANVAS - 1 - margin - max(0.0, travel_x)
    lo_y = margin - min(0.0, travel_y)
    hi_y = CANVAS - 1 - margin - max(0.0, travel_y)
    return lo_x, hi_x, lo_y, hi_y


def _moving_square(rng: Rng, color: int, direction: str) -> ShapeSpec:
    ux, uy = MOTION_STEPS[direction]
    lo_x, hi_x, lo_y, hi_y = _start_range(ux * MOVER_SPEED, uy * MOVER_SPEED, MOVER_SIZE)
    return ShapeSpec(kind="square", color=color, size=MOVER_SIZE,
                     x=float(rng.uniform(lo_x, hi_x)), y=float(rng.uniform(lo_y, hi_y)),
                     motion=direction, speed=MOVER_SPEED)


def _grid_centers(rng: Rng, k: int) -> List[Tuple[float, float]]:
    """k jittered cells of a 3x3 grid; spacing keeps circles disjoint."""
    cells = [(float(x), float(y)) for y in (6, 16, 26) for x in (6, 16, 26)]
    rng.shuffle(cells)
    return [(x + float(rng.uniform(-1.0, 1.0)), y + float(rng.uniform(-1.0, 1.0)))
            for x, y in cells[:k]]


def build_sample(task: str, index: int, rng: Rng) -> Sample:
    if task == "open_ended":
        color = index % len(PALETTE)
        direction = MC_DIRECTIONS[int(rng.integers(0, len(MC_DIRECTIONS)))]
        mover = _moving_square(rng, color, direction)
        other = (color + 1 + int(rng.integers(0, len(PALETTE) - 1))) % len(PALETTE)
        margin = DISTRACTOR_SIZE + 1
        distractor = ShapeSpec(
            kind="circle", color=other, size=DISTRACTOR_SIZE,
            x=float(rng.uniform(margin, CANVAS - 1 - margin)),
            y=float(rng.uniform(margin, CANVAS - 1 - margin)),
            motion="static")
        scene = SceneSpec(shapes=(distractor, mover))
        return Sample(scene, COLOR_QUESTION, None, float(color), color)

    if task == "count":
        k = index % 5 + 1
        shapes = tuple(
            ShapeSpec(kind="circle", color=int(rng.integers(0, len(PALETTE))),
                      size=CIRCLE_SIZE, x=x, y=y, motion="static")
            for x, y in _grid_centers(rng, k))
        return Sample(SceneSpec(shapes=shapes), COUNT_QUESTION, None, float(k), k - 1)

    if task == "multi_choice":
        true_dir = MC_DIRECTIONS[index % len(MC_DIRECTIONS)]
        color = int(rng.integers(0, len(PALETTE)))
        mover = _moving_square(rng, color, true_dir)
        order = list(MC_DIRECTIONS)
        rng.shuffle(order)
        candidates = tuple(candidate_phrase(d) for d in order)
        label = order.index(true_dir)
        return Sample(SceneSpec(shapes=(mover,)), MOTION_QUESTION, candidates,
                      float(label), MC_DIRECTIONS.index(true_dir))

    raise InputError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# vocabulary


class Vocab:
    """Token <-> id map with a fixed pad token at id 0."""

    def __init__(self, tokens: Sequence[str]):
        if not tokens or tokens[0] != PAD:
            raise InputError("vocabulary must start with the pad token")
        self.tokens: Tuple[str, ...] = tuple(tokens)
        self.ids: Dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise InputError("vocabulary has duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: Sequence[str], length: int) -> np.ndarray:
        if len(words) > length:
            raise InputError(f"question of {len(words)} tokens exceeds length {length}")
        out = np.zeros(length, dtype=np.int64)
        for i, w in enumerate(words):
            if w not in self.ids:
                raise InputError(f"token {w!r} not in vocabulary")
            out[i] = self.ids[w]
        return out


def build_vocab(token_seqs: Sequence[Sequence[str]], cap: int = VOCAB_CAP) -> Vocab:
    """Most frequent ``cap - 1`` tokens (ties alphabetical), pad first."""
    freq = Counter()
    for seq in token_seqs:
        freq.update(seq)
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([PAD] + [t for t, _ in ranked[:cap - 1]])


def sample_token_seqs(sample: Sample) -> List[Tuple[str, ...]]:
    seqs = [sample.question]
    if sample.candidates is not None:
        seqs.extend(sample.candidates)
    return seqs


def encode_sample(sample: Sample, vocab: Vocab, length: int) -> np.ndarray:
    """(Tq,) ids, or (C, Tq) with question and candidate concatenated."""
    if sample.candidates is None:
        return vocab.encode(sample.question, length)
    rows = [vocab.encode(tuple(sample.question) + tuple(cand), length)
            for cand in sample.candidates]
    return np.stack(rows)


# ---------------------------------------------------------------------------
# pixel-level label verification


def _nonblack_direction(frames: np.ndarray) -> str:
    x0, y0 = centroid(np.any(frames[0] != 0, axis=-1))
    x1, y1 = centroid(np.any(frames[-1] != 0, axis=-1))
    dx, dy = x1 - x0, y1 - y0
    if abs(dx) < 0.5 and abs(dy) < 0.5:
        return "static"
    if abs(dx) >= abs(dy):
        return "right" if dx > 0 else "left"
    return "down" if dy > 0 else "up"


def verify_label(task: str, sample: Sample, frames: Optional[np.ndarray] = None) -> bool:
    """Re-derive the label from pixels and compare with the stored one."""
    if frames is None:
        frames = render(sample.scene)
    if task == "open_ended":
        return dominant_color(frames, moving_mask(frames)) == int(sample.label)
    if task == "count":
        return connected_components(np.any(frames[0] != 0, axis=-1)) == int(sample.label)
    if task == "multi_choice":
        seen = _nonblack_direction(frames)
        expected = sample.candidates[int(sample.label)][-1]
        return seen == expected
    raise InputError(f"unknown task {task!r}")
