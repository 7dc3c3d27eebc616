"""Synthetic video question answering data: scenes, questions, storage."""

from .container import SplitData, gen_dataset, load_dataset, read_split, write_split
from .questions import Sample, Vocab, build_sample, build_vocab, verify_label
from .sampling import prepare_clip, sample_frame_indices
from .scenes import CANVAS, PALETTE, RAW_FRAMES, SceneSpec, ShapeSpec, render

__all__ = [
    "CANVAS", "PALETTE", "RAW_FRAMES",
    "Sample", "SceneSpec", "ShapeSpec", "SplitData", "Vocab",
    "build_sample", "build_vocab", "gen_dataset", "load_dataset",
    "prepare_clip", "read_split", "render", "sample_frame_indices",
    "verify_label", "write_split",
]
