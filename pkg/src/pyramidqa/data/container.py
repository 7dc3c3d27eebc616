"""On-disk dataset layout: a text manifest plus binary split files.

A dataset is a directory:

    manifest.txt   key = value lines plus the vocabulary token list
    train.pmtd     one binary file per split
    val.pmtd
    test.pmtd

Split files are little-endian throughout: magic ``PMTD``, a version
word, record count, the fixed record geometry (raw frame extents and
token shape), an absolute-offset table, then the records themselves.
Frames are stored as raw uint8, tokens as int64 ids, the label as one
float64, and the balanced class id as one byte.  Offsets make the
records independently addressable so a reader can fetch one sample
without streaming the whole file.

Every sample is produced from its own derived generator keyed by
(split, index), so datasets are reproducible record-by-record and any
subset can be regenerated in isolation.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..errors import FormatError, InputError
from ..rng import DOMAIN_DATA, Rng
from .questions import (Sample, Vocab, build_sample, build_vocab, encode_sample,
                        sample_token_seqs, verify_label)
from .scenes import CANVAS, RAW_FRAMES, render

MAGIC = b"PMTD"
VERSION = 1
SPLIT_IDS = {"train": 0, "val": 1, "test": 2}


@dataclass
class SplitData:
    frames: np.ndarray   # (N, F, H, W, 3) uint8
    tokens: np.ndarray   # (N, Tq) or (N, C, Tq) int64
    labels: np.ndarray   # (N,) float64
    aux: np.ndarray      # (N,) uint8


def write_split(path: str, split: SplitData) -> None:
    frames, tokens = split.frames, split.tokens
    n, f, h, w, c = frames.shape
    if c != 3 or frames.dtype != np.uint8:
        raise InputError(f"frames must be uint8 RGB, got {frames.dtype} x{c}")
    tok_shape = tokens.shape[1:]
    header = MAGIC + struct.pack("<IIIII", VERSION, n, f, h, w)
    header += struct.pack("<B", len(tok_shape))
    header += struct.pack(f"<{len(tok_shape)}I", *tok_shape)
    offset_table_pos = len(header)
    record_size = f * h * w * 3 + int(np.prod(tok_shape)) * 8 + 8 + 1
    base = offset_table_pos + 8 * n
    offsets = np.arange(n, dtype="<u8") * record_size + base
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(offsets.tobytes())
        for i in range(n):
            fh.write(frames[i].tobytes())
            fh.write(tokens[i].astype("<i8").tobytes())
            fh.write(struct.pack("<d", float(split.labels[i])))
            fh.write(struct.pack("<B", int(split.aux[i])))


def _read_exact(fh, size: int, what: str) -> bytes:
    buf = fh.read(size)
    if len(buf) != size:
        raise FormatError(f"truncated split file while reading {what}")
    return buf


def read_split(path: str) -> SplitData:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot open split file {path}: {exc}") from None
    with fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise FormatError(f"{path} is not a dataset split file")
        version, n, f, h, w = struct.unpack("<IIIII", _read_exact(fh, 20, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported split version {version}")
        (rank,) = struct.unpack("<B", _read_exact(fh, 1, "token rank"))
        tok_shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "token shape"))
        offsets = np.frombuffer(_read_exact(fh, 8 * n, "offset table"), dtype="<u8")
        frame_bytes = f * h * w * 3
        tok_count = int(np.prod(tok_shape)) if rank else 1
        frames = np.empty((n, f, h, w, 3), dtype=np.uint8)
        tokens = np.empty((n, *tok_shape), dtype=np.int64)
        labels = np.empty(n, dtype=np.float64)
        aux = np.empty(n, dtype=np.uint8)
        for i in range(n):
            fh.seek(int(offsets[i]))
            frames[i] = np.frombuffer(
                _read_exact(fh, frame_bytes, f"record {i} frames"),
                dtype=np.uint8).reshape(f, h, w, 3)
            tokens[i] = np.frombuffer(
                _read_exact(fh, tok_count * 8, f"record {i} tokens"),
                dtype="<i8").reshape(tok_shape)
            (labels[i],) = struct.unpack("<d", _read_exact(fh, 8, f"record {i} label"))
            (aux[i],) = struct.unpack("<B", _read_exact(fh, 1, f"record {i} aux"))
    return SplitData(frames=frames, tokens=tokens, labels=labels, aux=aux)


# ---------------------------------------------------------------------------
# manifest


def write_manifest(path: str, task: str, question_len: int, candidates: int,
                   sizes: Dict[str, int], vocab: Vocab, seed: int) -> None:
    lines = [
        f"format = {VERSION}",
        f"task = {task}",
        f"seed = {seed}",
        f"question_len = {question_len}",
        f"candidates = {candidates}",
        f"raw_frames = {RAW_FRAMES}",
        "splits = " + ",".join(f"{k}:{v}" for k, v in sizes.items()),
        "vocab = " + " ".join(vocab.tokens),
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str) -> Dict[str, object]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from None
    raw: Dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"manifest line without '=': {line!r}")
        key, val = line.split("=", 1)
        raw[key.strip()] = val.strip()
    for needed in ("format", "task", "question_len", "candidates", "splits", "vocab"):
        if needed not in raw:
            raise FormatError(f"manifest is missing {needed!r}")
    if int(raw["format"]) != VERSION:
        raise FormatError(f"unsupported manifest format {raw['format']}")
    sizes = {}
    for part in raw["splits"].split(","):
        name, _, count = part.partition(":")
        sizes[name.strip()] = int(count)
    return {
        "task": raw["task"],
        "seed": int(raw.get("seed", 0)),
        "question_len": int(raw["question_len"]),
        "candidates": int(raw["candidates"]),
        "raw_frames": int(raw.get("raw_frames", RAW_FRAMES)),
        "sizes": sizes,
        "vocab": Vocab(raw["vocab"].split(" ")),
    }


# ---------------------------------------------------------------------------
# generation


def _build_samples(task: str, split: str, count: int, seed: int) -> List[Sample]:
    sid = SPLIT_IDS[split]
    return [build_sample(task, i, Rng(seed, DOMAIN_DATA, sid, i)) for i in range(count)]


def gen_dataset(task: str, out_dir: str, seed: int, sizes: Dict[str, int],
                question_len: int, check: bool = True) -> Dict[str, object]:
    """Generate a full dataset directory; returns the parsed manifest.

    Pass one builds every sample spec cheaply and the vocabulary from
    the training questions; pass two renders, encodes, optionally
    verifies each label from pixels, and writes the split files.
    """
    for split in sizes:
        if split not in SPLIT_IDS:
            raise InputError(f"unknown split {split!r}")
    os.makedirs(out_dir, exist_ok=True)
    per_split = {split: _build_samples(task, split, n, seed)
                 for split, n in sizes.items()}
    train_seqs: List[Tuple[str, ...]] = []
    for sample in per_split.get("train", []):
        train_seqs.extend(sample_token_seqs(sample))
    if not train_seqs:
        raise InputError("dataset needs a non-empty train split for the vocabulary")
    vocab = build_vocab(train_seqs)

    candidates = 0
    for split, samples in per_split.items():
        n = len(samples)
        frames = np.empty((n, RAW_FRAMES, CANVAS, CANVAS, 3), dtype=np.uint8)
        tokens = None
        labels = np.empty(n, dtype=np.float64)
        aux = np.empty(n, dtype=np.uint8)
        for i, sample in enumerate(samples):
            clip = render(sample.scene)
            if check and not verify_label(task, sample, clip):
                raise InputError(f"label check failed for {split}[{i}]")
            ids = encode_sample(sample, vocab, question_len)
            if tokens is None:
                tokens = np.empty((n, *ids.shape), dtype=np.int64)
            frames[i] = clip
            tokens[i] = ids
            labels[i] = sample.label
            aux[i] = sample.aux
            if sample.candidates is not None:
                candidates = len(sample.candidates)
        write_split(os.path.join(out_dir, f"{split}.pmtd"),
                    SplitData(frames=frames, tokens=tokens, labels=labels, aux=aux))

    write_manifest(os.path.join(out_dir, "manifest.txt"), task, question_len,
                   candidates, {k: len(v) for k, v in per_split.items()}, vocab, seed)
    return read_manifest(os.path.join(out_dir, "manifest.txt"))


def load_dataset(dir_path: str) -> Tuple[Dict[str, object], Dict[str, SplitData]]:
    manifest = read_manifest(os.path.join(dir_path, "manifest.txt"))
    splits = {name: read_split(os.path.join(dir_path, f"{name}.pmtd"))
              for name in manifest["sizes"]}
    return manifest, splits
