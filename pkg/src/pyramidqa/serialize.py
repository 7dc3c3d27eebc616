"""Binary serialization for tensors and training checkpoints.

Tensor container layout (all integers little-endian):

    magic  b"PQT0"
    u8     format version (currently 1)
    u32    record count
    record*:
        u16    name length, then that many utf-8 bytes
        u8     dtype tag (0 = float32, 1 = float64, 2 = int64)
        u8     rank
        u64*   extents (rank of them)
        raw    scalars, little-endian, C order

Checkpoints reuse the container, prefixed with their own magic and a
length-prefixed echo of the run configuration text:

    magic  b"PQCK"
    u8     version
    u32    config text length, then utf-8 bytes
    ...    tensor container

Within a checkpoint, record names are namespaced: ``p/`` parameters,
``b/`` buffers (e.g. batch-norm running stats), ``m/`` and ``v/`` the
Adam moments, ``s/`` scalar training state.
"""

from __future__ import annotations

import io
import struct
from typing import Dict

import numpy as np

from .errors import CheckpointError, FormatError

TENSOR_MAGIC = b"PQT0"
TENSOR_VERSION = 1
CHECKPOINT_MAGIC = b"PQCK"
CHECKPOINT_VERSION = 1

_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}


def _read_exact(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise FormatError(f"truncated stream: wanted {n} bytes, got {len(data)}")
    return data


def write_tensors(buf, tensors: Dict[str, np.ndarray]) -> None:
    buf.write(TENSOR_MAGIC)
    buf.write(struct.pack("<B", TENSOR_VERSION))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        # note: ascontiguousarray would silently promote 0-d to 1-d
        arr = np.asarray(arr, order="C")
        dtype = arr.dtype.newbyteorder("<")
        if dtype not in _DTYPE_TAGS:
            raise FormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<BB", _DTYPE_TAGS[dtype], arr.ndim))
        for extent in arr.shape:
            buf.write(struct.pack("<Q", extent))
        buf.write(arr.astype(dtype, copy=False).tobytes(order="C"))


def read_tensors(buf) -> Dict[str, np.ndarray]:
    if _read_exact(buf, 4) != TENSOR_MAGIC:
        raise FormatError("bad tensor container magic")
    version = struct.unpack("<B", _read_exact(buf, 1))[0]
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor container version {version}")
    count = struct.unpack("<I", _read_exact(buf, 4))[0]
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = struct.unpack("<H", _read_exact(buf, 2))[0]
        name = _read_exact(buf, name_len).decode("utf-8")
        tag, rank = struct.unpack("<BB", _read_exact(buf, 2))
        if tag not in _TAG_DTYPES:
            raise FormatError(f"unknown dtype tag {tag} for tensor {name!r}")
        shape = tuple(struct.unpack("<Q", _read_exact(buf, 8))[0] for _ in range(rank))
        dtype = _TAG_DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        data = np.frombuffer(_read_exact(buf, nbytes), dtype=dtype).reshape(shape)
        out[name] = data.copy()
    return out


def save_tensor_file(path, tensors: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        write_tensors(fh, tensors)


def load_tensor_file(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return read_tensors(fh)


def save_checkpoint(path, config_text: str, params: Dict[str, np.ndarray],
                    buffers: Dict[str, np.ndarray], moments_m: Dict[str, np.ndarray],
                    moments_v: Dict[str, np.ndarray], state: Dict[str, float]) -> None:
    records: Dict[str, np.ndarray] = {}
    for name, arr in params.items():
        records[f"p/{name}"] = arr
    for name, arr in buffers.items():
        records[f"b/{name}"] = arr
    for name, arr in moments_m.items():
        records[f"m/{name}"] = arr
    for name, arr in moments_v.items():
        records[f"v/{name}"] = arr
    for name, value in state.items():
        records[f"s/{name}"] = np.asarray(float(value), dtype=np.float64)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<B", CHECKPOINT_VERSION))
    encoded = config_text.encode("utf-8")
    buf.write(struct.pack("<I", len(encoded)))
    buf.write(encoded)
    write_tensors(buf, records)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Read a checkpoint; returns (config_text, params, buffers, m, v, state)."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        try:
            if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
                raise FormatError("bad checkpoint magic")
            version = struct.unpack("<B", _read_exact(fh, 1))[0]
            if version != CHECKPOINT_VERSION:
                raise FormatError(f"unsupported checkpoint version {version}")
            conf_len = struct.unpack("<I", _read_exact(fh, 4))[0]
            config_text = _read_exact(fh, conf_len).decode("utf-8")
            records = read_tensors(fh)
        except FormatError as exc:
            raise CheckpointError(f"checkpoint {path}: {exc}") from exc
    params, buffers, mm, mv, state = {}, {}, {}, {}, {}
    for name, arr in records.items():
        space, _, rest = name.partition("/")
        if space == "p":
            params[rest] = arr
        elif space == "b":
            buffers[rest] = arr
        elif space == "m":
            mm[rest] = arr
        elif space == "v":
            mv[rest] = arr
        elif space == "s":
            state[rest] = float(arr.reshape(()))
        else:
            raise CheckpointError(f"checkpoint {path}: unknown record namespace {name!r}")
    return config_text, params, buffers, mm, mv, state
