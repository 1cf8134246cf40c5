"""Bit-exact little-endian checkpoint format.

Layout: magic ``LWSN``, format version (u32), record count (u32), then
one record per tensor: name length (u16) + UTF-8 name, dtype tag (u8),
rank (u8), extents (u32 each), payload.  Tags: 0 = float32 parameter,
1 = int8 parameter followed by its float32 scale and int32 zero point,
2 = float32 batch-norm running statistic.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"LWSN"
VERSION = 1
TAG_F32 = 0
TAG_I8 = 1
TAG_STAT = 2


class CheckpointError(Exception):
    """Raised for malformed or mismatched checkpoint files."""


@dataclass
class Record:
    name: str
    tag: int
    array: np.ndarray
    scale: float = 1.0
    zero_point: int = 0


def _write_record(out, rec: Record):
    name = rec.name.encode("utf-8")
    out.write(struct.pack("<H", len(name)))
    out.write(name)
    out.write(struct.pack("<BB", rec.tag, rec.array.ndim))
    out.write(struct.pack(f"<{rec.array.ndim}I", *rec.array.shape))
    if rec.tag == TAG_I8:
        out.write(rec.array.astype("<i1").tobytes())
        out.write(struct.pack("<fi", rec.scale, rec.zero_point))
    else:
        out.write(rec.array.astype("<f4").tobytes())


def write_records(records: list, path=None) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", VERSION, len(records)))
    for rec in records:
        _write_record(out, rec)
    blob = out.getvalue()
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(blob)
    return blob


def _take(buf: memoryview, pos: int, n: int):
    if pos + n > len(buf):
        raise CheckpointError("checkpoint truncated")
    return buf[pos : pos + n], pos + n


def read_records(path_or_bytes) -> list:
    if isinstance(path_or_bytes, (bytes, bytearray, memoryview)):
        blob = memoryview(bytes(path_or_bytes))
    else:
        with open(path_or_bytes, "rb") as fh:
            blob = memoryview(fh.read())
    pos = 0
    head, pos = _take(blob, pos, 4)
    if bytes(head) != MAGIC:
        raise CheckpointError(f"bad magic {bytes(head)!r}, not a model checkpoint")
    head, pos = _take(blob, pos, 8)
    version, count = struct.unpack("<II", head)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    records = []
    for _ in range(count):
        head, pos = _take(blob, pos, 2)
        (nlen,) = struct.unpack("<H", head)
        raw, pos = _take(blob, pos, nlen)
        name = bytes(raw).decode("utf-8")
        head, pos = _take(blob, pos, 2)
        tag, rank = struct.unpack("<BB", head)
        head, pos = _take(blob, pos, 4 * rank)
        shape = struct.unpack(f"<{rank}I", head)
        n = int(np.prod(shape)) if rank else 1
        if tag == TAG_I8:
            raw, pos = _take(blob, pos, n)
            arr = np.frombuffer(raw, dtype="<i1").reshape(shape).copy()
            head, pos = _take(blob, pos, 8)
            scale, zp = struct.unpack("<fi", head)
            records.append(Record(name, tag, arr, float(scale), int(zp)))
        elif tag in (TAG_F32, TAG_STAT):
            raw, pos = _take(blob, pos, 4 * n)
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
            records.append(Record(name, tag, arr))
        else:
            raise CheckpointError(f"record {name!r} has unknown dtype tag {tag}")
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after last record")
    return records


# ---------------------------------------------------------------------------

def model_records(model) -> list:
    recs = [Record(name, TAG_F32, p.data) for name, p in model.named_parameters()]
    recs += [Record(name, TAG_STAT, s) for name, s in model.named_running_stats()]
    return recs


def save_model(model, path=None) -> bytes:
    """Serialize float parameters (tag 0) and running stats (tag 2)."""
    return write_records(model_records(model), path)


def save_quantized(qmodel, path=None) -> bytes:
    """Serialize a quantized model: int8 weights, float everything else."""
    recs = []
    for name, p in qmodel.model.named_parameters():
        qt = qmodel.qtensors.get(name)
        if qt is not None:
            recs.append(Record(name, TAG_I8, qt.data, qt.scale, qt.zero_point))
        else:
            recs.append(Record(name, TAG_F32, p.data))
    recs += [Record(name, TAG_STAT, s) for name, s in qmodel.model.named_running_stats()]
    return write_records(recs, path)


def load_model(path, seed: int = 0):
    """Rebuild the reference architecture and fill it from a checkpoint.

    Returns an ``LWSNet`` for float checkpoints or a ``QuantizedLWSNet``
    when any record carries int8 weights.
    """
    from .model import LWSNet
    from .quantize import QuantizedLWSNet, QuantizedTensor, dequantize

    records = read_records(path)
    model = LWSNet(seed=seed)
    params = dict(model.named_parameters())
    stats = dict(model.named_running_stats())
    qtensors = {}
    seen = set()
    for rec in records:
        if rec.tag == TAG_STAT:
            target = stats.get(rec.name)
            if target is None:
                raise CheckpointError(f"checkpoint stat {rec.name!r} not present in model")
        else:
            tensor = params.get(rec.name)
            if tensor is None:
                raise CheckpointError(f"checkpoint parameter {rec.name!r} not present in model")
            target = tensor.data
        if tuple(target.shape) != tuple(rec.array.shape):
            raise CheckpointError(
                f"{rec.name!r}: checkpoint shape {rec.array.shape} vs model {target.shape}"
            )
        if rec.tag == TAG_I8:
            qt = QuantizedTensor(rec.array, rec.scale, rec.zero_point, rec.array.shape)
            qtensors[rec.name] = qt
            target[...] = dequantize(qt)
        else:
            target[...] = rec.array
        seen.add(rec.name)
    missing = (set(params) | set(stats)) - seen
    if missing:
        raise CheckpointError(f"checkpoint incomplete, missing {sorted(missing)[:5]}")
    if qtensors:
        return QuantizedLWSNet(model, qtensors)
    return model
