"""Binary checkpoints: a JSON header followed by raw little-endian float64 records.

Layout::

    b"COATTQA1"                 8-byte magic
    uint64 (little endian)      header length in bytes
    header                      UTF-8 JSON: {"config": {...}, "tensors": [{"name", "shape", "offset"}]}
    payload                     concatenated '<f8' arrays; offsets count bytes from payload start
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .config import RunConfig
from .model import QAModel

MAGIC = b"COATTQA1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: QAModel, path: str | Path, extra: dict | None = None) -> None:
    path = Path(path)
    records = []
    chunks = []
    offset = 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        records.append({"name": name, "shape": list(p.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {"format_version": FORMAT_VERSION, "config": model.config.to_dict(), "tensors": records}
    if extra:
        header["extra"] = extra
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(head)))
            fh.write(head)
            for chunk in chunks:
                fh.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    payload = memoryview(blob)[16 + n:]
    tensors = {}
    for rec in header["tensors"]:
        count = int(np.prod(rec["shape"], dtype=np.int64))
        end = rec["offset"] + 8 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: record {rec['name']} runs past end of file")
        tensors[rec["name"]] = np.frombuffer(payload[rec["offset"]:end], dtype="<f8").reshape(rec["shape"]).astype(np.float64)
    return header, tensors


def load_checkpoint(path: str | Path) -> QAModel:
    header, tensors = read_checkpoint(path)
    model = QAModel(RunConfig.from_dict(header["config"]))
    model.load_state_dict(tensors)
    return model
