"""Checkpoint files.

Layout::

    b"PAUTH1"                       6-byte magic
    uint32 little-endian            length of the JSON header in bytes
    JSON header (UTF-8)             version, config, labels, metadata, directory
    tensor payloads                 little-endian float32, row-major, directory order

Directory offsets are relative to the start of the payload block.
"""

import json
import struct

import numpy as np

from ppgauth.errors import CorruptCheckpoint, VersionMismatch
from ppgauth.nn import ModelConfig, ModelParams, param_shapes

MAGIC = b"PAUTH1"
FORMAT_VERSION = 1
_LEN = struct.Struct("<I")


def encode_checkpoint(params, label_names=(), metadata=None):
    directory = []
    payload = []
    offset = 0
    for name, arr in params.tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = {
        "version": FORMAT_VERSION,
        "config": params.config.to_dict(),
        "label_names": list(label_names),
        "metadata": metadata or {},
        "payload_bytes": offset,
        "tensors": directory,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + _LEN.pack(len(hbytes)) + hbytes + b"".join(payload)


def decode_checkpoint(blob):
    """Parse checkpoint bytes into ``(params, header)``."""
    if len(blob) < len(MAGIC) + _LEN.size or blob[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint("bad magic")
    (hlen,) = _LEN.unpack_from(blob, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if start + hlen > len(blob):
        raise CorruptCheckpoint("truncated header")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from None
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, this build reads {FORMAT_VERSION}")
    body = memoryview(blob)[start + hlen:]
    if len(body) != header.get("payload_bytes"):
        raise CorruptCheckpoint(
            f"payload is {len(body)} bytes, header declares {header.get('payload_bytes')}"
        )
    config = ModelConfig(**header["config"])
    expected = param_shapes(config)
    tensors = {}
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise CorruptCheckpoint(f"tensor {name} has shape {shape}, config implies {expected.get(name)}")
        lo, n = entry["offset"], entry["nbytes"]
        if n != 4 * int(np.prod(shape)) or lo + n > len(body):
            raise CorruptCheckpoint(f"tensor {name} extends past the payload")
        arr = np.frombuffer(body[lo:lo + n], dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float64)
    if set(tensors) != set(expected):
        raise CorruptCheckpoint("tensor directory does not match config")
    return ModelParams(config, {k: tensors[k] for k in expected}), header


def save_checkpoint(params, path, history=None, label_names=(), metadata=None):
    meta = dict(metadata or {})
    if history is not None:
        meta["history"] = [rec.as_dict() for rec in history]
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(params, label_names, meta))


def load_checkpoint(path, with_header=False):
    with open(path, "rb") as fh:
        params, header = decode_checkpoint(fh.read())
    return (params, header) if with_header else params
