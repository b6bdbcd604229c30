"""Versioned model container.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header,
then the float32 little-endian payload. The header carries the spec, the
class labels and a manifest of ``{name, shape, offset, nbytes}`` per tensor.
"""

import json
import struct

import numpy as np

from .spec import ModelParams, ModelSpec

MAGIC = b"HWQMODL\x00"
FORMAT_VERSION = 1


def dumps(params):
    manifest, chunks, offset = [], [], 0
    for name, t in params.tensors.items():
        data = np.ascontiguousarray(t, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "version": params.version,
        "classes": list(params.classes),
        "spec": params.spec.to_dict(),
        "tensors": manifest,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<I", len(blob)) + blob + b"".join(chunks)


def loads(raw):
    if raw[:len(MAGIC)] != MAGIC:
        raise ValueError("not a model file (bad magic)")
    (n,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(raw[start:start + n].decode())
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {header.get('format_version')}")
    payload = memoryview(raw)[start + n:]
    tensors = {}
    for entry in header["tensors"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise ValueError(f"truncated payload for {entry['name']}")
        arr = np.frombuffer(payload[entry["offset"]:end], dtype="<f4").astype(np.float32)
        tensors[entry["name"]] = arr.reshape(entry["shape"])
    spec = ModelSpec.from_dict(header["spec"])
    return ModelParams(spec, tensors, header["version"], tuple(header["classes"]))


def save_model(path, params):
    with open(path, "wb") as fh:
        fh.write(dumps(params))


def load_model(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
