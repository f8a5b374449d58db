"""
Weights container (``.stdw``).

Layout, all integers little-endian:

    bytes 0..3    magic b"STDW"
    bytes 4..7    uint32 format version (1)
    bytes 8..11   uint32 manifest length M
    bytes 12..    M bytes of UTF-8 JSON manifest
    then          raw payload, float32 little-endian, tensors back to back

The manifest lists every tensor as {name, shape, offset, nbytes} with
offsets relative to the payload start, the dtype "<f4", and the SHA-256
of the payload. Nothing time-dependent is stored, so identical weights
give byte-identical files.
"""

import json
import logging
import struct
from collections import OrderedDict
from typing import Dict, Tuple

import numpy as np
from cryptography.hazmat.primitives import hashes

from src.utils.error_handling import CheckpointError, ErrorContext
from src.utils.fileio import atomic_write_bytes, read_bytes

logger = logging.getLogger(__name__)

MAGIC = b"STDW"
FORMAT_VERSION = 1
STORAGE_DTYPE = "<f4"
HEADER = struct.Struct("<4sII")


def sha256_hex(payload: bytes) -> str:
    digest = hashes.Hash(hashes.SHA256())
    digest.update(payload)
    return digest.finalize().hex()


def encode_weights(state: Dict[str, np.ndarray], extra: Dict[str, object] = None) -> bytes:
    tensors = []
    chunks = []
    offset = 0
    for name, array in state.items():
        data = np.ascontiguousarray(array, dtype=STORAGE_DTYPE).tobytes()
        tensors.append({"name": name, "shape": list(array.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)

    manifest = {
        "format": "stdw",
        "version": FORMAT_VERSION,
        "dtype": STORAGE_DTYPE,
        "tensors": tensors,
        "payload_sha256": sha256_hex(payload),
    }
    if extra:
        manifest["extra"] = extra
    manifest_bytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return HEADER.pack(MAGIC, FORMAT_VERSION, len(manifest_bytes)) + manifest_bytes + payload


def decode_weights(blob: bytes, source: str = "<memory>") -> Tuple["OrderedDict[str, np.ndarray]", dict]:
    def fail(message: str) -> CheckpointError:
        return CheckpointError(f"{source}: {message}", path=source,
                               context=ErrorContext(operation="load_weights"))

    if len(blob) < HEADER.size:
        raise fail("file too short for a weights header")
    magic, version, manifest_len = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise fail(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise fail(f"unsupported format version {version}")
    manifest_end = HEADER.size + manifest_len
    if manifest_end > len(blob):
        raise fail("truncated manifest")
    try:
        manifest = json.loads(blob[HEADER.size:manifest_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise fail(f"manifest is not valid JSON: {e}")

    payload = blob[manifest_end:]
    if manifest.get("dtype") != STORAGE_DTYPE:
        raise fail(f"unsupported dtype {manifest.get('dtype')!r}")
    if sha256_hex(payload) != manifest.get("payload_sha256"):
        raise fail("payload checksum mismatch")

    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in manifest.get("tensors", []):
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise fail(f"tensor {entry['name']} runs past the payload")
        array = np.frombuffer(payload, dtype=STORAGE_DTYPE, count=nbytes // 4, offset=start)
        state[entry["name"]] = array.reshape(entry["shape"]).astype(np.float64)
    return state, manifest


def save_weights(path, state: Dict[str, np.ndarray], extra: Dict[str, object] = None) -> None:
    atomic_write_bytes(path, encode_weights(state, extra))
    logger.info(f"Wrote weights to {path} ({len(state)} tensors)")


def load_weights(path) -> Tuple["OrderedDict[str, np.ndarray]", dict]:
    return decode_weights(read_bytes(path), str(path))
