"""
Parameter checkpoints: a flat list of named float64 tensors.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(tensor names, shapes, offsets and free-form metadata), then the raw
little-endian float64 payload.
"""

import json
import logging
import os
import struct
from typing import Dict, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"INGNNCKP"
PAYLOAD_DTYPE = np.dtype("<f8")


class CheckpointFormatError(ValueError):
    """The file is not a checkpoint or its header and payload disagree."""


def save_tensors(path: str, tensors: Dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    entries = []
    offset = 0
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += int(arr.size)
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for value in tensors.values():
            f.write(np.ascontiguousarray(value, dtype=PAYLOAD_DTYPE).tobytes())
    logger.info(f"Saved {len(entries)} tensors ({offset} values) to {path}")


def load_tensors(path: str) -> Tuple[Dict[str, np.ndarray], dict]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Checkpoint not found at {path}")
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise CheckpointFormatError(f"{path} is not a checkpoint (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: unreadable header ({e})") from e
    payload = np.frombuffer(blob[16 + header_len:], dtype=PAYLOAD_DTYPE)

    tensors: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start, count = entry["offset"], entry["count"]
        if start + count > payload.size:
            raise CheckpointFormatError(f"{path}: tensor {entry['name']} runs past the payload")
        tensors[entry["name"]] = payload[start:start + count].astype(np.float64).reshape(entry["shape"])
    return tensors, header.get("meta", {})
