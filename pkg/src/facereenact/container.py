"""Self-describing binary container: magic, u32 header length, JSON header, float64 blobs.

Shared by the morphable-model file (``.fmm``) and network checkpoints.
All numbers are little-endian.
"""
import json
import struct

import numpy as np


class ContainerError(ValueError):
    pass


def write_container(path, magic, header, blobs):
    """Write ``header`` (JSON-serialisable dict) followed by ``blobs`` as float64.

    Blobs are written in the given order, flattened in C order unless the
    caller has already arranged them otherwise.
    """
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(np.ascontiguousarray(blob, dtype="<f8").tobytes())


def read_container(path, magic):
    """Return ``(header, payload)`` where payload is a flat float64 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != magic:
        raise ContainerError(f"corrupt header: bad magic in {path}")
    (n,) = struct.unpack("<I", raw[4:8])
    if 8 + n > len(raw):
        raise ContainerError(f"corrupt header: truncated JSON header in {path}")
    try:
        header = json.loads(raw[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt header: {exc}") from None
    body = raw[8 + n:]
    if len(body) % 8:
        raise ContainerError("corrupt payload: length is not a multiple of 8")
    payload = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return header, payload


class BlobReader:
    """Sequential reader over a flat payload with a size check at the end."""

    def __init__(self, payload):
        self.payload = payload
        self.pos = 0

    def take(self, count):
        if self.pos + count > self.payload.size:
            raise ContainerError("dimension mismatch: payload shorter than declared dimensions")
        out = self.payload[self.pos:self.pos + count]
        self.pos += count
        return out

    def finish(self):
        if self.pos != self.payload.size:
            raise ContainerError("dimension mismatch: payload longer than declared dimensions")
