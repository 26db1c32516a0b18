"""Checkpoint files: JSON manifest plus float64 blobs of named parameters."""
import numpy as np

from ..container import BlobReader, ContainerError, read_container, write_container

MAGIC = b"FRCK"


def save_checkpoint(path, arrays, meta=None):
    """``arrays``: dict name -> array, written in sorted-name order."""
    names = sorted(arrays)
    header = {"format": "checkpoint", "version": 1, "meta": meta or {},
              "params": [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names]}
    write_container(path, MAGIC, header, [np.asarray(arrays[n], dtype=np.float64) for n in names])


def load_checkpoint(path):
    """Returns (dict name -> array, meta)."""
    header, payload = read_container(path, MAGIC)
    try:
        entries = header["params"]
        meta = header.get("meta", {})
    except (KeyError, TypeError):
        raise ContainerError("corrupt header: no parameter manifest") from None
    reader = BlobReader(payload)
    arrays = {}
    for e in entries:
        shape = tuple(e["shape"])
        arrays[e["name"]] = reader.take(int(np.prod(shape, dtype=np.int64))).reshape(shape).copy()
    reader.finish()
    return arrays, meta
