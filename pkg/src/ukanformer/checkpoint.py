"""Checkpoint files.

Layout (all integers little-endian)::

    b"UKF1"
    uint32   header length in bytes
    header   UTF-8 JSON: {"config": ..., "extra": ..., "tensors": [
                 {"name", "kind", "shape", "dtype", "offset", "nbytes"}, ...]}
    payload  raw little-endian tensor buffers; ``offset`` is relative to
             the first payload byte
"""
import json
import struct

import numpy as np

from .errors import ContractError

MAGIC = b"UKF1"


def snapshot(model):
    """In-memory copy of every parameter and buffer."""
    return {k: np.array(v, copy=True) for k, v in model.state_dict().items()}


def restore(model, snap):
    model.load_state_dict(snap)


def save(path, model, extra=None):
    params = dict(model.named_parameters())
    table, blobs, offset = [], [], 0
    for name, arr in model.state_dict().items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        table.append({"name": name, "kind": "param" if name in params else "buffer",
                      "shape": list(arr.shape), "dtype": le.dtype.str,
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"config": model.config.to_dict(), "extra": extra or {}, "tensors": table}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for raw in blobs:
            fh.write(raw)


def read(path):
    """Return ``(header, state)`` where ``state`` maps names to numpy arrays."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC or len(blob) < 8:
        raise ContractError(f"{path}: not a UKF1 checkpoint")
    (hlen,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContractError(f"{path}: corrupt checkpoint header") from exc
    base = 8 + hlen
    state = {}
    for t in header["tensors"]:
        start = base + t["offset"]
        if start + t["nbytes"] > len(blob):
            raise ContractError(f"{path}: truncated at tensor {t['name']}")
        arr = np.frombuffer(blob, dtype=np.dtype(t["dtype"]), count=int(np.prod(t["shape"], dtype=np.int64)),
                            offset=start).reshape(t["shape"])
        state[t["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return header, state


def load(path):
    """Rebuild the model stored at ``path`` (same precision as saved)."""
    from .model import ModelConfig, build
    from .tensor import precision

    header, state = read(path)
    dtypes = {np.dtype(t["dtype"]).itemsize for t in header["tensors"] if t["kind"] == "param"}
    prec = "f64" if dtypes == {8} else "f32"
    with precision(prec):
        model = build(ModelConfig.from_dict(header["config"]))
    model.load_state_dict(state)
    return model, header.get("extra", {})
