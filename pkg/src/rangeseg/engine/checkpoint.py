"""Single-file checkpoint format: JSON manifest line + raw little-endian blobs."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays as a JSON manifest line followed by their bytes.

    The manifest lists name, shape, and dtype in write order; blobs are the
    arrays' little-endian bytes concatenated in the same order.
    """
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        manifest.append(
            {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
        )
        blobs.append(le.tobytes())
    with open(path, "wb") as fh:
        fh.write(json.dumps({"arrays": manifest}).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_arrays(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    try:
        header_end = raw.index(b"\n")
        manifest = json.loads(raw[:header_end].decode("utf-8"))["arrays"]
    except (ValueError, KeyError) as exc:
        raise ValueError(f"{path}: not a valid checkpoint file") from exc
    offset = header_end + 1
    out: dict[str, np.ndarray] = {}
    for entry in manifest:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(
                f"{path}: truncated blob for {entry['name']} "
                f"(wanted {nbytes} bytes, got {len(chunk)})"
            )
        out[entry["name"]] = (
            np.frombuffer(chunk, dtype=dtype).reshape(shape).astype(entry["dtype"])
        )
        offset += nbytes
    return out
