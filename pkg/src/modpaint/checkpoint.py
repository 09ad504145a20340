"""Binary checkpoint format for named parameter tensors.

Layout, all integers little-endian uint32, payloads float32 little-endian:

    magic "CMGN" | version | tensor count |
    per tensor: name length | name (UTF-8) | rank | dims... | payload

Tensors are written sorted by name, so identical parameter sets produce
byte-identical files.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"CMGN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str, params: dict) -> None:
    """params: name -> Tensor or ndarray; stored as float32."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        value = params[name]
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_checkpoint(path: str) -> dict:
    """Returns name -> float32 ndarray; validates magic, version, sizes."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, count = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        if pos + 4 > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        (name_len,) = struct.unpack("<I", blob[pos : pos + 4])
        pos += 4
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if pos + 4 > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        (rank,) = struct.unpack("<I", blob[pos : pos + 4])
        pos += 4
        if pos + 4 * rank > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        dims = struct.unpack(f"<{rank}I", blob[pos : pos + 4 * rank])
        pos += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        nbytes = 4 * n
        if pos + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(blob[pos : pos + nbytes], dtype="<f4").reshape(dims)
        pos += nbytes
        out[name] = arr.astype(np.float32)
    return out


def params_to_tensors(raw: dict) -> dict:
    """Checkpoint arrays -> trainable Tensors in the active precision."""
    return {name: Tensor(arr, requires_grad=True) for name, arr in raw.items()}


def load_into(module, path: str) -> None:
    """Load a checkpoint into a module, demanding an exact name match."""
    raw = load_checkpoint(path)
    expected = module.named_params()
    missing = sorted(set(expected) - set(raw))
    extra = sorted(set(raw) - set(expected))
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter names do not match the model"
            + (f"; missing {missing[:5]}" if missing else "")
            + (f"; unexpected {extra[:5]}" if extra else "")
        )
    module.load_state(params_to_tensors(raw))
