"""Versioned single-file container: JSON manifest plus raw little-endian arrays.

Layout::

    b"GCAPCKPT" | u32 version | u64 header length | header JSON | payload

The header lists every array (name, dtype, shape, offset, nbytes) and holds a
free-form ``manifest`` object. Serialization is canonical (sorted keys, arrays
in name order) so save -> load -> save reproduces the same bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

MAGIC = b"GCAPCKPT"
VERSION = 1
_ALLOWED = {"<f8", "<f4", "<i8", "<i4", "|u1", "|b1"}


class CheckpointError(ValueError):
    pass


def _canonical(a) -> np.ndarray:
    if isinstance(a, torch.Tensor):
        a = a.detach().cpu().numpy()
    a = np.asarray(a)
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder not in ("|", "<") else a.dtype
    if dt.str not in _ALLOWED:
        raise CheckpointError(f"unsupported dtype {a.dtype}")
    return np.ascontiguousarray(a, dtype=dt)


def save_container(path: str | Path, manifest: Mapping, arrays: Mapping[str, object]) -> None:
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = _canonical(arrays[name])
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"manifest": manifest, "arrays": entries}, sort_keys=True,
                        separators=(",", ":"), allow_nan=False).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)
    tmp.replace(path)


def load_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    start = len(MAGIC) + struct.calcsize("<IQ")
    header = json.loads(data[start : start + hlen].decode("utf-8"))
    base = start + hlen
    arrays = {}
    for e in header["arrays"]:
        lo = base + e["offset"]
        if lo + e["nbytes"] > len(data):
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        a = np.frombuffer(data, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)), offset=lo)
        arrays[e["name"]] = a.reshape(e["shape"]).copy()
    return header["manifest"], arrays


def module_arrays(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module_arrays(module: torch.nn.Module, arrays: Mapping[str, np.ndarray], prefix: str) -> None:
    """Copy ``prefix/*`` arrays into ``module``; names and shapes must match exactly."""
    state = module.state_dict()
    found = {k[len(prefix) + 1 :]: v for k, v in arrays.items() if k.startswith(prefix + "/")}
    missing, extra = set(state) - set(found), set(found) - set(state)
    if missing or extra:
        raise CheckpointError(f"{prefix}: parameter names differ (missing {sorted(missing)}, unexpected {sorted(extra)})")
    for k, v in state.items():
        if tuple(found[k].shape) != tuple(v.shape):
            raise CheckpointError(f"{prefix}/{k}: shape {tuple(found[k].shape)} != expected {tuple(v.shape)}")
    module.load_state_dict({k: torch.as_tensor(found[k], dtype=state[k].dtype) for k in state})


def optimizer_arrays(opt: torch.optim.Optimizer, prefix: str = "optim") -> dict[str, np.ndarray]:
    out = {}
    for idx, st in opt.state_dict()["state"].items():
        for key, val in st.items():
            out[f"{prefix}/{idx}/{key}"] = torch.as_tensor(val).detach().cpu().numpy()
    return out


def load_optimizer_arrays(opt: torch.optim.Optimizer, arrays: Mapping[str, np.ndarray], prefix: str = "optim") -> None:
    sd = opt.state_dict()
    state: dict[int, dict] = {}
    for name, val in arrays.items():
        if not name.startswith(prefix + "/"):
            continue
        _, idx, key = name.split("/", 2)
        state.setdefault(int(idx), {})[key] = torch.as_tensor(val.copy())
    sd["state"] = state
    opt.load_state_dict(sd)
