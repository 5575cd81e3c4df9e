"""Self-describing binary container for named tensors.

Layout::

    magic  b"CUTLCKPT"
    u32    format version (little endian)
    u64    header length in bytes
    header UTF-8 JSON: {"meta": {...}, "tensors": [{name, dtype, shape, offset, nbytes}]}
    data   raw little-endian tensor bytes, concatenated in header order

The JSON is written with sorted keys and fixed separators, so writing a
loaded container reproduces the original bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"CUTLCKPT"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4", "uint8": "u1", "bool": "?"}


@dataclass
class Container:
    meta: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)  # name -> ndarray, insertion ordered

    def to_bytes(self) -> bytes:
        index, blobs, offset = [], [], 0
        for name, arr in self.tensors.items():
            arr = np.asarray(arr)
            dtype = arr.dtype.name
            if dtype not in _DTYPES:
                raise TypeError(f"tensor {name!r}: unsupported dtype {dtype}")
            blob = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
            index.append(
                {"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)}
            )
            blobs.append(blob)
            offset += len(blob)
        header = json.dumps(
            {"meta": self.meta, "tensors": index}, sort_keys=True, separators=(",", ":"), allow_nan=False
        ).encode("utf-8")
        return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(blobs)

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "Container":
        if data[: len(MAGIC)] != MAGIC:
            raise ParseError(source, 0, "not a checkpoint container (bad magic)")
        pos = len(MAGIC)
        if len(data) < pos + 12:
            raise ParseError(source, 0, "truncated container header")
        version, hlen = struct.unpack_from("<IQ", data, pos)
        if version != VERSION:
            raise ParseError(source, 0, f"unsupported container version {version}")
        pos += 12
        try:
            header = json.loads(data[pos : pos + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(source, 0, f"corrupt container header: {exc}") from exc
        base = pos + hlen
        tensors = {}
        for entry in header["tensors"]:
            start = base + entry["offset"]
            raw = data[start : start + entry["nbytes"]]
            if len(raw) != entry["nbytes"]:
                raise ParseError(source, 0, f"tensor {entry['name']!r} is truncated")
            arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
            tensors[entry["name"]] = arr.astype(entry["dtype"])
        if base + sum(e["nbytes"] for e in header["tensors"]) != len(data):
            raise ParseError(source, 0, "trailing bytes after the last tensor")
        return cls(meta=header["meta"], tensors=tensors)

    def save(self, path) -> Path:
        from ..harness.io import atomic_write_bytes

        return atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "Container":
        path = Path(path)
        return cls.from_bytes(path.read_bytes(), str(path))


def agent_to_container(agent, meta: dict) -> Container:
    """Networks, optimizer moments and temperature of a :class:`SacAgent`."""
    import torch

    tensors = {}
    for mod_name, module in agent.modules().items():
        for key, value in module.state_dict().items():
            tensors[f"{mod_name}.{key}"] = value.detach().numpy().copy()
    tensors["log_alpha"] = agent.log_alpha.detach().numpy().reshape(1).copy()
    for opt_name, opt in agent.optimizers().items():
        state = opt.state_dict()
        for pid, slots in state["state"].items():
            for slot, value in slots.items():
                tensors[f"{opt_name}.{pid}.{slot}"] = torch.as_tensor(value).detach().numpy().reshape(-1).copy()
    return Container(meta=meta, tensors=tensors)


def container_to_agent(container: Container, agent) -> None:
    import torch

    t = container.tensors
    for mod_name, module in agent.modules().items():
        prefix = f"{mod_name}."
        state = {k[len(prefix):]: torch.from_numpy(v.copy()) for k, v in t.items() if k.startswith(prefix)}
        module.load_state_dict(state)
    with torch.no_grad():
        agent.log_alpha.copy_(torch.from_numpy(t["log_alpha"].copy()).reshape(()))
    for opt_name, opt in agent.optimizers().items():
        state = opt.state_dict()
        prefix = f"{opt_name}."
        slots: dict = {}
        for key, value in t.items():
            if key.startswith(prefix):
                pid, slot = key[len(prefix):].split(".", 1)
                slots.setdefault(int(pid), {})[slot] = value
        if not slots:
            continue
        params = [p for group in opt.param_groups for p in group["params"]]
        new_state = {}
        for pid, entries in slots.items():
            shape = params[pid].shape
            new_state[pid] = {
                slot: torch.from_numpy(v.copy()).reshape(() if slot == "step" else shape)
                for slot, v in entries.items()
            }
        state["state"] = new_state
        opt.load_state_dict(state)
