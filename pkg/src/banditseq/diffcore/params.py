"""Named parameter tensors with paired gradient buffers, plus checkpoint I/O.

Checkpoint format (little-endian binary):
    magic "BSQ1" | version u32 | entry count u32
    then per entry:
    name length u32 | UTF-8 name | rank u32 | dims u32[rank] | values f64[]

Values are written as raw IEEE-754 doubles, so save -> load -> save
round-trips byte-identically.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ContractViolation, NumericError
from .graph import Node, leaf

_MAGIC = b"BSQ1"
_VERSION = 1


class ParamStore:
    """Ordered mapping of name -> (parameter array, gradient array)."""

    def __init__(self):
        self._params: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._params:
            raise ContractViolation(f"duplicate parameter name '{name}'")
        # always copy: the store owns its buffers, callers keep theirs
        arr = np.array(value, dtype=np.float64, order="C", copy=True)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"parameter '{name}' initialized with non-finite values")
        self._params[name] = arr
        self._grads[name] = np.zeros_like(arr)
        return arr

    def names(self) -> list[str]:
        return list(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def node(self, name: str) -> Node:
        """Leaf node whose backward pass accumulates into this param's grad."""
        return leaf(self._params[name], name=name, sink=self._grads[name])

    def nodes(self) -> dict[str, Node]:
        """Fresh leaf nodes for every parameter (one graph's worth)."""
        return {name: self.node(name) for name in self._params}

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def num_values(self) -> int:
        return sum(p.size for p in self._params.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: p.copy() for name, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, v in values.items():
            p = self._params[name]
            if p.shape != v.shape:
                raise ContractViolation(f"shape mismatch loading '{name}'")
            p[...] = v

    def clone(self) -> "ParamStore":
        out = ParamStore()
        for name, p in self._params.items():
            out.add(name, p.copy())
        return out

    # -- checkpoint I/O ----------------------------------------------------

    def save(self, path) -> None:
        chunks = [_MAGIC, struct.pack("<II", _VERSION, len(self._params))]
        for name, p in self._params.items():
            nb = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(nb)))
            chunks.append(nb)
            chunks.append(struct.pack("<I", p.ndim))
            chunks.append(struct.pack(f"<{p.ndim}I", *p.shape))
            chunks.append(p.astype("<f8", copy=False).tobytes())
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path) -> "ParamStore":
        raw = Path(path).read_bytes()
        if raw[:4] != _MAGIC:
            raise ContractViolation(f"{path}: not a parameter checkpoint (bad magic)")
        version, count = struct.unpack_from("<II", raw, 4)
        if version != _VERSION:
            raise ContractViolation(f"{path}: unsupported checkpoint version {version}")
        store = cls()
        off = 12
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", raw, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(dims)
            off += 8 * n
            store.add(name, values)
        if off != len(raw):
            raise ContractViolation(f"{path}: {len(raw) - off} trailing bytes")
        return store

    def allclose(self, other: "ParamStore", rtol=0.0, atol=0.0) -> bool:
        if self.names() != other.names():
            return False
        return all(
            np.allclose(self._params[n], other._params[n], rtol=rtol, atol=atol)
            for n in self._params
        )
