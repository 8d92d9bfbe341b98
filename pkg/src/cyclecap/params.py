"""Named parameter matrices, their gradients, and checkpoint IO.

Every learnable array in the model is a 2-D float64 matrix living in a
ParamStore under a dotted name ("gen0.wq", "cap.gru.wxr", ...).  Insertion
order is part of the contract: initialization draws and optimizer updates
walk the store in registration order, which is what makes runs repeatable.

Checkpoint format (little-endian throughout):

    magic   4 bytes  b"CCAP"
    version u32      currently 1
    entries until EOF, each:
        name_len u32
        name     name_len bytes, UTF-8
        rows     u64
        cols     u64
        data     rows*cols float64, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ArtifactMismatch, ContractViolation
from .numerics import Array, require_finite

MAGIC = b"CCAP"
VERSION = 1


class ParamStore:
    def __init__(self) -> None:
        self._values: dict[str, Array] = {}
        self._grads: dict[str, Array] = {}
        self._fan_in: dict[str, int] = {}

    # ----- registration and access -------------------------------------

    def register(self, name: str, rows: int, cols: int, fan_in: int | None = None) -> None:
        """Reserve a zero matrix under `name`; fan_in drives init bounds."""
        if name in self._values:
            raise ContractViolation(f"parameter {name!r} registered twice")
        if rows <= 0 or cols <= 0:
            raise ContractViolation(f"parameter {name!r} has empty shape {(rows, cols)}")
        self._values[name] = np.zeros((rows, cols), dtype=np.float64)
        self._grads[name] = np.zeros((rows, cols), dtype=np.float64)
        self._fan_in[name] = int(fan_in if fan_in is not None else rows)

    def names(self) -> list[str]:
        return list(self._values.keys())

    def get(self, name: str) -> Array:
        try:
            return self._values[name]
        except KeyError:
            raise ContractViolation(f"unknown parameter {name!r}") from None

    def set(self, name: str, value: Array) -> None:
        cur = self.get(name)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != cur.shape:
            raise ContractViolation(
                f"shape mismatch for {name!r}: {value.shape} vs {cur.shape}"
            )
        require_finite(name, value)
        self._values[name] = np.ascontiguousarray(value)

    def grad(self, name: str) -> Array:
        try:
            return self._grads[name]
        except KeyError:
            raise ContractViolation(f"unknown parameter {name!r}") from None

    def add_grad(self, name: str, g: Array) -> None:
        buf = self.grad(name)
        if g.shape != buf.shape:
            raise ContractViolation(
                f"grad shape mismatch for {name!r}: {g.shape} vs {buf.shape}"
            )
        buf += g

    def zero_grads(self) -> None:
        """Reset every gradient buffer to exact 0.0, not merely small."""
        for g in self._grads.values():
            g[...] = 0.0

    # ----- initialization ----------------------------------------------

    def init_uniform(self, rng: np.random.Generator) -> None:
        """U[-1/sqrt(fan_in), 1/sqrt(fan_in)] per matrix, registration order."""
        for name, val in self._values.items():
            bound = 1.0 / float(np.sqrt(self._fan_in[name]))
            self._values[name] = rng.uniform(-bound, bound, size=val.shape)

    # ----- checkpoint IO ------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            for name, val in self._values.items():
                require_finite(name, val)
                raw = name.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<QQ", val.shape[0], val.shape[1]))
                fh.write(np.ascontiguousarray(val, dtype="<f8").tobytes())

    @staticmethod
    def load(path: str | Path) -> "ParamStore":
        path = Path(path)
        blob = path.read_bytes()
        if blob[:4] != MAGIC:
            raise ArtifactMismatch(f"{path}: bad magic {blob[:4]!r}")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != VERSION:
            raise ArtifactMismatch(f"{path}: unsupported version {version}")
        store = ParamStore()
        off = 8
        while off < len(blob):
            if off + 4 > len(blob):
                raise ArtifactMismatch(f"{path}: truncated entry header")
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            if off + 16 > len(blob):
                raise ArtifactMismatch(f"{path}: truncated shape for {name!r}")
            rows, cols = struct.unpack_from("<QQ", blob, off)
            off += 16
            count = rows * cols
            end = off + 8 * count
            if end > len(blob):
                raise ArtifactMismatch(f"{path}: truncated data for {name!r}")
            data = np.frombuffer(blob[off:end], dtype="<f8").reshape(rows, cols)
            store.register(name, int(rows), int(cols))
            store._values[name] = np.ascontiguousarray(data, dtype=np.float64)
            off = end
        return store

    def adopt(self, other: "ParamStore") -> None:
        """Copy values from `other`, requiring identical names and shapes.

        This is the checkpoint-vs-config compatibility gate: any drift in
        the parameter registry surfaces here as an ArtifactMismatch.
        """
        mine = self.names()
        theirs = other.names()
        if mine != theirs:
            missing = sorted(set(mine) - set(theirs))
            extra = sorted(set(theirs) - set(mine))
            raise ArtifactMismatch(
                f"checkpoint registry mismatch (missing={missing}, extra={extra})"
            )
        for name in mine:
            val = other.get(name)
            if val.shape != self.get(name).shape:
                raise ArtifactMismatch(
                    f"checkpoint shape mismatch for {name!r}: "
                    f"{val.shape} vs {self.get(name).shape}"
                )
            self._values[name] = val.copy()
