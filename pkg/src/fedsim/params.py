"""Flat parameter vectors and the FLSIM1 checkpoint format.

Every model in this package stores its weights as one flat float64 array plus
a layout describing how the array unpacks into named tensors.  Keeping the
weights flat makes aggregation rules, norm bounds, and attack algebra one-line
numpy expressions.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"FLSIM1"


class FormatError(ValueError):
    """Malformed checkpoint bytes; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _normalize_layout(layout):
    return tuple((str(name), tuple(int(d) for d in dims)) for name, dims in layout)


def layout_size(layout) -> int:
    total = 0
    for _, dims in layout:
        n = 1
        for d in dims:
            n *= int(d)
        total += n
    return total


@dataclass
class ParameterVector:
    """A flat float64 weight vector plus the (name, shape) layout it unpacks to.

    Vectors with identical layouts support +, - and scalar multiplication;
    mixing layouts raises ValueError.
    """

    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        self.layout = _normalize_layout(self.layout)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        expected = layout_size(self.layout)
        if self.values.size != expected:
            raise ValueError(
                f"values has {self.values.size} entries, layout expects {expected}"
            )

    def __len__(self) -> int:
        return self.values.size

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def unpack(self) -> dict:
        """Reshaped views into the flat storage, keyed by layout name."""
        out = {}
        offset = 0
        for name, dims in self.layout:
            n = 1
            for d in dims:
                n *= d
            out[name] = self.values[offset:offset + n].reshape(dims)
            offset += n
        return out

    def _require_same_layout(self, other: "ParameterVector"):
        if self.layout != other.layout:
            raise ValueError("parameter layouts differ")

    def __add__(self, other: "ParameterVector") -> "ParameterVector":
        self._require_same_layout(other)
        return ParameterVector(self.values + other.values, self.layout)

    def __sub__(self, other: "ParameterVector") -> "ParameterVector":
        self._require_same_layout(other)
        return ParameterVector(self.values - other.values, self.layout)

    def __mul__(self, scalar) -> "ParameterVector":
        return ParameterVector(self.values * float(scalar), self.layout)

    __rmul__ = __mul__

    def __neg__(self) -> "ParameterVector":
        return ParameterVector(-self.values, self.layout)


def zeros(layout) -> ParameterVector:
    return ParameterVector(np.zeros(layout_size(layout)), layout)


def save_params(params: ParameterVector, path) -> None:
    """Write a checkpoint: magic, layout table, then raw little-endian float64."""
    parts = [MAGIC, struct.pack("<I", len(params.layout))]
    for name, dims in params.layout:
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", len(dims)))
        if dims:
            parts.append(struct.pack(f"<{len(dims)}I", *dims))
    parts.append(np.ascontiguousarray(params.values, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def _read_u32(data: bytes, offset: int) -> tuple[int, int]:
    if offset + 4 > len(data):
        raise FormatError("truncated while reading a length field", offset)
    return struct.unpack_from("<I", data, offset)[0], offset + 4


def load_params(path) -> ParameterVector:
    """Read a checkpoint written by save_params, validating every field."""
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError("bad magic", 0)
    offset = len(MAGIC)
    n_entries, offset = _read_u32(data, offset)
    layout = []
    for _ in range(n_entries):
        name_len, offset = _read_u32(data, offset)
        if offset + name_len > len(data):
            raise FormatError("truncated entry name", offset)
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        n_dims, offset = _read_u32(data, offset)
        dims = []
        for _ in range(n_dims):
            d, offset = _read_u32(data, offset)
            dims.append(d)
        layout.append((name, tuple(dims)))
    count = layout_size(layout)
    end = offset + 8 * count
    if end > len(data):
        raise FormatError(f"truncated values, expected {count} float64", offset)
    if end != len(data):
        raise FormatError("trailing bytes after values", end)
    values = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
    return ParameterVector(values.astype(np.float64), tuple(layout))
