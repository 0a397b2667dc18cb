"""Immutable float64 tensors with a bit-exact canonical byte encoding.

Layout of the ``CMT1`` encoding (all integers little-endian)::

    b"CMT1" | u32 rank | u64 dim * rank | f64 value * prod(shape)

Values are written as their IEEE-754 bit patterns in row-major order, so
``0.0`` and ``-0.0`` encode differently even though they compare equal.
"""

from __future__ import annotations

import struct
import threading
from contextlib import contextmanager
from math import prod
from typing import Iterable, Iterator, Sequence

import numpy as np

MAGIC = b"CMT1"
_HEADER = struct.Struct("<4sI")
_DIM = struct.Struct("<Q")


class TensorError(ValueError):
    """Base class for tensor construction and comparison errors."""


class LengthMismatchError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


class ShapeMismatchError(TensorError):
    pass


class TensorFormatError(TensorError):
    """Raised when CMT1 bytes are malformed."""


# Counts accesses to tensor payloads. Merge-path code is expected to leave
# this untouched; the simulator and tests read it around merge calls.
class _PayloadCounter(threading.local):
    reads = 0


_counter = _PayloadCounter()


def payload_reads() -> int:
    return _counter.reads


@contextmanager
def track_payload_reads() -> Iterator[list[int]]:
    """Yield a one-element list that receives the reads made inside the block."""
    box = [0]
    start = _counter.reads
    try:
        yield box
    finally:
        box[0] = _counter.reads - start


class Tensor:
    """A dense, immutable float64 array.

    Construct from a shape and flat row-major data, or with :meth:`from_array`.
    """

    __slots__ = ("_shape", "_array", "_hash")

    def __init__(self, shape: Sequence[int], data: Iterable[float]):
        shape = tuple(int(d) for d in shape)
        if not shape or any(d <= 0 for d in shape):
            raise LengthMismatchError(f"shape must be a non-empty list of positive sizes, got {shape}")
        flat = np.array(list(data) if not isinstance(data, np.ndarray) else data, dtype=np.float64).ravel()
        if flat.size != prod(shape):
            raise LengthMismatchError(f"data length {flat.size} does not match shape {shape}")
        if not np.all(np.isfinite(flat)):
            raise NonFiniteError("tensor values must be finite")
        arr = flat.reshape(shape).copy()
        arr.flags.writeable = False
        self._shape = shape
        self._array = arr
        self._hash = None

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr.shape, arr.ravel())

    @property
    def shape(self) -> tuple[int, ...]:
        return self._shape

    @property
    def size(self) -> int:
        return self._array.size

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the payload. Counted as a payload read."""
        _counter.reads += 1
        return self._array

    def to_list(self) -> list[float]:
        return self.array.ravel().tolist()

    def canonical_bytes(self) -> bytes:
        _counter.reads += 1
        head = _HEADER.pack(MAGIC, len(self._shape)) + b"".join(_DIM.pack(d) for d in self._shape)
        return head + self._array.astype("<f8", copy=False).tobytes(order="C")

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Tensor":
        t, end = decode_tensor(buf, 0)
        if end != len(buf):
            raise TensorFormatError(f"{len(buf) - end} trailing bytes after tensor")
        return t

    def content_hash(self):
        # cached; the payload is immutable
        if self._hash is None:
            from .hashing import content_hash

            self._hash = content_hash(self)
        return self._hash

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self._shape == other._shape and self._array.tobytes() == other._array.tobytes()

    def __hash__(self) -> int:
        return hash((self._shape, self._array.tobytes()))

    def __repr__(self) -> str:
        body = np.array2string(self._array, precision=6, threshold=32)
        return f"Tensor(shape={self._shape}, data={body})"


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Decode one CMT1 tensor starting at ``offset``; return it and the end offset."""
    try:
        magic, rank = _HEADER.unpack_from(buf, offset)
    except struct.error as exc:
        raise TensorFormatError("truncated tensor header") from exc
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    if rank == 0:
        raise TensorFormatError("rank must be positive")
    pos = offset + _HEADER.size
    if len(buf) < pos + rank * _DIM.size:
        raise TensorFormatError("truncated tensor dimensions")
    shape = [_DIM.unpack_from(buf, pos + i * _DIM.size)[0] for i in range(rank)]
    pos += rank * _DIM.size
    if any(d == 0 for d in shape):
        raise TensorFormatError("zero-sized dimension")
    nbytes = prod(shape) * 8
    if len(buf) < pos + nbytes:
        raise TensorFormatError("truncated tensor payload")
    data = np.frombuffer(buf, dtype="<f8", count=prod(shape), offset=pos)
    try:
        t = Tensor(shape, data.astype(np.float64))
    except TensorError as exc:
        raise TensorFormatError(str(exc)) from exc
    return t, pos + nbytes


def tensor_new(shape: Sequence[int], data: Iterable[float]) -> Tensor:
    return Tensor(shape, data)


def canonical_bytes(t: Tensor) -> bytes:
    return t.canonical_bytes()


def _check_shapes(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")


def max_abs_diff(a: Tensor, b: Tensor) -> float:
    """Largest elementwise |a - b|. Signed zeros compare equal here."""
    _check_shapes(a, b)
    return float(np.max(np.abs(a.array - b.array)))


def allclose(a: Tensor, b: Tensor, atol: float) -> bool:
    if not atol > 0:
        raise ValueError("atol must be positive")
    return max_abs_diff(a, b) <= atol
