"""Content hashes, canonical ordering, Merkle roots and seed derivation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

from .tensor import Tensor


@dataclass(frozen=True, order=True)
class Hash256:
    """A 32-byte SHA-256 digest.

    Byte-wise ordering of equal-length digests is the same as ordering them
    as big-endian unsigned integers, so the dataclass ordering is the
    canonical total order.
    """

    digest: bytes

    def __post_init__(self):
        if not isinstance(self.digest, bytes) or len(self.digest) != 32:
            raise ValueError("Hash256 requires exactly 32 bytes")

    @classmethod
    def from_hex(cls, text: str) -> "Hash256":
        return cls(bytes.fromhex(text))

    @classmethod
    def from_int(cls, value: int) -> "Hash256":
        return cls(value.to_bytes(32, "big"))

    def hex(self) -> str:
        return self.digest.hex()

    def __int__(self) -> int:
        return int.from_bytes(self.digest, "big")

    def __str__(self) -> str:
        return self.hex()

    def __repr__(self) -> str:
        return f"Hash256({self.hex()[:16]}…)"


ZERO_HASH = Hash256(bytes(32))


def sha256(data: bytes) -> Hash256:
    return Hash256(hashlib.sha256(data).digest())


def content_hash(t: Tensor) -> Hash256:
    return sha256(t.canonical_bytes())


def canonical_order(hashes: Iterable[Hash256]) -> list[Hash256]:
    ordered = sorted(set(hashes))
    if not ordered:
        raise ValueError("canonical_order needs at least one hash")
    return ordered


def merkle_root(ordered_leaves: Sequence[Hash256]) -> Hash256:
    """Root of a binary Merkle tree built level by level.

    An unpaired node at the end of a level is promoted unchanged.
    """
    if not ordered_leaves:
        raise ValueError("merkle_root needs at least one leaf")
    level = [h.digest for h in ordered_leaves]
    while len(level) > 1:
        nxt = [hashlib.sha256(level[i] + level[i + 1]).digest() for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return Hash256(level[0])


def derive_seed(root: Hash256) -> int:
    """First 8 digest bytes as a big-endian unsigned 64-bit integer."""
    return int.from_bytes(root.digest[:8], "big")


def sub_seed(seed: int, step: int) -> int:
    """Per-step seed for folds: SHA-256(seed as 8 BE bytes ++ step as 8 BE bytes), truncated."""
    digest = hashlib.sha256(seed.to_bytes(8, "big") + step.to_bytes(8, "big")).digest()
    return int.from_bytes(digest[:8], "big")
