"""OR-Set state over content-addressed tensor contributions.

A :class:`MergeState` holds add entries ``(hash, tag)``, a set of removed
tags, a version vector and a cached Merkle root of the visible set. The
tensors themselves live in a content store keyed by hash; merging unions the
stores by reference and never touches tensor payloads.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Iterable, Mapping

from .hashing import ZERO_HASH, Hash256, canonical_order, derive_seed, merkle_root
from .strategies import StrategySpec, apply_n
from .tensor import ShapeMismatchError, Tensor, TensorFormatError, decode_tensor

STATE_MAGIC = b"CMS1"
STATE_VERSION = 1


class StateError(ValueError):
    pass


class NotVisibleError(StateError):
    """Raised when removing a hash that has no live tag."""


class EmptyStateError(StateError):
    """Raised when resolving a state whose visible set is empty."""


class StateFormatError(StateError):
    """Raised for malformed, truncated or inconsistent CMS1 data."""


def check_node_id(node: str) -> str:
    if not isinstance(node, str) or not node or not node.isascii() or not node.isprintable() or len(node) > 255:
        raise ValueError(f"invalid node id {node!r}")
    return node


@dataclass(frozen=True, order=True)
class Tag:
    node: str
    counter: int

    def __str__(self) -> str:
        return f"{self.node}:{self.counter}"


@dataclass(frozen=True)
class Contribution:
    tensor: Tensor
    hash: Hash256


class Ordering(enum.Enum):
    EQUAL = "equal"
    LESS_EQUAL = "less-equal"
    GREATER_EQUAL = "greater-equal"
    CONCURRENT = "concurrent"


def vv_leq(v1: Mapping[str, int], v2: Mapping[str, int]) -> bool:
    return all(c <= v2.get(n, 0) for n, c in v1.items())


def vv_max(v1: Mapping[str, int], v2: Mapping[str, int]) -> dict[str, int]:
    out = dict(v1)
    for n, c in v2.items():
        if c > out.get(n, 0):
            out[n] = c
    return out


class MergeState:
    def __init__(self, owner: str):
        self.owner = check_node_id(owner)
        self.adds: set[tuple[Hash256, Tag]] = set()
        self.removes: set[Tag] = set()
        self.vv: dict[str, int] = {}
        self.store: dict[Hash256, Tensor] = {}
        self.root: Hash256 = ZERO_HASH

    # -- queries ---------------------------------------------------------

    def visible_hashes(self) -> frozenset[Hash256]:
        return frozenset(h for h, tag in self.adds if tag not in self.removes)

    def visible(self) -> list[Contribution]:
        """Visible contributions, deduplicated by content hash, in canonical order."""
        hs = self.visible_hashes()
        return [Contribution(self.store[h], h) for h in sorted(hs)]

    def tags_for(self, h: Hash256) -> set[Tag]:
        return {tag for hh, tag in self.adds if hh == h}

    def copy(self, owner: str | None = None) -> "MergeState":
        s = MergeState(owner or self.owner)
        s.adds = set(self.adds)
        s.removes = set(self.removes)
        s.vv = dict(self.vv)
        s.store = dict(self.store)
        s.root = self.root
        return s

    # -- mutation --------------------------------------------------------

    def _tick(self) -> int:
        c = self.vv.get(self.owner, 0) + 1
        self.vv[self.owner] = c
        return c

    def _refresh_root(self) -> None:
        hs = self.visible_hashes()
        self.root = merkle_root(canonical_order(hs)) if hs else ZERO_HASH

    def add(self, tensor: Tensor) -> Tag:
        h = tensor.content_hash()
        tag = Tag(self.owner, self._tick())
        self.adds.add((h, tag))
        self.store.setdefault(h, tensor)
        self._refresh_root()
        return tag

    def remove(self, h: Hash256) -> set[Tag]:
        """Tombstone every observed live tag of ``h``; return those tags."""
        live = {tag for tag in self.tags_for(h) if tag not in self.removes}
        if not live:
            raise NotVisibleError(f"{h.hex()} is not visible; nothing to remove")
        self.removes |= live
        self._tick()
        self._refresh_root()
        return live

    def merge_in(self, other: "MergeState") -> None:
        self.adds |= other.adds
        self.removes |= other.removes
        self.vv = vv_max(self.vv, other.vv)
        for h, t in other.store.items():
            self.store.setdefault(h, t)
        self._refresh_root()

    def merge(self, other: "MergeState") -> "MergeState":
        out = self.copy()
        out.merge_in(other)
        return out

    # -- comparison ------------------------------------------------------

    def leq(self, other: "MergeState") -> bool:
        return self.adds <= other.adds and self.removes <= other.removes and vv_leq(self.vv, other.vv)

    def _key(self):
        vv = {n: c for n, c in self.vv.items() if c}
        referenced = {h for h, _ in self.adds}
        return (self.adds, self.removes, vv, self.root, referenced)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MergeState):
            return NotImplemented
        return self._key() == other._key()

    __hash__ = None  # mutable

    def __repr__(self) -> str:
        return (
            f"MergeState(owner={self.owner!r}, adds={len(self.adds)}, removes={len(self.removes)}, "
            f"visible={len(self.visible_hashes())}, root={self.root.hex()[:12]})"
        )

    def debug_dict(self) -> dict:
        return {
            "owner": self.owner,
            "visible": [h.hex() for h in sorted(self.visible_hashes())],
            "adds": [[h.hex(), str(t)] for h, t in sorted(self.adds)],
            "removes": [str(t) for t in sorted(self.removes)],
            "vv": dict(sorted(self.vv.items())),
            "root": self.root.hex(),
        }


def state_new(owner: str) -> MergeState:
    return MergeState(owner)


def merge(s1: MergeState, s2: MergeState) -> MergeState:
    return s1.merge(s2)


def compare(s1: MergeState, s2: MergeState) -> Ordering:
    le, ge = s1.leq(s2), s2.leq(s1)
    if le and ge:
        return Ordering.EQUAL
    if le:
        return Ordering.LESS_EQUAL
    if ge:
        return Ordering.GREATER_EQUAL
    return Ordering.CONCURRENT


def resolve(s: MergeState, spec: StrategySpec) -> Tensor:
    """Apply ``spec`` to the canonically ordered visible set, seeded from the root."""
    spec.strategy  # unknown ids fail before any other check
    contributions = s.visible()
    if not contributions:
        raise EmptyStateError("cannot resolve an empty visible set")
    shape = contributions[0].tensor.shape
    if any(c.tensor.shape != shape for c in contributions):
        raise ShapeMismatchError("visible contributions have heterogeneous shapes")
    return apply_n(spec, [c.tensor for c in contributions], derive_seed(s.root))


def join_all(states: Iterable[MergeState], owner: str = "join") -> MergeState:
    out = MergeState(owner)
    for s in states:
        out.merge_in(s)
    return out


# -- CMS1 container ------------------------------------------------------------
#
#   b"CMS1" | u16 version | str owner
#   u32 n_adds    | (hash[32] | str node | u64 counter) * n_adds
#   u32 n_removes | (str node | u64 counter) * n_removes
#   u32 n_vv      | (str node | u64 counter) * n_vv
#   u32 n_store   | (hash[32] | u64 length | CMT1 tensor) * n_store
#
# Little-endian throughout; ``str`` is u16 length + ASCII bytes. Every section
# is written in sorted order so equal states serialise to equal bytes.

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def _put_str(out: list[bytes], s: str) -> None:
    raw = s.encode("ascii")
    out.append(_U16.pack(len(raw)))
    out.append(raw)


def state_serialize(s: MergeState) -> bytes:
    out: list[bytes] = [STATE_MAGIC, _U16.pack(STATE_VERSION)]
    _put_str(out, s.owner)
    adds = sorted(s.adds)
    out.append(_U32.pack(len(adds)))
    for h, tag in adds:
        out.append(h.digest)
        _put_str(out, tag.node)
        out.append(_U64.pack(tag.counter))
    removes = sorted(s.removes)
    out.append(_U32.pack(len(removes)))
    for tag in removes:
        _put_str(out, tag.node)
        out.append(_U64.pack(tag.counter))
    vv = sorted(s.vv.items())
    out.append(_U32.pack(len(vv)))
    for node, c in vv:
        _put_str(out, node)
        out.append(_U64.pack(c))
    store = sorted(s.store.items(), key=lambda kv: kv[0])
    out.append(_U32.pack(len(store)))
    for h, t in store:
        raw = t.canonical_bytes()
        out.append(h.digest)
        out.append(_U64.pack(len(raw)))
        out.append(raw)
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise StateFormatError("truncated state container")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return _U16.unpack(self.take(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def text(self) -> str:
        raw = self.take(self.u16())
        try:
            return check_node_id(raw.decode("ascii"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise StateFormatError(f"bad node id {raw!r}") from exc


def state_deserialize(buf: bytes) -> MergeState:
    r = _Reader(buf)
    if r.take(4) != STATE_MAGIC:
        raise StateFormatError("not a CMS1 container")
    version = r.u16()
    if version != STATE_VERSION:
        raise StateFormatError(f"unsupported CMS1 version {version}")
    s = MergeState(r.text())
    for _ in range(r.u32()):
        h = Hash256(r.take(32))
        s.adds.add((h, Tag(r.text(), r.u64())))
    for _ in range(r.u32()):
        s.removes.add(Tag(r.text(), r.u64()))
    for _ in range(r.u32()):
        node = r.text()
        s.vv[node] = r.u64()
    for _ in range(r.u32()):
        h = Hash256(r.take(32))
        length = r.u64()
        raw = r.take(length)
        try:
            t, end = decode_tensor(raw, 0)
        except TensorFormatError as exc:
            raise StateFormatError(f"bad tensor for {h.hex()}: {exc}") from exc
        if end != length:
            raise StateFormatError("tensor record has trailing bytes")
        if t.content_hash() != h:
            raise StateFormatError(f"content hash mismatch for {h.hex()}")
        s.store[h] = t
    if r.pos != len(buf):
        raise StateFormatError(f"{len(buf) - r.pos} trailing bytes")
    missing = {h for h, _ in s.adds} - s.store.keys()
    if missing:
        raise StateFormatError(f"{len(missing)} added hashes missing from the content store")
    if not s.removes <= {tag for _, tag in s.adds}:
        raise StateFormatError("removed tag never added")
    s._refresh_root()
    return s
