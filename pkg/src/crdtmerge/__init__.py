"""Conflict-free model merging over an OR-Set of content-addressed tensors."""

from .hashing import Hash256, canonical_order, content_hash, derive_seed, merkle_root
from .rng import SplitMix64, seeded_rng
from .state import MergeState, Ordering, Tag, compare, merge, resolve, state_deserialize, state_new, state_serialize
from .strategies import StrategyParams, StrategySpec, apply_fold, apply_n, apply_pair_raw, register
from .tensor import Tensor, allclose, canonical_bytes, max_abs_diff, tensor_new

__version__ = "0.1.0"

__all__ = [
    "Hash256", "MergeState", "Ordering", "SplitMix64", "StrategyParams", "StrategySpec", "Tag", "Tensor",
    "allclose", "apply_fold", "apply_n", "apply_pair_raw", "canonical_bytes", "canonical_order", "compare",
    "content_hash", "derive_seed", "max_abs_diff", "merge", "merkle_root", "register", "resolve",
    "seeded_rng", "state_deserialize", "state_new", "state_serialize", "tensor_new",
]
