"""Merge-strategy kernels and the registry that maps ids to them.

Kernels are pure functions of ``(ordered arrays, seed, params)``. Stochastic
kernels draw only from :class:`~crdtmerge.rng.SplitMix64` seeded with the
given seed, never from global state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .hashing import sub_seed
from .rng import EntropySource, SplitMix64, system_entropy
from .tensor import ShapeMismatchError, Tensor

N_ARY = "n_ary"
BINARY_FOLD = "binary_fold"

FISHER_EPS = 1e-12
SLERP_ANGLE_EPS = 1e-7


class UnknownStrategyError(KeyError):
    def __str__(self) -> str:
        return f"unknown strategy {self.args[0]!r}"


class InvalidParamsError(ValueError):
    pass


@dataclass(frozen=True)
class StrategyParams:
    lam: float = 1.0
    base: Optional[Tensor] = None
    t: float = 0.5
    drop_p: float = 0.5
    keep_frac: float = 0.8
    linear_w: float = 0.5
    outlier_frac: float = 0.1
    pop_size: int = 16
    generations: int = 8

    def validate(self) -> None:
        if not math.isfinite(self.lam):
            raise InvalidParamsError("lambda must be finite")
        if not 0.0 < self.t < 1.0:
            raise InvalidParamsError("t must lie in (0, 1)")
        if not 0.0 <= self.drop_p < 1.0:
            raise InvalidParamsError("drop_p must lie in [0, 1)")
        if not 0.0 < self.keep_frac <= 1.0:
            raise InvalidParamsError("keep_frac must lie in (0, 1]")
        if not 0.0 <= self.linear_w <= 1.0:
            raise InvalidParamsError("linear_w must lie in [0, 1]")
        if not 0.0 <= self.outlier_frac < 1.0:
            raise InvalidParamsError("outlier_frac must lie in [0, 1)")
        if self.pop_size < 1 or self.generations < 1:
            raise InvalidParamsError("pop_size and generations must be positive")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "base"}
        out["base"] = None if self.base is None else "tensor"
        return out


NAryKernel = Callable[[Sequence[np.ndarray], int, StrategyParams], np.ndarray]
PairKernel = Callable[[np.ndarray, np.ndarray, int, StrategyParams], np.ndarray]


@dataclass(frozen=True)
class Strategy:
    name: str
    arity: str
    n_ary: Optional[NAryKernel] = None
    pair: Optional[PairKernel] = None
    stochastic: bool = False

    def __post_init__(self):
        if self.arity not in (N_ARY, BINARY_FOLD):
            raise ValueError(f"bad arity {self.arity!r}")
        if self.arity == N_ARY and self.n_ary is None:
            raise ValueError("n_ary strategies need an n_ary kernel")
        if self.arity == BINARY_FOLD and self.pair is None:
            raise ValueError("binary_fold strategies need a pair kernel")


@dataclass(frozen=True)
class StrategySpec:
    id: str
    params: StrategyParams = field(default_factory=StrategyParams)

    @property
    def strategy(self) -> Strategy:
        return get_strategy(self.id)

    @property
    def arity(self) -> str:
        return self.strategy.arity

    def with_params(self, **kw) -> "StrategySpec":
        return StrategySpec(self.id, replace(self.params, **kw))


# -- helpers -----------------------------------------------------------------

def _ordered_sum(arrays: Sequence[np.ndarray]) -> np.ndarray:
    acc = np.array(arrays[0], dtype=np.float64, copy=True)
    for x in arrays[1:]:
        acc += x
    return acc


def _mean(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return _ordered_sum(arrays) / len(arrays)


def _base(arrays: Sequence[np.ndarray], params: StrategyParams) -> np.ndarray:
    if params.base is None:
        return np.zeros_like(arrays[0])
    base = params.base.array
    if base.shape != arrays[0].shape:
        raise ShapeMismatchError(f"base shape {base.shape} does not match {arrays[0].shape}")
    return base


def _keep_count(frac: float, p: int) -> int:
    # floor with a guard against 0.8 * 3 == 2.4000000000000004 style noise
    return max(1, int(math.floor(frac * p + 1e-9)))


def _magnitude_rank(x: np.ndarray) -> np.ndarray:
    """Flat indices sorted by descending magnitude, lowest index first on ties."""
    flat = x.ravel()
    return np.lexsort((np.arange(flat.size), -np.abs(flat)))


def trim_top(x: np.ndarray, keep_frac: float) -> np.ndarray:
    """Zero all but the largest-magnitude ``floor(keep_frac * p)`` entries."""
    flat = x.ravel()
    keep = _magnitude_rank(x)[: _keep_count(keep_frac, flat.size)]
    out = np.zeros_like(flat)
    out[keep] = flat[keep]
    return out.reshape(x.shape)


def _ties_combine(taus: Sequence[np.ndarray], keep_frac: float) -> np.ndarray:
    trimmed = [trim_top(t, keep_frac) for t in taus]
    signs = [np.sign(t) for t in trimmed]
    elected = np.sign(_ordered_sum(signs))
    agreed = [np.where((s == elected) & (elected != 0), t, 0.0) for s, t in zip(signs, trimmed)]
    # disagreeing and trimmed entries count as zeros in the average
    return _ordered_sum(agreed) / len(taus)


def dare_masks(seed: int, k: int, shape: tuple[int, ...], drop_p: float) -> list[np.ndarray]:
    """Keep-masks used by DARE for ``k`` inputs, drawn in input order."""
    rng = SplitMix64(seed)
    p = int(np.prod(shape))
    return [rng.bernoulli_array(p, 1.0 - drop_p).reshape(shape) for _ in range(k)]


def _dare_taus(arrays, seed, params) -> tuple[np.ndarray, list[np.ndarray]]:
    base = _base(arrays, params)
    masks = dare_masks(seed, len(arrays), arrays[0].shape, params.drop_p)
    scale = 1.0 / (1.0 - params.drop_p)
    return base, [np.where(m, (x - base) * scale, 0.0) for m, x in zip(masks, arrays)]


# -- kernels -----------------------------------------------------------------

def k_weight_average(arrays, seed, params):
    return _mean(arrays)


def k_linear_pair(a, b, seed, params):
    w = params.linear_w
    return (1.0 - w) * a + w * b


def k_task_arithmetic(arrays, seed, params):
    base = _base(arrays, params)
    return base + params.lam * _ordered_sum([x - base for x in arrays])


def k_ties(arrays, seed, params):
    base = _base(arrays, params)
    return base + _ties_combine([x - base for x in arrays], params.keep_frac)


def k_dare(arrays, seed, params):
    base, taus = _dare_taus(arrays, seed, params)
    return base + _mean(taus)


def k_dare_ties(arrays, seed, params):
    base, taus = _dare_taus(arrays, seed, params)
    return base + _ties_combine(taus, params.keep_frac)


def slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Great-circle interpolation of directions with linearly interpolated norm.

    Falls back to plain linear interpolation when either input is zero or the
    angle between them is within ``SLERP_ANGLE_EPS`` of 0 or pi.
    """
    fa, fb = a.ravel(), b.ravel()
    na, nb = np.sqrt(np.dot(fa, fa)), np.sqrt(np.dot(fb, fb))
    if na == 0.0 or nb == 0.0:
        return (1.0 - t) * a + t * b
    ua, ub = fa / na, fb / nb
    omega = math.acos(min(1.0, max(-1.0, float(np.dot(ua, ub)))))
    if omega < SLERP_ANGLE_EPS or omega > math.pi - SLERP_ANGLE_EPS:
        return (1.0 - t) * a + t * b
    s = math.sin(omega)
    direction = (math.sin((1.0 - t) * omega) / s) * ua + (math.sin(t * omega) / s) * ub
    norm = (1.0 - t) * na + t * nb
    return (direction * norm).reshape(a.shape)


def k_slerp_pair(a, b, seed, params):
    return slerp(a, b, params.t)


def k_fisher_merge(arrays, seed, params):
    fishers = [x * x + FISHER_EPS for x in arrays]
    num = _ordered_sum([f * x for f, x in zip(fishers, arrays)])
    return num / _ordered_sum(fishers)


def breadcrumb_mask(x: np.ndarray, keep_frac: float, outlier_frac: float) -> np.ndarray:
    """Drop the smallest entries and the top ``outlier_frac`` by magnitude."""
    flat = x.ravel()
    rank = _magnitude_rank(x)
    n_top = int(math.floor(outlier_frac * flat.size + 1e-9))
    keep = rank[n_top:_keep_count(keep_frac, flat.size)]
    out = np.zeros_like(flat)
    out[keep] = flat[keep]
    return out.reshape(x.shape)


def k_model_breadcrumbs(arrays, seed, params):
    base = _base(arrays, params)
    masked = [breadcrumb_mask(x - base, params.keep_frac, params.outlier_frac) for x in arrays]
    return base + _mean(masked)


def k_evolutionary_merge(arrays, seed, params):
    """Seeded population search over per-input merge coefficients.

    Candidates are unnormalised non-negative weight vectors; a candidate's
    merge is ``sum(w_i * theta_i)`` and its fitness is the negative L2
    distance to the elementwise median of the inputs. The best candidate is
    kept across generations and mutated with shrinking uniform noise.
    """
    k = len(arrays)
    if k == 1:
        return np.array(arrays[0], copy=True)
    rng = SplitMix64(seed)
    target = np.median(np.stack(arrays), axis=0)

    def score(w):
        cand = _ordered_sum([wi * x for wi, x in zip(w, arrays)])
        d = (cand - target).ravel()
        return -math.sqrt(float(np.sum(d * d)))

    pop = rng.uniform_array(params.pop_size * k).reshape(params.pop_size, k) * (2.0 / k)
    best_w, best_f = None, -math.inf
    for gen in range(params.generations):
        for w in pop:
            f = score(w)
            if f > best_f:
                best_w, best_f = w.copy(), f
        sigma = (0.5 / k) * 0.5**gen
        noise = (rng.uniform_array((params.pop_size - 1) * k).reshape(-1, k) * 2.0 - 1.0) * sigma
        pop = np.vstack([best_w[None, :], np.maximum(best_w + noise, 0.0)])
    return _ordered_sum([wi * x for wi, x in zip(best_w, arrays)])


# -- registry ----------------------------------------------------------------

REGISTRY: dict[str, Strategy] = {}


def register(strategy: Strategy, *, replace_existing: bool = False) -> Strategy:
    """Add a kernel to the registry. Kernels must be pure in (inputs, seed, params)."""
    if strategy.name in REGISTRY and not replace_existing:
        raise ValueError(f"strategy {strategy.name!r} already registered")
    REGISTRY[strategy.name] = strategy
    return strategy


def unregister(name: str) -> None:
    REGISTRY.pop(name, None)


def get_strategy(name: str) -> Strategy:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownStrategyError(name) from None


def strategy_ids() -> list[str]:
    return list(REGISTRY)


for _s in (
    Strategy("weight_average", N_ARY, n_ary=k_weight_average),
    Strategy("linear", N_ARY, n_ary=k_weight_average, pair=k_linear_pair),
    Strategy("task_arithmetic", N_ARY, n_ary=k_task_arithmetic),
    Strategy("ties", N_ARY, n_ary=k_ties),
    Strategy("dare", N_ARY, n_ary=k_dare, stochastic=True),
    Strategy("dare_ties", N_ARY, n_ary=k_dare_ties, stochastic=True),
    Strategy("slerp", BINARY_FOLD, pair=k_slerp_pair),
    Strategy("fisher_merge", N_ARY, n_ary=k_fisher_merge),
    Strategy("model_breadcrumbs", N_ARY, n_ary=k_model_breadcrumbs),
    Strategy("evolutionary_merge", N_ARY, n_ary=k_evolutionary_merge, stochastic=True),
):
    register(_s)

BUILTIN_STRATEGIES = tuple(REGISTRY)


# -- application -------------------------------------------------------------

def _arrays(ordered: Sequence[Tensor]) -> list[np.ndarray]:
    if not ordered:
        raise ValueError("strategies need at least one contribution")
    shape = ordered[0].shape
    for t in ordered[1:]:
        if t.shape != shape:
            raise ShapeMismatchError(f"heterogeneous shapes: {shape} vs {t.shape}")
    return [t.array for t in ordered]


def _pair_fn(strategy: Strategy) -> PairKernel:
    if strategy.pair is not None:
        return strategy.pair
    return lambda a, b, seed, params: strategy.n_ary([a, b], seed, params)


def _fold(strategy: Strategy, arrays: list[np.ndarray], seed: int, params: StrategyParams) -> np.ndarray:
    pair = _pair_fn(strategy)
    acc = arrays[0]
    for step, x in enumerate(arrays[1:]):
        acc = pair(acc, x, sub_seed(seed, step), params)
    return np.array(acc, copy=True)


def apply_fold(spec: StrategySpec, ordered: Sequence[Tensor], seed: int) -> Tensor:
    """Left fold of the binary form over ``ordered``.

    Step ``i`` (0-based, combining the accumulator with element ``i + 1``)
    receives ``sub_seed(seed, i)``.
    """
    spec.params.validate()
    return Tensor.from_array(_fold(spec.strategy, _arrays(ordered), seed, spec.params))


def apply_n(spec: StrategySpec, ordered: Sequence[Tensor], seed: int) -> Tensor:
    """Apply ``spec`` to contributions already in canonical order."""
    strategy = spec.strategy
    spec.params.validate()
    arrays = _arrays(ordered)
    if strategy.arity == BINARY_FOLD:
        out = _fold(strategy, arrays, seed, spec.params)
    else:
        out = strategy.n_ary(arrays, seed, spec.params)
    return Tensor.from_array(out)


def apply_pair_raw(
    spec: StrategySpec,
    a: Tensor,
    b: Tensor,
    seed: Optional[int] = None,
    entropy: EntropySource = system_entropy,
) -> Tensor:
    """The strategy's binary form ``f(a, b)``.

    With ``seed=None`` the call is unseeded: a fresh seed is drawn from
    ``entropy`` for every call, so stochastic kernels differ between calls.
    """
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    strategy = spec.strategy
    spec.params.validate()
    s = entropy() if seed is None else seed
    return Tensor.from_array(_pair_fn(strategy)(a.array, b.array, s, spec.params))
