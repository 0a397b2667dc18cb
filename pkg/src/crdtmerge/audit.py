"""Algebraic property audits of merge strategies.

Phase 1 checks commutativity, associativity and idempotency of each
strategy's raw binary form. Phase 2 checks the same laws plus 3-replica
convergence when contributions go through :class:`MergeState` and
:func:`resolve`, where every comparison must be bitwise.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .rng import EntropySource, SplitMix64, system_entropy
from .state import MergeState, resolve
from .strategies import BUILTIN_STRATEGIES, StrategySpec, apply_pair_raw, get_strategy
from .tensor import Tensor, max_abs_diff

Triple = tuple[Tensor, Tensor, Tensor]

# Counterexample triples from the normalisation/associativity argument, used
# as extra associativity trials for the strategies they were built for.
SLERP_BASIS = tuple(Tensor([3], v) for v in ([1, 0, 0], [0, 1, 0], [0, 0, 1]))
TIES_TRIPLE = (
    Tensor([3], [10, 1, 0.1]),
    Tensor([3], [0.1, 10, 1]),
    Tensor([3], [1, 0.1, 10]),
)
COUNTEREXAMPLES = {"slerp": [SLERP_BASIS], "ties": [TIES_TRIPLE]}


@dataclass
class AuditConfig:
    shape: tuple[int, ...] = (4, 4)
    seed: int = 42
    atol: float = 1e-5
    trials: int = 20
    strategies: Sequence[Union[str, StrategySpec]] = BUILTIN_STRATEGIES
    repetitions: int = 5

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if not self.atol > 0:
            raise ValueError("atol must be positive")
        self.shape = tuple(self.shape)

    def specs(self) -> list[StrategySpec]:
        out = []
        for s in self.strategies:
            spec = s if isinstance(s, StrategySpec) else StrategySpec(s)
            get_strategy(spec.id)
            out.append(spec)
        return out


@dataclass
class PropertyVerdict:
    strategy: str
    commutativity: bool
    associativity: bool
    idempotency: bool
    convergence: Optional[bool]
    trials: int
    max_violation: float
    atol: float
    violations: dict[str, float] = field(default_factory=dict)
    stable: Optional[bool] = None

    @property
    def crdt(self) -> bool:
        laws = self.commutativity and self.associativity and self.idempotency
        return laws and self.convergence is not False

    def row(self) -> dict[str, Optional[bool]]:
        return {
            "C": self.commutativity,
            "A": self.associativity,
            "I": self.idempotency,
            "Conv": self.convergence,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crdt"] = self.crdt
        return d


def random_triples(shape: tuple[int, ...], seed: int, n: int) -> list[Triple]:
    rng = SplitMix64(seed)
    size = int(np.prod(shape))
    return [
        tuple(Tensor(shape, rng.normal_array(size)) for _ in range(3))  # type: ignore[misc]
        for _ in range(n)
    ]


# -- raw checks ----------------------------------------------------------------

def _f(spec, seed, entropy):
    return lambda x, y: apply_pair_raw(spec, x, y, seed=seed, entropy=entropy)


def check_commutativity(spec, a, b, atol, seed=None, entropy: EntropySource = system_entropy):
    f = _f(spec, seed, entropy)
    v = max_abs_diff(f(a, b), f(b, a))
    return v <= atol, v


def check_associativity(spec, a, b, c, atol, seed=None, entropy: EntropySource = system_entropy):
    f = _f(spec, seed, entropy)
    v = max_abs_diff(f(f(a, b), c), f(a, f(b, c)))
    return v <= atol, v


def check_idempotency(spec, a, atol, seed=None, entropy: EntropySource = system_entropy):
    f = _f(spec, seed, entropy)
    v = max_abs_diff(f(a, a), a)
    return v <= atol, v


def _phase1_once(spec, triples, extra, atol, entropy):
    worst = {"commutativity": 0.0, "associativity": 0.0, "idempotency": 0.0}
    ok = dict.fromkeys(worst, True)

    def note(prop, result):
        passed, v = result
        ok[prop] &= passed
        worst[prop] = max(worst[prop], v)

    for a, b, c in triples:
        note("commutativity", check_commutativity(spec, a, b, atol, entropy=entropy))
        note("associativity", check_associativity(spec, a, b, c, atol, entropy=entropy))
        note("idempotency", check_idempotency(spec, a, atol, entropy=entropy))
    for a, b, c in extra:
        note("associativity", check_associativity(spec, a, b, c, atol, entropy=entropy))
    return ok, worst


def run_phase1(cfg: AuditConfig, entropy: EntropySource = system_entropy) -> list[PropertyVerdict]:
    """Raw-operation audit. Stochastic kernels run unseeded and are repeated."""
    triples = random_triples(cfg.shape, cfg.seed, cfg.trials)
    verdicts = []
    for spec in cfg.specs():
        extra = COUNTEREXAMPLES.get(spec.id, [])
        reps = cfg.repetitions if spec.strategy.stochastic else 1
        runs = [_phase1_once(spec, triples, extra, cfg.atol, entropy) for _ in range(max(1, reps))]
        ok, worst = runs[0]
        verdicts.append(
            PropertyVerdict(
                strategy=spec.id,
                commutativity=ok["commutativity"],
                associativity=ok["associativity"],
                idempotency=ok["idempotency"],
                convergence=None,
                trials=len(triples) + len(extra),
                max_violation=max(worst.values()),
                atol=cfg.atol,
                violations=worst,
                stable=all(r[0] == ok for r in runs) if reps > 1 else None,
            )
        )
    return verdicts


# -- state-level checks --------------------------------------------------------

def _single(node: str, t: Tensor) -> MergeState:
    s = MergeState(node)
    s.add(t)
    return s


def _same_output(x: Tensor, y: Tensor) -> tuple[bool, float]:
    v = max_abs_diff(x, y)
    return x.canonical_bytes() == y.canonical_bytes(), v


def check_replica_convergence(spec: StrategySpec, contributions: Sequence[Tensor], atol: float = 0.0):
    """Merge three single-add replicas in all six orders; outputs must be bitwise equal.

    ``atol`` is kept for reporting symmetry only; the check itself is exact.
    """
    if len(contributions) != 3:
        raise ValueError("replica convergence needs exactly 3 contributions")
    replicas = [_single(f"r{i + 1}", t) for i, t in enumerate(contributions)]
    outputs = []
    for perm in itertools.permutations(range(3)):
        s = replicas[perm[0]].copy()
        for i in perm[1:]:
            s.merge_in(replicas[i])
        outputs.append(resolve(s, spec))
    ok, worst = True, 0.0
    for out in outputs[1:]:
        same, v = _same_output(outputs[0], out)
        ok &= same
        worst = max(worst, v)
    return ok, worst


def _state_law(lhs: MergeState, rhs: MergeState, spec: StrategySpec) -> tuple[bool, float]:
    same, v = _same_output(resolve(lhs, spec), resolve(rhs, spec))
    return same and lhs == rhs, v


def run_phase2(cfg: AuditConfig) -> list[PropertyVerdict]:
    triples = random_triples(cfg.shape, cfg.seed, cfg.trials)
    verdicts = []
    for spec in cfg.specs():
        worst = {"commutativity": 0.0, "associativity": 0.0, "idempotency": 0.0, "convergence": 0.0}
        ok = dict.fromkeys(worst, True)

        def note(prop, result):
            passed, v = result
            ok[prop] &= passed
            worst[prop] = max(worst[prop], v)

        for a, b, c in triples:
            s1, s2, s3 = _single("n1", a), _single("n2", b), _single("n3", c)
            note("commutativity", _state_law(s1.merge(s2), s2.merge(s1), spec))
            note("associativity", _state_law(s1.merge(s2).merge(s3), s1.merge(s2.merge(s3)), spec))
            note("idempotency", _state_law(s1.merge(s1), s1, spec))
            note("convergence", check_replica_convergence(spec, (a, b, c), cfg.atol))
        verdicts.append(
            PropertyVerdict(
                strategy=spec.id,
                commutativity=ok["commutativity"],
                associativity=ok["associativity"],
                idempotency=ok["idempotency"],
                convergence=ok["convergence"],
                trials=len(triples),
                max_violation=max(worst.values()),
                atol=cfg.atol,
                violations=worst,
            )
        )
    return verdicts


def phase2_passes(verdicts: Sequence[PropertyVerdict]) -> tuple[int, int]:
    """(passed, total) individual property checks."""
    cells = [v for verdict in verdicts for v in verdict.row().values()]
    return sum(1 for c in cells if c), len(cells)


# reference C/A/I verdicts of the raw binary forms under the default audit config
EXPECTED_VERDICTS = {
    "weight_average": "PFP",
    "linear": "PFP",
    "task_arithmetic": "PPF",
    "ties": "PFF",
    "dare": "FFF",
    "dare_ties": "FFF",
    "slerp": "PFP",
    "fisher_merge": "PFP",
    "model_breadcrumbs": "PFF",
    "evolutionary_merge": "FFF",
}


def verdict_code(v: PropertyVerdict) -> str:
    return "".join("P" if x else "F" for x in (v.commutativity, v.associativity, v.idempotency))

