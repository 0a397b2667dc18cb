"""In-process all-pairs push gossip simulator.

Every experiment is deterministic given its :class:`SimConfig` apart from the
wall-time fields. States travel through the CMS1 wire format on each send
unless ``wire`` is disabled.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .hashing import Hash256, content_hash
from .rng import SplitMix64
from .state import MergeState, join_all, resolve, state_deserialize, state_serialize
from .strategies import BUILTIN_STRATEGIES, StrategySpec
from .tensor import Tensor, max_abs_diff, track_payload_reads

DEFAULT_SIM_SEED = 7
DEFAULT_LADDER = (2, 5, 10, 20, 30, 50)


class SimError(ValueError):
    pass


@dataclass
class SimConfig:
    nodes: int = 20
    shape: tuple[int, ...] = (64, 64)
    strategy: StrategySpec = field(default_factory=lambda: StrategySpec("slerp"))
    orderings: int = 20
    seed: int = DEFAULT_SIM_SEED
    partitions: Optional[int] = None
    ladder: Sequence[int] = DEFAULT_LADDER
    wire: bool = True

    def __post_init__(self):
        self.shape = tuple(self.shape)
        if self.nodes < 2:
            raise SimError("need at least 2 nodes")
        if self.orderings < 0:
            raise SimError("orderings must be non-negative")
        if self.partitions is not None:
            if self.partitions < 1 or self.nodes % self.partitions:
                raise SimError(f"{self.partitions} partitions do not divide {self.nodes} nodes")

    @property
    def params_per_node(self) -> int:
        return int(np.prod(self.shape))


@dataclass
class SimNode:
    id: str
    state: MergeState
    resolved: Optional[Tensor] = None
    resolved_root: Optional[Hash256] = None

    def set_resolved(self, t: Tensor) -> None:
        self.resolved = t
        self.resolved_root = content_hash(t)


@dataclass
class GossipStats:
    merges: int = 0
    payload_reads: int = 0
    seconds: float = 0.0


@dataclass
class ConvergenceReport:
    ordering: int
    merges: int
    gossip_ms: float
    resolve_ms: float
    max_diff: float
    bitwise_equal: bool
    final_root: str
    distinct_roots: int
    payload_reads: int

    @property
    def status(self) -> str:
        return "PASS" if self.bitwise_equal else "FAIL"


@dataclass
class PartitionReport:
    nodes: int
    partitions: int
    partition_gossip_ms: float
    partition_roots: list[str]
    partitions_consistent: bool
    distinct_partition_roots: int
    isolation_held: bool
    healing_ms: float
    converged_nodes: int
    bitwise_equal: bool
    final_root: str
    unpartitioned_root: str
    payload_reads: int

    @property
    def matches_unpartitioned(self) -> bool:
        return self.final_root == self.unpartitioned_root

    @property
    def passed(self) -> bool:
        return (
            self.partitions_consistent
            and self.isolation_held
            and self.distinct_partition_roots == self.partitions
            and self.bitwise_equal
            and self.converged_nodes == self.nodes
            and self.matches_unpartitioned
        )


@dataclass
class SweepRow:
    strategy: str
    gossip_ms: float
    resolve_ms: float
    single_hash: bool
    final_root: str

    @property
    def status(self) -> str:
        return "PASS" if self.single_hash else "FAIL"


@dataclass
class ScaleRow:
    nodes: int
    params: int
    merges: int
    gossip_ms: float
    resolve_ms: float
    converged: bool
    payload_reads: int

    @property
    def status(self) -> str:
        return "PASS" if self.converged and self.payload_reads == 0 else "FAIL"


@dataclass
class VerifyResult:
    converged: bool
    divergent: set[str]
    majority_root: Optional[str]


def node_ids(n: int) -> list[str]:
    width = max(3, len(str(n - 1)))
    return [f"n{i:0{width}d}" for i in range(n)]


def sim_setup(cfg: SimConfig) -> list[SimNode]:
    """One fresh state per node, each holding one normally distributed tensor."""
    rng = SplitMix64(cfg.seed)
    nodes = []
    for nid in node_ids(cfg.nodes):
        s = MergeState(nid)
        s.add(Tensor(cfg.shape, rng.normal_array(cfg.params_per_node)))
        nodes.append(SimNode(nid, s))
    return nodes


def all_pairs(ids: Sequence[int]) -> list[tuple[int, int]]:
    return [(i, j) for i in ids for j in ids if i != j]


def random_ordering(n: int, seed: int, ordering_index: int, members: Optional[Sequence[int]] = None) -> list[tuple[int, int]]:
    pairs = all_pairs(range(n) if members is None else members)
    return SplitMix64(seed ^ ((ordering_index + 1) * 0x9E3779B97F4A7C15)).shuffle(pairs)


def _send(state: MergeState, wire: bool) -> MergeState:
    return state_deserialize(state_serialize(state)) if wire else state.copy()


def gossip_round_all_pairs(
    nodes: list[SimNode], ordering: Sequence[tuple[int, int]], wire: bool = True, members: Optional[Sequence[int]] = None
) -> GossipStats:
    """Apply one push round: for each (i, j) in order, node j merges node i's state."""
    ids = list(range(len(nodes))) if members is None else list(members)
    if len(ids) < 2 and len(ordering):
        raise SimError("gossip needs at least 2 nodes")
    if sorted(ordering) != sorted(all_pairs(ids)):
        raise SimError("ordering is not a permutation of all directed pairs")
    stats = GossipStats()
    start = time.perf_counter()
    for i, j in ordering:
        incoming = _send(nodes[i].state, wire)
        with track_payload_reads() as reads:
            nodes[j].state.merge_in(incoming)
        stats.payload_reads += reads[0]
        stats.merges += 1
    stats.seconds = time.perf_counter() - start
    return stats


def resolve_all(nodes: Sequence[SimNode], spec: StrategySpec, members: Optional[Sequence[int]] = None) -> float:
    start = time.perf_counter()
    for i in range(len(nodes)) if members is None else members:
        nodes[i].set_resolved(resolve(nodes[i].state, spec))
    return time.perf_counter() - start


def verify_roots(nodes: Sequence[SimNode]) -> VerifyResult:
    """Compare resolved-output hashes. Nodes off the majority hash are divergent.

    Majority ties go to the smallest hash so the result is deterministic.
    """
    if any(n.resolved_root is None for n in nodes):
        raise SimError("every node must be resolved before verification")
    counts = Counter(n.resolved_root for n in nodes)
    if not counts:
        return VerifyResult(True, set(), None)
    majority = min(counts, key=lambda h: (-counts[h], h))
    divergent = {n.id for n in nodes if n.resolved_root != majority}
    return VerifyResult(not divergent, divergent, majority.hex())


def max_pairwise_diff(nodes: Sequence[SimNode]) -> float:
    # pairwise max of |x - y| is attained against the elementwise extremes
    stack = np.stack([n.resolved.array for n in nodes])
    return float(np.max(stack.max(axis=0) - stack.min(axis=0)))


def _check_visible(nodes: Sequence[SimNode]) -> None:
    first = nodes[0].state.visible_hashes()
    if any(n.state.visible_hashes() != first for n in nodes[1:]):
        raise SimError("visible sets differ after a full all-pairs round")


def run_convergence(cfg: SimConfig, initial: Optional[list[SimNode]] = None) -> list[ConvergenceReport]:
    base = initial or sim_setup(cfg)
    reports = []
    for k in range(cfg.orderings):
        nodes = [SimNode(n.id, n.state.copy()) for n in base]
        stats = gossip_round_all_pairs(nodes, random_ordering(len(nodes), cfg.seed, k), cfg.wire)
        _check_visible(nodes)
        resolve_s = resolve_all(nodes, cfg.strategy)
        check = verify_roots(nodes)
        diff = max_pairwise_diff(nodes)
        roots = {n.resolved_root for n in nodes}
        reports.append(
            ConvergenceReport(
                ordering=k + 1,
                merges=stats.merges,
                gossip_ms=stats.seconds * 1e3,
                resolve_ms=resolve_s * 1e3,
                max_diff=diff,
                bitwise_equal=check.converged and diff == 0.0,
                final_root=check.majority_root,
                distinct_roots=len(roots),
                payload_reads=stats.payload_reads,
            )
        )
    return reports


def partition_members(n: int, partitions: int) -> list[list[int]]:
    return [[i for i in range(n) if i % partitions == p] for p in range(partitions)]


def run_partition_healing(cfg: SimConfig) -> PartitionReport:
    """Gossip inside round-robin partitions, then heal with one global round.

    The healing time is the wall time of the global gossip round.
    """
    if cfg.partitions is None:
        raise SimError("partition count required")
    base = sim_setup(cfg)
    nodes = [SimNode(n.id, n.state.copy()) for n in base]
    groups = partition_members(cfg.nodes, cfg.partitions)
    reads = 0
    part_s = 0.0
    for p, members in enumerate(groups):
        ordering = random_ordering(cfg.nodes, cfg.seed, 1000 + p, members)
        stats = gossip_round_all_pairs(nodes, ordering, cfg.wire, members)
        part_s += stats.seconds
        reads += stats.payload_reads
    isolation = all(
        set(nodes[i].state.vv) <= {nodes[m].id for m in members} for members in groups for i in members
    )
    resolve_all(nodes, cfg.strategy)
    part_roots, consistent = [], True
    for members in groups:
        roots = {nodes[i].resolved_root for i in members}
        consistent &= len(roots) == 1
        part_roots.append(min(roots).hex())

    stats = gossip_round_all_pairs(nodes, random_ordering(cfg.nodes, cfg.seed, 2000), cfg.wire)
    reads += stats.payload_reads
    resolve_all(nodes, cfg.strategy)
    check = verify_roots(nodes)
    final = Counter(n.resolved_root for n in nodes)

    # reference: the same setup converged without partitions
    ref = [SimNode(n.id, n.state.copy()) for n in base]
    gossip_round_all_pairs(ref, random_ordering(cfg.nodes, cfg.seed, 0), cfg.wire)
    ref_root = content_hash(resolve(ref[0].state, cfg.strategy))

    return PartitionReport(
        nodes=cfg.nodes,
        partitions=cfg.partitions,
        partition_gossip_ms=part_s * 1e3,
        partition_roots=part_roots,
        partitions_consistent=consistent,
        distinct_partition_roots=len(set(part_roots)),
        isolation_held=isolation,
        healing_ms=stats.seconds * 1e3,
        converged_nodes=final.most_common(1)[0][1],
        bitwise_equal=check.converged and max_pairwise_diff(nodes) == 0.0,
        final_root=check.majority_root,
        unpartitioned_root=ref_root.hex(),
        payload_reads=reads,
    )


def run_strategy_sweep(cfg: SimConfig, strategies: Sequence = BUILTIN_STRATEGIES) -> list[SweepRow]:
    rows = []
    base = sim_setup(cfg)
    for s in strategies:
        spec = s if isinstance(s, StrategySpec) else StrategySpec(s)
        nodes = [SimNode(n.id, n.state.copy()) for n in base]
        stats = gossip_round_all_pairs(nodes, random_ordering(cfg.nodes, cfg.seed, 0), cfg.wire)
        resolve_s = resolve_all(nodes, spec)
        check = verify_roots(nodes)
        rows.append(SweepRow(spec.id, stats.seconds * 1e3, resolve_s * 1e3, check.converged, check.majority_root))
    return rows


def run_scalability(cfg: SimConfig) -> list[ScaleRow]:
    rows = []
    for n in cfg.ladder:
        sub = SimConfig(
            nodes=n, shape=cfg.shape, strategy=cfg.strategy, orderings=1, seed=cfg.seed, wire=cfg.wire
        )
        nodes = sim_setup(sub)
        stats = gossip_round_all_pairs(nodes, random_ordering(n, cfg.seed, 0), cfg.wire)
        resolve_s = resolve_all(nodes, cfg.strategy)
        rows.append(
            ScaleRow(
                nodes=n,
                params=n * sub.params_per_node,
                merges=stats.merges,
                gossip_ms=stats.seconds * 1e3,
                resolve_ms=resolve_s * 1e3,
                converged=verify_roots(nodes).converged,
                payload_reads=stats.payload_reads,
            )
        )
    return rows


def folded_join(nodes: Sequence[SimNode]) -> MergeState:
    return join_all((n.state for n in nodes), owner="join")
