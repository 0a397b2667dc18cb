import itertools

import numpy as np
import pytest

from crdtmerge.audit import (
    EXPECTED_VERDICTS,
    AuditConfig,
    check_associativity,
    check_commutativity,
    check_idempotency,
    check_replica_convergence,
    phase2_passes,
    random_triples,
    run_phase1,
    run_phase2,
    verdict_code,
)
from crdtmerge.strategies import N_ARY, Strategy, StrategySpec, UnknownStrategyError, register, unregister
from crdtmerge.tensor import Tensor

WA = StrategySpec("weight_average")
TA = StrategySpec("task_arithmetic")


def test_check_examples():
    a, b = Tensor([2], [1, 1]), Tensor([2], [3, 3])
    assert check_commutativity(WA, a, b, 1e-5) == (True, 0.0)
    ok, v = check_idempotency(TA, a, 1e-5)
    assert not ok and v == 1.0
    ok, v = check_associativity(WA, Tensor([1], [0.0]), Tensor([1], [0.0]), Tensor([1], [4.0]), 1e-5)
    assert not ok and v == pytest.approx(1.0)


def test_association_gap_over_random_triples():
    for a, b, c in random_triples((4, 4), 3, 50):
        _, v = check_associativity(WA, a, b, c, 1e-5)
        assert v == pytest.approx(np.max(np.abs(a.array - c.array)) / 4, abs=1e-12)


def test_random_triples_deterministic():
    x, y = random_triples((2, 3), 5, 4), random_triples((2, 3), 5, 4)
    assert all(p == q for tx, ty in zip(x, y) for p, q in zip(tx, ty))
    assert x[0][0].shape == (2, 3)


def test_phase1_rows():
    verdicts = run_phase1(AuditConfig())
    assert {v.strategy: verdict_code(v) for v in verdicts} == EXPECTED_VERDICTS
    stoch = {v.strategy: v.stable for v in verdicts}
    assert stoch["dare"] is True and stoch["weight_average"] is None


def test_phase1_tolerance_monotone():
    # loosening the tolerance never turns a pass into a fail
    tight = run_phase1(AuditConfig(atol=1e-9, strategies=["weight_average", "slerp", "fisher_merge"]))
    loose = run_phase1(AuditConfig(atol=1e-3, strategies=["weight_average", "slerp", "fisher_merge"]))
    for t, l in zip(tight, loose):
        for k in ("C", "A", "I"):
            assert l.row()[k] or not t.row()[k]


def test_phase1_pinned_entropy_repeats():
    a = run_phase1(AuditConfig(strategies=["dare"]), entropy=lambda: 11)
    b = run_phase1(AuditConfig(strategies=["dare"]), entropy=lambda: 11)
    assert a[0].violations == b[0].violations


def test_phase2_all_pass():
    verdicts = run_phase2(AuditConfig())
    assert phase2_passes(verdicts) == (40, 40)
    assert all(v.crdt and v.max_violation == 0.0 for v in verdicts)


def test_replica_convergence_direct():
    xs = random_triples((3, 3), 9, 1)[0]
    assert check_replica_convergence(StrategySpec("slerp"), xs) == (True, 0.0)
    with pytest.raises(ValueError):
        check_replica_convergence(WA, xs[:2])


def test_impure_kernel_fails_phase2():
    calls = itertools.count()

    def drifting(xs, seed, params):
        # depends on hidden call count, not only on its inputs
        return np.mean(xs, axis=0) + next(calls) * 1e-3

    register(Strategy("drifting", N_ARY, n_ary=drifting))
    try:
        (v,) = run_phase2(AuditConfig(strategies=["drifting"], trials=3))
        assert v.convergence is False and not v.crdt
        assert phase2_passes([v])[0] < 4
    finally:
        unregister("drifting")


def test_config_errors():
    assert run_phase1(AuditConfig(strategies=[])) == []
    with pytest.raises(UnknownStrategyError):
        run_phase2(AuditConfig(strategies=["nope"]))
    with pytest.raises(ValueError):
        AuditConfig(trials=0)
    with pytest.raises(ValueError):
        AuditConfig(atol=0.0)


def test_verdict_dict():
    (v,) = run_phase2(AuditConfig(strategies=["ties"], trials=2))
    d = v.to_dict()
    assert d["crdt"] is True and d["strategy"] == "ties" and d["trials"] == 2
