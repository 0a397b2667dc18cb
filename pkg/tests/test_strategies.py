import math
import subprocess
import sys

import numpy as np
import pytest

from crdtmerge.state import MergeState, resolve
from crdtmerge.strategies import (
    BINARY_FOLD,
    BUILTIN_STRATEGIES,
    N_ARY,
    InvalidParamsError,
    Strategy,
    StrategyParams,
    StrategySpec,
    UnknownStrategyError,
    apply_fold,
    apply_n,
    apply_pair_raw,
    breadcrumb_mask,
    dare_masks,
    get_strategy,
    register,
    slerp,
    unregister,
)
from crdtmerge.tensor import ShapeMismatchError, Tensor, max_abs_diff

from conftest import rand_tensor
from test_rng import reference_splitmix

SQRT_HALF = 1 / math.sqrt(2)
V1, V2, V3 = (Tensor([3], v) for v in ([1, 0, 0], [0, 1, 0], [0, 0, 1]))
TA, TB, TC = Tensor([3], [10, 1, 0.1]), Tensor([3], [0.1, 10, 1]), Tensor([3], [1, 0.1, 10])


def spec(sid, **kw):
    return StrategySpec(sid, StrategyParams(**kw))


def pair(sid, a, b, seed=0, **kw):
    return apply_pair_raw(spec(sid, **kw), a, b, seed=seed)


def arr(t):
    return t.array


@pytest.fixture
def abc(np_rng):
    return [rand_tensor(np_rng) for _ in range(3)]


# -- registry and params -----------------------------------------------------------

def test_registry_contents_and_arity():
    assert set(BUILTIN_STRATEGIES) == {
        "weight_average", "linear", "task_arithmetic", "ties", "dare", "dare_ties",
        "slerp", "fisher_merge", "model_breadcrumbs", "evolutionary_merge",
    }
    assert get_strategy("slerp").arity == BINARY_FOLD
    assert all(get_strategy(s).arity == N_ARY for s in BUILTIN_STRATEGIES if s != "slerp")
    with pytest.raises(UnknownStrategyError):
        get_strategy("adarank")


@pytest.mark.parametrize(
    "kw", [{"t": 0.0}, {"t": 1.0}, {"drop_p": 1.0}, {"keep_frac": 0.0}, {"linear_w": 1.5}, {"pop_size": 0}, {"lam": math.inf}]
)
def test_params_validated(kw, abc):
    with pytest.raises(InvalidParamsError):
        apply_n(spec("weight_average", **kw), abc, 0)


def test_external_kernel_registration(abc):
    register(Strategy("first_only", N_ARY, n_ary=lambda xs, seed, p: np.array(xs[0])))
    try:
        assert apply_n(StrategySpec("first_only"), abc, 0) == abc[0]
        with pytest.raises(ValueError):
            register(Strategy("first_only", N_ARY, n_ary=lambda xs, seed, p: xs[0]))
    finally:
        unregister("first_only")


def test_apply_errors(abc):
    with pytest.raises(ValueError):
        apply_n(spec("weight_average"), [], 0)
    with pytest.raises(ShapeMismatchError):
        apply_n(spec("weight_average"), [abc[0], Tensor([2], [1, 2])], 0)
    with pytest.raises(ShapeMismatchError):
        apply_pair_raw(spec("weight_average"), abc[0], Tensor([2], [1, 2]))


# -- weight average / linear / task arithmetic ------------------------------------

def test_weight_average(abc):
    a, b, c = abc
    assert apply_n(spec("weight_average"), [a], 0) == a
    np.testing.assert_allclose(arr(apply_n(spec("weight_average"), abc, 0)), (arr(a) + arr(b) + arr(c)) / 3, atol=1e-15)
    assert pair("weight_average", a, a) == a
    np.testing.assert_array_equal(arr(pair("weight_average", a, b)), (arr(a) + arr(b)) / 2)
    assert apply_n(spec("weight_average"), [Tensor([2], [1, 1]), Tensor([2], [3, 3])], 0).to_list() == [2, 2]


def test_averaging_association_gap_is_quarter_of_a_minus_c(abc):
    a, b, c = abc
    left = pair("weight_average", pair("weight_average", a, b), c)
    right = pair("weight_average", a, pair("weight_average", b, c))
    assert max_abs_diff(left, right) == pytest.approx(np.max(np.abs(arr(a) - arr(c))) / 4, abs=1e-12)


def test_linear():
    a, b = Tensor([1], [0.0]), Tensor([1], [4.0])
    assert pair("linear", a, b, linear_w=0.25).to_list() == [1.0]
    assert pair("linear", a, b, linear_w=0.0) == a
    x, y = Tensor([2], [1, 5]), Tensor([2], [3, -1])
    assert pair("linear", x, y) == pair("weight_average", x, y)


def test_task_arithmetic(abc):
    a, b, _ = abc
    np.testing.assert_array_equal(arr(pair("task_arithmetic", a, b)), arr(a) + arr(b))
    np.testing.assert_array_equal(arr(pair("task_arithmetic", a, a)), 2 * arr(a))
    np.testing.assert_allclose(arr(pair("task_arithmetic", a, b, lam=0.5)), (arr(a) + arr(b)) / 2, atol=1e-15)
    base = Tensor(a.shape, np.ones(a.size))
    out = apply_n(spec("task_arithmetic", base=base, lam=2.0), [a, b], 0)
    np.testing.assert_allclose(arr(out), 1 + 2 * ((arr(a) - 1) + (arr(b) - 1)), atol=1e-12)


# -- TIES / DARE -------------------------------------------------------------------

def test_ties_counterexample_triple():
    m_ab = pair("ties", TA, TB)
    assert m_ab.to_list() == pytest.approx([5, 5.5, 0.5], abs=1e-12)
    left = pair("ties", m_ab, TC)
    right = pair("ties", TA, pair("ties", TB, TC))
    assert left.to_list() == pytest.approx([3.0, 2.75, 5.0], abs=1e-9)
    assert right.to_list() == pytest.approx([5.0, 3.0, 2.75], abs=1e-9)


def test_ties_not_idempotent_when_trim_bites():
    assert pair("ties", TA, TA).to_list() == [10, 1, 0]


def test_ties_sign_tie_drops_component():
    out = pair("ties", Tensor([2], [1, 2]), Tensor([2], [-1, 2]), keep_frac=1.0)
    assert out.to_list() == [0.0, 2.0]


def test_ties_sign_election_excludes_minority():
    xs = [Tensor([1], [v]) for v in (3.0, 1.0, -5.0)]
    out = apply_n(spec("ties", keep_frac=1.0), xs, 0)
    assert out.to_list() == [pytest.approx(4 / 3)]


def test_dare_zero_drop_is_mean(abc):
    assert apply_n(spec("dare", drop_p=0.0), abc, 99) == apply_n(spec("weight_average"), abc, 99)


def test_dare_mask_matches_reference_stream(abc):
    seed = 1234
    a = abc[0]
    out = apply_n(spec("dare", drop_p=0.5), [a], seed)
    ref = reference_splitmix(seed, a.size)
    keep = np.array([(z >> 11) * 2.0**-53 < 0.5 for z in ref]).reshape(a.shape)
    np.testing.assert_array_equal(arr(out), np.where(keep, 2 * arr(a), 0.0))
    np.testing.assert_array_equal(dare_masks(seed, 1, a.shape, 0.5)[0], keep)


def test_dare_mask_reproducible_by_unmasking(abc):
    seed = 77
    out = apply_n(spec("dare", drop_p=0.3), abc, seed)
    masks = dare_masks(seed, 3, abc[0].shape, 0.3)
    expected = sum(np.where(m, arr(x) / 0.7, 0.0) for m, x in zip(masks, abc)) / 3
    np.testing.assert_allclose(arr(out), expected, atol=1e-14)


def test_dare_ties_zero_drop_is_ties(abc):
    assert apply_n(spec("dare_ties", drop_p=0.0), abc, 5) == apply_n(spec("ties"), abc, 5)


@pytest.mark.parametrize("sid", ["dare", "dare_ties", "evolutionary_merge"])
def test_unseeded_calls_differ(sid, abc):
    a, b, _ = abc
    s = spec(sid)
    assert apply_pair_raw(s, a, b) != apply_pair_raw(s, a, b)


# -- SLERP -------------------------------------------------------------------------

def test_slerp_basis_midpoint():
    assert pair("slerp", V1, V2).to_list() == pytest.approx([SQRT_HALF, SQRT_HALF, 0], abs=1e-15)


def test_slerp_fold_counterexample():
    left = apply_fold(spec("slerp"), [V1, V2, V3], 0)
    right = pair("slerp", V1, pair("slerp", V2, V3))
    assert left.to_list() == pytest.approx([0.5, 0.5, SQRT_HALF], abs=1e-12)
    assert right.to_list() == pytest.approx([SQRT_HALF, 0.5, 0.5], abs=1e-12)


@pytest.mark.parametrize("t", [0.1, 0.3, 0.5, 0.9])
def test_slerp_idempotent(t, abc):
    a = abc[0]
    assert max_abs_diff(pair("slerp", a, a, t=t), a) <= 1e-15


def test_slerp_commutes_only_at_half(abc):
    a, b, _ = abc
    assert max_abs_diff(pair("slerp", a, b), pair("slerp", b, a)) <= 1e-15
    assert max_abs_diff(pair("slerp", a, b, t=0.3), pair("slerp", b, a, t=0.3)) > 1e-3


def test_slerp_norm_contract(np_rng):
    for _ in range(100):
        a, b = np_rng.standard_normal(16), np_rng.standard_normal(16)
        t = float(np_rng.uniform(0.05, 0.95))
        ua, ub = a / np.linalg.norm(a), b / np.linalg.norm(b)
        assert abs(np.linalg.norm(slerp(ua, ub, t)) - 1.0) <= 1e-12
        expected = (1 - t) * np.linalg.norm(a) + t * np.linalg.norm(b)
        assert abs(np.linalg.norm(slerp(a, b, t)) - expected) <= 1e-12


def test_slerp_degenerate_angles_fall_back_to_linear():
    v = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(slerp(v, -v, 0.5), np.zeros(3))
    w = v * (1 + 1e-17)
    np.testing.assert_array_equal(slerp(v, w, 0.25), 0.75 * v + 0.25 * w)
    np.testing.assert_array_equal(slerp(np.zeros(3), v, 0.5), 0.5 * v)


def test_fold_single_and_imbalance(np_rng):
    c1 = Tensor([3], [1, 2, 3])
    assert apply_fold(spec("slerp"), [c1], 0) == c1
    # near-parallel inputs: slerp fold weights approach 0.25, 0.25, 0.5
    base = np.array([1.0, 1.0, 1.0, 1.0])
    cs = [base + 1e-3 * np_rng.standard_normal(4) for _ in range(3)]
    h = 1e-6

    def out(xs):
        return apply_fold(spec("slerp"), [Tensor([4], x) for x in xs], 0).array

    sens = []
    for i in range(3):
        bumped = [c.copy() for c in cs]
        bumped[i][0] += h
        sens.append((out(bumped)[0] - out(cs)[0]) / h)
    assert sens == pytest.approx([0.25, 0.25, 0.5], abs=1e-2)


# -- Fisher / breadcrumbs / evolutionary -------------------------------------------

def test_fisher(abc, np_rng):
    a, b, c = abc
    assert max_abs_diff(pair("fisher_merge", a, a), a) <= 1e-9
    assert pair("fisher_merge", a, b) == pair("fisher_merge", b, a)
    f = lambda x, y: pair("fisher_merge", x, y)  # noqa: E731
    assert max_abs_diff(f(f(a, b), c), f(a, f(b, c))) > 1e-5
    fa, fb = arr(a) ** 2 + 1e-12, arr(b) ** 2 + 1e-12
    np.testing.assert_allclose(arr(f(a, b)), (fa * arr(a) + fb * arr(b)) / (fa + fb), rtol=1e-12)


def test_breadcrumbs(abc):
    a, b, _ = abc
    assert pair("model_breadcrumbs", a, b) == pair("model_breadcrumbs", b, a)
    assert max_abs_diff(pair("model_breadcrumbs", a, a), a) > 1e-5


def test_breadcrumbs_equal_magnitude_tie_rule():
    mask = breadcrumb_mask(np.ones(10), keep_frac=0.8, outlier_frac=0.1)
    np.testing.assert_array_equal(mask != 0, [False] + [True] * 7 + [False, False])


def test_evolutionary(abc):
    a, b, c = abc
    s = spec("evolutionary_merge")
    assert apply_n(s, [a], 3) == a
    assert apply_n(s, abc, 3).canonical_bytes() == apply_n(s, abc, 3).canonical_bytes()
    assert apply_n(s, abc, 3) != apply_n(s, abc, 4)


# -- purity and ordering -----------------------------------------------------------

@pytest.mark.parametrize("sid", BUILTIN_STRATEGIES)
def test_repeat_calls_bitwise(sid, abc):
    s = StrategySpec(sid)
    assert apply_n(s, abc, 2024).canonical_bytes() == apply_n(s, abc, 2024).canonical_bytes()


def test_outputs_agree_across_processes(abc):
    code = (
        "import sys, numpy as np\n"
        "from crdtmerge.strategies import BUILTIN_STRATEGIES, StrategySpec, apply_n\n"
        "from crdtmerge.tensor import Tensor\n"
        "xs = [Tensor([4, 4], np.frombuffer(bytes.fromhex(h))) for h in sys.argv[1:]]\n"
        "for s in BUILTIN_STRATEGIES: print(apply_n(StrategySpec(s), xs, 2024).content_hash().hex())\n"
    )
    args = [x.array.tobytes().hex() for x in abc]
    here = [apply_n(StrategySpec(s), abc, 2024).content_hash().hex() for s in BUILTIN_STRATEGIES]
    there = subprocess.run([sys.executable, "-c", code, *args], capture_output=True, text=True, check=True).stdout.split()
    assert there == here


@pytest.mark.parametrize("sid", BUILTIN_STRATEGIES)
def test_resolve_hides_add_order(sid, np_rng):
    xs = [rand_tensor(np_rng) for _ in range(4)]
    outs = set()
    for perm in ([0, 1, 2, 3], [3, 2, 1, 0], [2, 0, 3, 1]):
        s = MergeState("n")
        for i in perm:
            s.add(xs[i])
        outs.add(resolve(s, StrategySpec(sid)).canonical_bytes())
    assert len(outs) == 1
