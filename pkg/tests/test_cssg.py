import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evmarket import cssg
from evmarket.config import UtilityParams
from evmarket.cssg import (CssgInstance, best_response, certify_nash_stable,
                           enumerate_stable, iteration_bound, random_instance, solve,
                           solve_by_messages)
from evmarket.errors import NoReachableStation, NonConvergence


def make(esoc, prices, free, slots=None, locations=None, committed=None, params=None):
    esoc = np.asarray(esoc, dtype=float)
    n, m = esoc.shape
    return CssgInstance(list(range(n)), list(range(1, m + 1)), esoc, prices, free,
                        slots if slots is not None else [4] * m,
                        locations if locations is not None else [250.0] * m,
                        params or UtilityParams.with_waiting(), committed=committed)


def test_iteration_bound_oracle():
    assert iteration_bound(10) == 55
    assert iteration_bound(0) == 0


def test_single_ev_picks_cheaper_station():
    inst = make([[0.3, 0.3]], [[0.50, 0.45]], [4, 4])
    assert solve(inst).assignment == {0: 2}


def test_price_tie_goes_to_nearer_station():
    inst = make([[0.3, 0.3]], [[0.45, 0.45]], [4, 4], locations=[400.0, 200.0])
    assert solve(inst).assignment == {0: 2}


def test_full_tie_goes_to_lower_id():
    inst = make([[0.3, 0.3]], [[0.45, 0.45]], [4, 4])
    assert solve(inst).assignment == {0: 1}


def test_congestion_splits_identical_evs():
    # one free slot each; cost gap smaller than a waiting penalty
    inst = make([[0.3, 0.3]] * 2, [[0.45, 0.45]] * 2, [1, 1], slots=[1, 1])
    groups = solve(inst).groups
    assert sorted(len(g) for g in groups.values()) == [1, 1]


def test_unreachable_ev_raises():
    inst = make([[-0.1, -0.2]], [[0.45, 0.45]], [4, 4])
    with pytest.raises(NoReachableStation):
        solve(inst)


def test_certify_detects_instability():
    inst = make([[0.3, 0.3]], [[0.50, 0.45]], [4, 4])
    assert not certify_nash_stable({0: 1}, inst)
    assert certify_nash_stable({0: 2}, inst)


def test_best_response_keeps_current_on_tie():
    inst = make([[0.3, 0.3]], [[0.45, 0.45]], [4, 4])
    assert best_response(0, {0: 2}, inst) == 2


def test_warm_start_from_stable_needs_no_revisions():
    inst = random_instance(np.random.default_rng(3), 6, 3)
    first = solve(inst, rng=1)
    again = solve(inst, previous=first.assignment, rng=2)
    assert again.revision == 0
    assert again.assignment == first.assignment


def test_budget_exhaustion_raises_with_partial_result():
    inst = make([[0.3, 0.3]] * 4, [[0.45, 0.45]] * 4, [1, 1], slots=[1, 1])
    with pytest.raises(NonConvergence) as info:
        solve(inst, max_revisions=1)
    assert info.value.result is not None


def test_committed_queue_counts_toward_group():
    inst = make([[0.3, 0.3]], [[0.45, 0.46]], [0, 0], slots=[1, 1], committed=[5, 0])
    assert solve(inst).assignment == {0: 2}


@pytest.mark.parametrize("seed", range(40))
def test_kernel_backends_and_message_protocol_agree(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, int(rng.integers(1, 9)), int(rng.integers(1, 4)))
    a = solve(inst, rng=seed, backend="python")
    b = solve(inst, rng=seed)
    c = solve_by_messages(inst, seed=seed)
    assert a.assignment == b.assignment == c.assignment
    assert a.revision == b.revision == c.revision


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8), m=st.integers(1, 3))
def test_solutions_are_stable_and_bounded(seed, n, m):
    inst = random_instance(np.random.default_rng(seed), n, m)
    part = solve(inst, rng=seed)
    assert certify_nash_stable(part, inst)
    assert part.revision <= iteration_bound(n)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5), m=st.integers(1, 3))
def test_solution_is_in_enumerated_stable_set(seed, n, m):
    inst = random_instance(np.random.default_rng(seed), n, m)
    stable = enumerate_stable(inst)
    assert stable, "a potential game always has a stable partition"
    assert solve(inst, rng=seed).assignment in stable


def test_certify_sweep_small():
    res = cssg.certify_sweep(50, seed=9)
    assert res["passed"] and res["enumerated"] > 0
