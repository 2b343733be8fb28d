import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oocmem.errors import (
    DuplicateRegistration,
    InsufficientEvictableBytes,
    NotResident,
    NotSwapped,
    UnknownHandle,
)
from oocmem.scheduler import CyclicScheduler, DummyStrategy, decay_fires

from oracles import synthetic_trace
from workloads import replay_equivalence


def make(ram=1000, budget=100, prefetch=True, pinned=()):
    pinned = set(pinned)
    return CyclicScheduler(ram, budget, 0.01, prefetch=prefetch,
                           evictable=lambda h: h not in pinned), pinned


def chain(s, names):
    for h in names:
        s.register(h, 100)


# -- registration -------------------------------------------------------------


def test_first_registration_sets_both_cursors():
    s, _ = make()
    s.register(7, 10)
    assert s.active == s.counteractive == 7
    assert list(s.forward()) == [7]
    s.check()


def test_registration_order_with_int_ids():
    s, _ = make()
    for h in (0, 1, 2):
        s.register(h, 100)
    assert list(s.forward()) == [2, 1, 0]
    assert s.counteractive == 0
    s.check()


def test_duplicate_registration():
    s, _ = make()
    s.register(1, 5)
    with pytest.raises(DuplicateRegistration):
        s.register(1, 5)


def test_thousand_registrations_close_the_cycle():
    s, _ = make(ram=10**6)
    for h in range(1000):
        s.register(h, 1)
    walked = list(s.forward())
    assert len(walked) == 1000 == len(set(walked))
    s.check()


# -- touch --------------------------------------------------------------------


def test_sequential_touches_do_not_relink():
    s, _ = make()
    for h in (0, 1, 2):
        s.register(h, 100)
    before = s.relinks
    for _ in range(3):
        for h in (0, 1, 2):
            s.touch(h)
    assert s.relinks == before
    s.check()


def test_touch_mid_list_relinks_next_to_former_active():
    s, _ = make()
    for h in range(4):
        s.register(h, 100)
    s.touch(2)  # forward order was 3,2,1,0
    assert list(s.forward()) == [2, 3, 1, 0]
    assert s.count == 4
    s.check()


def test_touch_swapped_raises():
    s, _ = make()
    s.register(0, 100)
    s.make_room(100)
    with pytest.raises(NotResident):
        s.touch(0)


def test_touch_unknown():
    s, _ = make()
    with pytest.raises(UnknownHandle):
        s.touch(3)


def test_touch_preemptive_updates_budget_and_hits():
    s, _ = make(ram=1000, budget=100)
    for h in range(4):
        s.register(h, 40)
    s.make_room(160)
    plan = s.plan_swap_in(0)
    assert plan == [0, 1, 2]
    assert s.used_bytes == 80
    s.touch(1)
    assert s.used_bytes == 40 and s.hits_since_miss == 1
    s.check()


# -- make_room ----------------------------------------------------------------


def test_make_room_walks_back_from_counteractive():
    s, _ = make()
    a, b, c = 0, 1, 2
    for h in (c, b, a):
        s.register(h, 100)
    assert s.active == a and s.counteractive == c
    assert s.make_room(150) == [c, b]
    assert s.counteractive == a
    s.check()


def test_make_room_zero_is_noop():
    s, _ = make()
    chain(s, (0, 1))
    before = (s.active, s.counteractive, list(s.forward()))
    assert s.make_room(0) == []
    assert before == (s.active, s.counteractive, list(s.forward()))


def test_make_room_all_pinned():
    s, pinned = make(pinned={0, 1})
    chain(s, (0, 1))
    with pytest.raises(InsufficientEvictableBytes):
        s.make_room(1)
    s.check()


def test_make_room_skips_pinned_in_place():
    s, pinned = make(pinned={1})
    for h in (0, 1, 2, 3):
        s.register(h, 100)
    # forward 3,2,1,0 ; LRU order 0,1,2,3
    assert s.make_room(200) == [0, 2]
    assert s.zone(1) == "ACTIVE_REGION"
    assert s.counteractive == 1
    s.check()


def test_make_room_failure_changes_nothing():
    s, _ = make(pinned={2})
    for h in (0, 1, 2):
        s.register(h, 100)
    snapshot = list(s.forward())
    with pytest.raises(InsufficientEvictableBytes):
        s.make_room(300)
    assert list(s.forward()) == snapshot
    s.check()


# -- plan_swap_in -------------------------------------------------------------


def _swapped_run(budget=100, size=40, n=4):
    s, pinned = make(ram=1000, budget=budget)
    for h in range(n):
        s.register(h, size)
    s.make_room(size * n)
    return s


def test_plan_fills_budget_with_successors():
    s = _swapped_run()
    # X=0, successors in access order are 1, 2, 3
    assert s.plan_swap_in(0) == [0, 1, 2]
    assert s.used_bytes == 80
    s.check()


def test_plan_with_full_budget_is_demand_only():
    s2, _ = make(ram=1000, budget=80)
    for h in range(5):
        s2.register(h, 40)
    s2.make_room(200)
    assert s2.plan_swap_in(0) == [0, 1, 2]
    assert s2.used_bytes == s2.budget_bytes
    # budget full: the next miss prefetches nothing
    assert s2.plan_swap_in(4) == [4]
    s2.check()


def test_plan_single_swapped_node():
    s, _ = make()
    for h in range(3):
        s.register(h, 40)
    s.make_room(40)
    assert s.plan_swap_in(0) == [0]
    s.check()


def test_plan_requires_swapped():
    s, _ = make()
    s.register(0, 10)
    with pytest.raises(NotSwapped):
        s.plan_swap_in(0)


def test_prefetch_disabled_plans_demand_only():
    s, _ = make(prefetch=False)
    for h in range(4):
        s.register(h, 40)
    s.make_room(160)
    assert s.plan_swap_in(0) == [0]
    assert s.used_bytes == 0


def test_make_room_falls_back_to_preemptive_oldest_first():
    s, _ = make(ram=1000, budget=200)
    for h in range(6):
        s.register(h, 40)
    s.make_room(240)
    assert s.plan_swap_in(0) == [0, 1, 2, 3, 4, 5]
    pre = [h for h in s.forward() if s.zone(h) == "PREEMPTIVE"]
    # only node 0 is ACTIVE_REGION; evicting more than it must take pre-emptive nodes
    victims = s.make_room(80)
    assert victims[0] == 0
    assert victims[1:] == pre[:len(victims) - 1]
    s.check()


# -- decay ----------------------------------------------------------------------


def _int_oracle(budget, ram, n, sig_num=1, sig_den=100):
    # (budget/ram)^n < sig_num/sig_den, in integers only
    return budget ** n * sig_den < ram ** n * sig_num


@pytest.mark.parametrize("budget", [50, 100, 200])
@pytest.mark.parametrize("hits", range(11))
def test_decay_rule_grid(budget, hits):
    s, _ = make(ram=1000, budget=budget)
    for used in (0, 1, budget // 2, budget):
        s.hits_since_miss, s.used_bytes = hits, used
        expected = max(2 * (budget - used), 1) if _int_oracle(budget, 1000, hits) else 0
        assert s.evaluate_decay() == expected


def test_decay_boundary_is_exclusive():
    assert not decay_fires(0.1, 2, 0.01)
    assert decay_fires(0.1, 3, 0.01)


def test_decay_is_pure():
    assert all(decay_fires(0.2, 5, 0.01) == decay_fires(0.2, 5, 0.01) for _ in range(3))


def test_decay_evicts_oldest_prefetched_first():
    sizes = {1: 10, 2: 10, 3: 150, 4: 300, 10: 50, 11: 10, 12: 10, 13: 10, 14: 10,
             15: 100, 16: 100, 17: 100}
    s, _ = make(ram=2000, budget=400)  # P = 0.2
    for h in range(21):
        s.register(h, sizes.get(h, 50))
    s.make_room(sum(sizes.get(h, 50) for h in range(21)))
    assert s.plan_swap_in(0) == [0, 1, 2, 3]
    s.touch(1)
    s.touch(2)
    assert s.plan_swap_in(10) == [10, 11, 12, 13, 14, 15, 16]
    assert s.take_decayed() == []  # 0.2^2 is not below 0.01
    for h in (11, 12, 13):
        s.touch(h)
    assert s.used_bytes == 360
    assert s.evaluate_decay() == 80  # 0.2^3 < 0.01, free budget 40
    s.plan_swap_in(20)
    # node 3 is left over from the earlier prefetch batch
    assert s.take_decayed() == [3]
    assert s.zone(3) == "SWAPPED"
    s.check()


# -- unregister -------------------------------------------------------------------


def test_unregister_active_moves_to_previous_active():
    s, _ = make()
    for h in (0, 1, 2):
        s.register(h, 10)
    s.unregister(2)
    assert s.active == 1
    s.check()


def test_unregister_only_node():
    s, _ = make()
    s.register(0, 10)
    s.unregister(0)
    assert s.active == s.counteractive == -1 and len(s) == 0
    s.check()


def test_unregister_unknown():
    s, _ = make()
    with pytest.raises(UnknownHandle):
        s.unregister(0)


def test_register_unregister_fuzz():
    rng = random.Random(11)
    s, _ = make(ram=10**9, budget=10**6)
    live: list[int] = []
    next_id = 0
    for _ in range(10_000):
        if live and rng.random() < 0.45:
            h = live.pop(rng.randrange(len(live)))
            s.unregister(h)
        else:
            s.register(next_id, rng.randint(1, 50))
            live.append(next_id)
            next_id += 1
        if len(live) < 64 or rng.random() < 0.05:
            s.check()
    s.check()
    assert sorted(s.forward()) == sorted(live)


# -- mixed fuzz with prefetch ---------------------------------------------------------


def _mixed_fuzz(seed, steps):
    rng = random.Random(seed)
    ram, budget = 2000, 300
    s, pinned = make(ram=ram, budget=budget)
    live = {}
    for step in range(steps):
        r = rng.random()
        if r < 0.15 or not live:
            h = step
            n = rng.randint(10, 200)
            s.register(h, n)
            live[h] = n
        elif r < 0.2:
            h = rng.choice(list(live))
            pinned.discard(h)
            s.unregister(h)
            del live[h]
        elif r < 0.3:
            h = rng.choice(list(live))
            if s.zone(h) != "SWAPPED":
                pinned ^= {h}
        else:
            h = rng.choice(list(live))
            if s.zone(h) == "SWAPPED":
                s.plan_swap_in(h)
                s.take_decayed()
            else:
                s.touch(h)
        active = sum(n for h, n in live.items() if s.zone(h) == "ACTIVE_REGION")
        pre = s.used_bytes
        over = active + pre - ram
        if over > 0:
            try:
                s.make_room(over)
            except InsufficientEvictableBytes:
                pinned.clear()
                s.make_room(over)
        s.check()
        assert s.used_bytes <= budget


@pytest.mark.parametrize("seed", range(4))
def test_mixed_structural_fuzz(seed):
    _mixed_fuzz(seed, 2500)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 30), st.integers(1, 120)),
                max_size=120))
def test_structure_property(ops):
    s, pinned = make(ram=500, budget=120)
    live = {}
    for op, key, size in ops:
        if op == 0 and key not in live:
            s.register(key, size)
            live[key] = size
        elif op == 1 and key in live:
            s.unregister(key)
            del live[key]
        elif op == 2 and key in live:
            if s.zone(key) == "SWAPPED":
                s.plan_swap_in(key)
                s.take_decayed()
            else:
                s.touch(key)
        elif op == 3 and live:
            try:
                s.make_room(size)
            except InsufficientEvictableBytes:
                pass
        s.check()


# -- equivalence with the timestamped reference model ----------------------------


@pytest.mark.parametrize("seed", range(3))
def test_victims_and_misses_match_reference(seed):
    trace = synthetic_trace(seed, 10_000, 1000)
    divergences, misses, victims = replay_equivalence(trace, 1000)
    assert divergences == 0
    assert misses > 100 and victims > 100  # the trace actually exercises eviction


def test_dummy_strategy_evicts_in_registration_order():
    d = DummyStrategy()
    for h in range(4):
        d.register(h, 10)
    assert d.make_room(25) == [0, 1, 2]
    with pytest.raises(InsufficientEvictableBytes):
        d.make_room(100)
