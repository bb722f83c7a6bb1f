import random

import pytest

from harness import run_case, run_procs
from mpds.lists import SortedList, UnsortedList, UnsortedListAlt
from mpds.node import FlatPort
from mpds.simcore import RANDOM_FAIR, SchedulerConfig, Sim, Topology
from mpds.token_structs import token_audit
from mpds.verify import check_linearizable


def seq(lst, ns, body):
    res, out = run_procs([body], lst, n_servers=ns)
    assert not res.deadlock
    return res, out[0]


def script(lst, ops):
    def body(ctx, p):
        out = []
        for op, k in ops:
            out.append((yield from getattr(lst, op)(p, k)))
        return out
    return body


# --------------------------------------------------------------- unsorted

@pytest.mark.parametrize("cls", [UnsortedList, UnsortedListAlt])
def test_unsorted_basics(cls):
    lst = cls([0, 1], 4)
    ops = [("search", 5), ("insert", 5), ("insert", 5), ("search", 5), ("delete", 5), ("delete", 5)]
    res, out = seq(lst, 2, script(lst, ops))
    assert out == [False, True, False, True, True, False]
    assert token_audit(res.log) == []


def test_unsorted_spiral_placement():
    lst = UnsortedList([0, 1], 1)
    res, out = seq(lst, 2, script(lst, [("insert", 1), ("insert", 2), ("insert", 3)]))
    assert out == [True, True, True]
    where = {k: (srv.index, pos // 2) for srv in lst.servers for pos, ch in srv.chunks.items() for k in ch}
    assert where == {1: (0, 0), 2: (1, 0), 3: (0, 1)}


def test_unsorted_bounded_rounds_refuse():
    lst = UnsortedList([0, 1], 1, max_rounds=1)
    _, out = seq(lst, 2, script(lst, [("insert", 1), ("insert", 2), ("insert", 3)]))
    assert out == [True, True, False]


def test_alt_duplicate_found_in_probe_phase():
    lst = UnsortedListAlt([0, 1], 2)
    res, out = seq(lst, 2, script(lst, [("insert", 4), ("insert", 4)]))
    assert out == [True, False]
    # the second insert never reached the targeted phase
    inserts = [e for e in res.log if e[1] == "send" and e[4] == "INSERT" and e[2] == 2]
    assert len(inserts) == 1


def test_concurrent_deletes_one_winner():
    for seed in range(40):
        lst = UnsortedList([0, 1, 2], 2)
        sim = Sim(Topology(1, 6), SchedulerConfig(seed=seed, mode=RANDOM_FAIR))
        lst.spawn(sim)

        def setup(ctx):
            p = FlatPort(ctx)
            yield from lst.insert(p, 7)
            return (yield from lst.delete(p, 7))

        def rival(ctx):
            yield ctx.work(seed % 5)
            return (yield from lst.delete(FlatPort(ctx), 7))

        sim.spawn(3, setup)
        sim.spawn(4, rival)
        sim.spawn(5, rival)
        r = sim.run()
        # the set ends empty and 7 was removed exactly once after being inserted
        assert lst.contents() == {}
        assert sum(bool(r.results[c]) for c in (3, 4, 5)) == 1


@pytest.mark.parametrize("name", ["ulist", "ulist-alt", "slist"])
def test_linearizable_small(name):
    for seed in range(60):
        _, r, spec = run_case(name, seed)
        assert check_linearizable(r.history, spec).ok


def test_unsorted_server_sets_disjoint():
    rng = random.Random(2)
    for seed in range(30):
        lst = UnsortedList([0, 1, 2], 1)
        sim = Sim(Topology(1, 6), SchedulerConfig(seed=seed))
        lst.spawn(sim)

        def client(ctx):
            p = FlatPort(ctx)
            for _ in range(6):
                k = rng.randrange(5)
                yield from (lst.insert(p, k) if rng.random() < 0.6 else lst.delete(p, k))

        for c in range(3, 6):
            sim.spawn(c, client)
        assert not sim.run().deadlock
        seen = []
        for s in lst.servers:
            for ch in s.chunks.values():
                seen.extend(ch)
        assert len(seen) == len(set(seen))


# ----------------------------------------------------------------- sorted

def test_sorted_ample_capacity():
    lst = SortedList([0, 1], 8)
    _, out = seq(lst, 2, script(lst, [("insert", 3), ("insert", 1), ("insert", 2)]))
    assert out == [True] * 3
    assert lst.partitions() == [[1, 2, 3], []]


def test_sorted_move_keeps_order():
    lst = SortedList([0, 1], 2)
    res, out = seq(lst, 2, script(lst, [("insert", 1), ("insert", 3), ("insert", 2)]))
    assert out == [True] * 3
    assert lst.ordered()
    assert sorted(k for part in lst.partitions() for k in part) == [1, 2, 3]
    assert any(e[1] == "move" for e in res.log)


def test_sorted_full_everywhere_refuses():
    lst = SortedList([0, 1], 1)
    _, out = seq(lst, 2, script(lst, [("insert", 1), ("insert", 2), ("insert", 3)]))
    assert out == [True, True, False]
    assert lst.partitions() == [[1], [2]]


def test_sorted_search_delete():
    lst = SortedList([0, 1, 2], 2)
    ops = [("insert", k) for k in (5, 1, 9, 3)] + [("search", 9), ("delete", 9), ("search", 9), ("delete", 4)]
    _, out = seq(lst, 3, script(lst, ops))
    assert out == [True] * 4 + [True, True, False, False]
    assert lst.ordered()


def test_cv_monotone_per_client():
    for seed in range(40):
        _, r, _ = run_case("slist", seed)
        last = {}
        for e in r.log:
            if e[1] == "cv":
                key = (e[2], e[4])
                assert e[5] >= last.get(key, 0)
                last[key] = e[5]


def test_search_during_move_answered_once():
    # a key present the whole time must be acknowledged by exactly one server
    for seed in range(60):
        lst = SortedList([0, 1], 2, chunk=1)
        sim = Sim(Topology(1, 5), SchedulerConfig(seed=seed, mode=RANDOM_FAIR))
        lst.spawn(sim)
        acks = []

        def filler(ctx):
            p = FlatPort(ctx)
            for k in (1, 2, 3):
                yield from lst.insert(p, k)

        def searcher(ctx):
            p = FlatPort(ctx)
            yield from lst.insert(p, 0)
            for _ in range(4):
                seq_no = lst._next(p)
                for c in lst.cores:
                    yield from p.send(c, "SEARCH", {"key": 0, "seq": seq_no})
                rs = []
                for _ in lst.cores:
                    rs.append((yield ctx.recv(pred=lambda e, s=seq_no: e.body.get("seq") == s)))
                acks.append(sum(r.op == "ACK" for r in rs))

        sim.spawn(2, filler)
        sim.spawn(3, searcher)
        assert not sim.run().deadlock
        assert acks == [1, 1, 1, 1]
