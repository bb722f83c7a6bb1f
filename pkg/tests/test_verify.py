import io
import random

import pytest
from hypothesis import given, settings, strategies as st

from harness import SPEC_OPS, random_history
from mpds.simcore import HistoryEvent
from mpds.verify import (SPECS, CapExceeded, HistoryError, Recorder, check_linearizable,
                         intervals, permutation_oracle, read_history, run_sequential, to_ops,
                         write_history)


def hist(*steps):
    """steps: ("i", pid, op, args) or ("r", pid, op, result)."""
    rec = Recorder()
    for s in steps:
        if s[0] == "i":
            rec.invoke(s[1], s[2], *s[3])
        else:
            rec.respond(s[1], s[2], s[3])
    return rec.events


def test_sequential_oracles():
    assert run_sequential(SPECS["stack"], [("push", "a"), ("push", "b"), ("pop",)])[-1] == "b"
    assert run_sequential(SPECS["queue"], [("enq", "a"), ("enq", "b"), ("deq",)])[-1] == "a"
    assert run_sequential(SPECS["deque"], [("enq_h", "a"), ("enq_t", "b"), ("deq_t",)])[-1] == "b"
    assert run_sequential(SPECS["set"], [("insert", 1), ("insert", 1), ("search", 1)]) == [True, False, True]
    assert run_sequential(SPECS["register"], [("faa", 2), ("swap", 5), ("cas", 5, 1), ("read",)]) == [2, 2, 5, 1]
    assert run_sequential(SPECS["registers"], [("write", 0, 4), ("read", 1), ("read", 0)]) == [None, 0, 4]


def test_recorder_well_formed():
    h = hist(("i", 1, "push", ("a",)), ("r", 1, "push", True))
    assert len(to_ops(h)) == 1
    with pytest.raises(HistoryError):
        Recorder().respond(1, "pop", None)
    bad = [HistoryEvent(0, 1, "respond", "pop", (), None)]
    with pytest.raises(HistoryError):
        to_ops(bad)


def test_intervals_overlap():
    h = hist(("i", 1, "enq", ("a",)), ("i", 2, "enq", ("b",)), ("r", 1, "enq", True), ("r", 2, "enq", True))
    (p1, _, i1, r1), (p2, _, i2, r2) = intervals(h)
    assert i1 < i2 < r1 < r2


def test_stack_examples():
    ok = hist(("i", 1, "push", ("a",)), ("r", 1, "push", True), ("i", 2, "pop", ()), ("r", 2, "pop", "a"))
    assert check_linearizable(ok, "stack").ok
    bad = hist(("i", 1, "push", ("a",)), ("r", 1, "push", True), ("i", 2, "pop", ()), ("r", 2, "pop", "b"))
    res = check_linearizable(bad, "stack")
    assert not res.ok and res.failing_prefix is not None


def test_overlapping_enqueues_either_order():
    h = hist(("i", 1, "enq", ("a",)), ("i", 2, "enq", ("b",)), ("r", 1, "enq", True), ("r", 2, "enq", True),
             ("i", 1, "deq", ()), ("r", 1, "deq", "b"), ("i", 2, "deq", ()), ("r", 2, "deq", "a"))
    assert check_linearizable(h, "queue").ok
    assert permutation_oracle(h, "queue")


def test_pending_closures():
    # a pending push whose value was popped must count as taken effect
    h = hist(("i", 1, "push", ("a",)), ("i", 2, "pop", ()), ("r", 2, "pop", "a"))
    r = check_linearizable(h, "stack")
    assert r.ok and r.closure == "complete"
    # a pending push nobody saw can be dropped
    h = hist(("i", 1, "push", ("a",)), ("i", 2, "pop", ()), ("r", 2, "pop", None))
    assert check_linearizable(h, "stack").ok


def test_witness_replays():
    h = hist(("i", 1, "push", (1,)), ("i", 2, "push", (2,)), ("r", 2, "push", True),
             ("r", 1, "push", True), ("i", 3, "pop", ()), ("r", 3, "pop", 1))
    w = check_linearizable(h, "stack").witness
    assert [o.name for o in w] == ["push", "push", "pop"]
    assert run_sequential(SPECS["stack"], [(o.name, *o.args) for o in w])[-1] == 1


def test_cap_refusal():
    rec = Recorder()
    for i in range(15):
        rec.invoke(1, "push", i)
        rec.respond(1, "push", True)
    with pytest.raises(CapExceeded):
        check_linearizable(rec.events, "stack")


def test_history_csv_roundtrip():
    h = hist(("i", 1, "cas", (0, 1, 2)), ("r", 1, "cas", 0), ("i", 2, "pop", ()))
    buf = io.StringIO()
    write_history(h, buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == "idx,pid,kind,op,args,result"
    back = read_history(io.StringIO(text))
    assert [(e.pid, e.kind, e.op, e.args, e.result) for e in back] == \
        [(e.pid, e.kind, e.op, e.args, e.result) for e in h]


@settings(max_examples=150, deadline=None)
@given(st.sampled_from(sorted(SPEC_OPS)), st.integers(1, 7), st.integers(0, 10**9))
def test_checker_agrees_with_permutations(spec, n, seed):
    h = random_history(random.Random(seed), spec, n)
    assert check_linearizable(h, spec).ok == permutation_oracle(h, spec)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(sorted(SPEC_OPS)), st.integers(1, 9), st.integers(0, 10**9))
def test_uncorrupted_histories_linearizable(spec, n, seed):
    h = random_history(random.Random(seed), spec, n, corrupt=0.0)
    assert check_linearizable(h, spec).ok
