"""Acceptance criteria as functions returning (passed, detail)."""

from __future__ import annotations

import random
import time
from collections import Counter

from harness import CASES, WithDirectory, elimination_run, random_history, run_case, run_procs
from mpds.bench import WorkloadConfig, run_workload
from mpds.dir_structs import DirStack
from mpds.lists import SortedList
from mpds.node import FlatPort
from mpds.simcore import RANDOM_FAIR, SchedulerConfig, Sim, Topology, check_fifo, log_to_csv
from mpds.syncprims import Atomics, rw_audit
from mpds.token_structs import (DEQ_H, DEQ_T, ENQ_H, ENQ_T, REPLY_OPS, TokenDeque, TokenQueue,
                                token_audit)
from mpds.verify import check_linearizable, permutation_oracle

TOKEN_CASES = ["tstack", "tqueue-static", "tqueue-dynamic", "tdeque-static", "tdeque-dynamic"]


def linearizability_suite(runs=500):
    t0 = time.time()
    bad = []
    for name in CASES:
        for seed in range(runs):
            _, r, spec = run_case(name, seed)
            if r.deadlock or r.truncated or not check_linearizable(r.history, spec).ok:
                bad.append((name, seed))
    took = time.time() - t0
    return not bad and took < 300, f"{len(CASES)} structures x {runs} runs, {len(bad)} failures {bad[:3]}, {took:.1f}s"


def token_invariants(runs=200):
    bad = []
    for i in range(runs):
        name = TOKEN_CASES[i % len(TOKEN_CASES)]
        _, r, _ = run_case(name, 10_000 + i)
        v = token_audit(r.log)
        if v or r.deadlock:
            bad.append((name, i, v[:1]))
    return not bad, f"{runs} runs, {len(bad)} with violations {bad[:2]}"


def _chasing_run(cls, seed, n_clients=4, per_client=10):
    """Tiny chunks so tokens move constantly and cached holders go stale."""
    ns = 3
    ring = cls(list(range(ns)), 1, dynamic=True)
    rng = random.Random(seed)
    sim = Sim(Topology(1, ns + n_clients), SchedulerConfig(seed=seed, mode=RANDOM_FAIR))
    ring.spawn(sim)
    ends = [("enq_t", "deq_t"), ("enq_h", "deq_h")] if cls is TokenDeque else [("enqueue", "dequeue")]

    def client(ctx, i):
        p = FlatPort(ctx)
        for k in range(per_client):
            ins, rem = rng.choice(ends)
            yield ctx.work(rng.randint(0, 4))
            if (k + i) % 2 == 0:
                yield from getattr(ring, ins)(p, 100 * ctx.me + k)
            else:
                yield from getattr(ring, rem)(p)

    for i in range(n_clients):
        sim.spawn(ns + i, client, i)
    return sim.run(), ns, n_clients * per_client


def exactly_once(runs=100):
    dup = lost = chased_runs = 0
    req_ops = {ENQ_T, ENQ_H, DEQ_T, DEQ_H}
    total = 0
    for cls in (TokenQueue, TokenDeque):
        for seed in range(runs):
            r, ns, n_ops = _chasing_run(cls, seed)
            total += 1
            servers = set(range(ns))
            # every client request carries (cid, seq); count the replies addressed to it
            asked = {(e[2], e[5].body["seq"]) for e in r.log
                     if e[1] == "send" and e[2] not in servers and e[4] in req_ops}
            got = Counter((e[3], e[5].body["seq"]) for e in r.log
                          if e[1] == "send" and e[2] in servers and e[3] not in servers
                          and e[4] in REPLY_OPS)
            dup += sum(n - 1 for n in got.values() if n > 1)
            lost += len(asked - set(got)) + (0 if len(asked) == n_ops else 1)
            if r.deadlock:
                lost += 1
            forwards = [e for e in r.log if e[1] == "send" and e[2] in servers and e[3] in servers
                        and e[4] in req_ops]
            chased_runs += bool(forwards)
    ok = dup == 0 and lost == 0 and chased_runs == total
    return ok, f"{total} runs, {chased_runs} with chased requests, {dup} duplicate and {lost} lost replies"


def message_counts():
    got = []
    for p_count in (1, 2, 5, 10):
        def body(ctx, port, n=p_count):
            for i in range(n):
                yield from s.push(port, i)
            for _ in range(n):
                assert (yield from s.pop(port)) is not None

        s = WithDirectory(DirStack, [0, 1, 2])
        r, _ = run_procs([body], s, n_servers=3)
        got.append((p_count, sum(r.sent.values())))

    def empty(ctx, port):
        return (yield from s.pop(port))

    s = WithDirectory(DirStack, [0, 1, 2])
    r, _ = run_procs([empty], s, n_servers=3)
    empty_msgs = sum(r.sent.values())
    ok = all(n == 8 * p for p, n in got) and empty_msgs == 2
    return ok, f"(P, envelopes) {got}; empty pop {empty_msgs}"


def sf_ordering(seed=0, work=512):
    def sf(algo, **kw):
        return run_workload(WorkloadConfig(algo, islands=8, cores=8, ops=10_000, work=work,
                                           seed=seed, **kw)).metrics.sf

    c, h = sf("cqueue"), sf("hqueue")
    out = run_workload(WorkloadConfig("dqueue", islands=8, cores=8, ops=10_000, work=work, seed=seed))
    d, dsync = out.metrics.sf, out.metrics.sf_per_server[out.rig.sync]
    e, hs = sf("estack"), sf("hstack", elim=False)
    ok = c == 1.0 and h < c and dsync < h and e < hs
    return ok, (f"cqueue {c:.4f}, hqueue {h:.4f}, dqueue synchronizer {dsync:.4f} (max {d:.4f}), "
                f"estack {e:.4f} < hstack {hs:.4f}")


def elimination_soundness(runs=100):
    bad = []
    fewer = 0
    for seed in range(runs):
        r_on, n_on, spec = elimination_run(seed, True)
        r_off, n_off, _ = elimination_run(seed, False)
        lin = check_linearizable(r_on.history, spec).ok and not r_on.deadlock
        if not lin:
            bad.append(seed)
        fewer += n_on < n_off
    return not bad and fewer == runs, f"{runs} seeds, {len(bad)} not linearizable, {fewer} with fewer server messages"


def _slist_run(seed, anchors=(30, 31, 32)):
    # high anchors: later, smaller inserts push them across servers while searchers look for them
    rng = random.Random(seed)
    lst = SortedList([0, 1, 2, 3], 2)
    n_workers, n_searchers = 3, 2
    sim = Sim(Topology(1, 5 + n_workers + n_searchers), SchedulerConfig(seed=seed, mode=RANDOM_FAIR))
    lst.spawn(sim)
    ready = ("anchors", "in")
    found = []

    def setup(ctx):
        p = FlatPort(ctx)
        for k in anchors:
            yield from lst.insert(p, k)
        yield ctx.write_cell(ready, True)

    def worker(ctx, i):
        # each worker owns its keys; the first four ops are inserts so the list overflows
        p = FlatPort(ctx)
        mine = [k for k in range(40) if k not in anchors and k % n_workers == i]
        yield ctx.wait_cell(ready, bool)
        for j in range(10):
            k = rng.choice(mine)
            yield ctx.work(rng.randint(0, 3))
            if j < 4 or rng.random() < 0.6:
                yield from lst.insert(p, k)
            else:
                yield from lst.delete(p, k)

    def searcher(ctx):
        p = FlatPort(ctx)
        yield ctx.wait_cell(ready, bool)
        for _ in range(8):
            yield ctx.work(rng.randint(0, 3))
            found.append((yield from lst.search(p, rng.choice(anchors))))

    sim.spawn(4, setup)
    for i in range(n_workers):
        sim.spawn(5 + i, worker, i)
    for i in range(n_searchers):
        sim.spawn(5 + n_workers + i, searcher)
    r = sim.run()
    moves = sum(1 for e in r.log if e[1] == "move")
    return r, lst, moves, found


def sorted_partitions(runs=100):
    few_moves = unordered = misses = 0
    min_moves = None
    for seed in range(runs):
        r, lst, moves, found = _slist_run(seed)
        min_moves = moves if min_moves is None else min(min_moves, moves)
        few_moves += moves < 3
        unordered += not lst.ordered() or r.deadlock
        misses += found.count(False)
    ok = few_moves == 0 and unordered == 0 and misses == 0
    return ok, f"{runs} runs, min moves {min_moves}, {unordered} unordered, {misses} search misses"


def _rw_run(seed):
    rng = random.Random(seed)
    at = Atomics([0])
    n = rng.randint(3, 6)

    def section(kind, hold, delay):
        def body(ctx, p):
            yield ctx.work(delay)
            lock, unlock = (at.read_lock, at.read_unlock) if kind == "R" else (at.write_lock, at.write_unlock)
            for _ in range(2):
                yield from lock(p, 1)
                yield ctx.work(hold)
                yield from unlock(p, 1)
        return body

    bodies = [section(rng.choice("RRW"), rng.randint(0, 6), rng.randint(0, 8)) for _ in range(n)]
    r, _ = run_procs(bodies, at, n_servers=1, seed=seed, mode=RANDOM_FAIR)
    return r


def rw_monitor(runs=200):
    bad = 0
    with_writer_wait = 0
    for seed in range(runs):
        r = _rw_run(seed)
        v = rw_audit(r.log)
        bad += bool(v) or r.deadlock
        with_writer_wait += any(e[1] == "rw_arrive" and e[4] == "WL" for e in r.log)
    return bad == 0, f"{runs} runs ({with_writer_wait} with writers), {bad} with violations"


def determinism(pairs=50):
    names = list(CASES)
    mismatch = fifo = 0
    for i in range(pairs):
        name, seed = names[i % len(names)], 500 + i
        a = run_case(name, seed)[1]
        b = run_case(name, seed)[1]
        mismatch += log_to_csv(a.log) != log_to_csv(b.log)
        fifo += bool(check_fifo(a.log))
    return mismatch == 0 and fifo == 0, f"{pairs} pairs, {mismatch} log mismatches, {fifo} FIFO violations"


def checker_agreement(n=1000):
    rng = random.Random(2024)
    specs = ["stack", "queue", "deque", "set", "register"]
    disagree = 0
    yes = 0
    for i in range(n):
        spec = specs[i % len(specs)]
        h = random_history(rng, spec, rng.randint(1, 8))
        a = check_linearizable(h, spec).ok
        disagree += a != permutation_oracle(h, spec)
        yes += a
    return disagree == 0, f"{n} histories ({yes} linearizable), {disagree} disagreements"


CRITERIA = [
    (1, "linearizability suite", linearizability_suite),
    (2, "token invariants", token_invariants),
    (3, "exactly-once replies", exactly_once),
    (4, "directory stack message counts", message_counts),
    (5, "scalability-factor ordering", sf_ordering),
    (6, "elimination soundness", elimination_soundness),
    (7, "sorted-list partitions", sorted_partitions),
    (8, "rw monitor safety and priority", rw_monitor),
    (9, "determinism and FIFO", determinism),
    (10, "checker self-validation", checker_agreement),
]
