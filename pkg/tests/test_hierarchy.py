import random

import pytest

from harness import elimination_run, sends
from mpds.bench import WorkloadConfig, run_workload
from mpds.dir_structs import COMB, ELIM, PUSH
from mpds.hierarchy import (CCSynchPort, CStack, Master, ccsynch_setup, combine_counts,
                            combiner_audit, eliminate)
from mpds.node import BATCH, IN, NOTIFY, MasterPort
from mpds.simcore import ROUND_ROBIN, SchedulerConfig, Sim, Topology
from mpds.verify import check_linearizable


class FakeCtx:
    me, now, island = 0, 0, 0

    def note(self, *a):
        pass


def req(dest, op, cid, **body):
    return {"dest": dest, "op": op, "body": dict(body, cid=cid, via=0)}


def test_master_buffers_per_destination():
    m = Master(cap=16)
    m.ctx = FakeCtx()
    assert m._on_client(req(5, PUSH, 1, data=1)) == []
    assert sum(len(v) for v in m.buf.values()) == 1
    m._on_client(req(6, PUSH, 2, data=2))
    assert len(m.buf) == 2


def test_master_timer_with_nothing_buffered_sends_nothing():
    m = Master()
    m.ctx = FakeCtx()
    assert m._on_timer() == []


def test_pure_elimination():
    pairs, rest = eliminate([("PUSH", "a"), ("POP", None)], "PUSH", "POP")
    assert [(a[1], b[0]) for a, b in pairs] == [("a", "POP")] and rest == []
    pairs, rest = eliminate([("PUSH", "a"), ("PUSH", "b"), ("POP", None)], "PUSH", "POP")
    assert pairs[0][0][1] == "a" and rest == [("PUSH", "b")]
    assert eliminate([("PUSH", 1), ("PUSH", 2)], "PUSH", "POP") == ([], [("PUSH", 1), ("PUSH", 2)])


def test_combine_counts():
    assert combine_counts(-1, 3) == [0, 1, 2]
    assert combine_counts(4, 0) == []


def island_run(n_clients, cap=16, period=8, ops_per_client=1):
    """One island of clients pushing to a stack server on another island."""
    c = n_clients + 1
    topo = Topology(2, c)
    sim = Sim(topo, SchedulerConfig(mode=ROUND_ROBIN))
    server = c
    st = CStack(server)
    st.spawn(sim)
    m = Master(period=period, cap=cap)
    sim.spawn(0, m.run, daemon=True)

    def client(ctx):
        port = MasterPort(ctx, 0)
        out = []
        for i in range(ops_per_client):
            out.append((yield from st.push(port, (ctx.me, i))))
        return out

    for i in range(n_clients):
        sim.spawn(1 + i, client)
    res = sim.run()
    assert not res.deadlock
    return res, m, st


def test_early_flush_at_cap():
    res, m, _ = island_run(5, cap=4, period=64)
    cap_flushes = [e for e in res.log if e[1] == "flush" and e[4] == "cap"]
    assert len(cap_flushes) == 1


def test_seven_requests_one_batch():
    res, m, st = island_run(7)
    assert len(sends(res.log, op=BATCH, src=0)) == 1
    assert res.received[st.core] == 1
    # replies come back packed, then split one per client
    assert len(sends(res.log, op=IN, dst=0)) == 1
    assert all(len(sends(res.log, src=0, dst=c)) == 1 for c in range(1, 8))


def test_large_batch_goes_by_dma():
    res, m, st = island_run(9)     # 9 > 4 * MMS
    assert m.stats["dma"] == 1
    assert len(sends(res.log, op=NOTIFY, src=0)) == 1
    assert len(sends(res.log, op=BATCH, src=0)) == 0
    assert st.server.items and len(st.server.items) == 9


def test_replies_exactly_once_across_servers():
    for seed in range(10):
        o = run_workload(WorkloadConfig("dqueue", islands=2, cores=6, ops=60, seed=seed, log=True))
        per_client = {}
        for e in o.result.log:
            if e[1] == "send" and e[3] in o.clients and e[4] in ("KEY", "ACK", "NACK", "DATA", ELIM):
                per_client[e[3]] = per_client.get(e[3], 0) + 1
        assert not o.metrics.deadlock
        # every op issues at most two server requests; replies never exceed requests
        assert sum(per_client.values()) == sum(
            1 for e in o.result.log if e[1] == "send" and e[2] in o.clients)


def test_combining_one_message_per_flush():
    o = run_workload(WorkloadConfig("dqueue", islands=2, cores=6, ops=80, seed=1, log=True))
    sync = o.rig.sync
    into_sync = [e for e in o.result.log if e[1] == "send" and e[3] == sync]
    assert into_sync and all(e[4] == COMB for e in into_sync)
    assert not o.metrics.deadlock


@pytest.mark.parametrize("algo", ["hstack", "estack", "dstack", "hqueue", "dqueue", "ddeque", "tqueue", "tdeque"])
def test_batching_transparency(algo):
    for seed in range(25):
        elim = algo in ("estack", "dstack", "ddeque") and seed % 2 == 0
        cfg = WorkloadConfig(algo, islands=2, cores=5, ops=12, seed=seed, hier=True, elim=elim,
                             servers=2, period=4)
        o = run_workload(cfg)
        assert not o.metrics.deadlock
        assert check_linearizable(o.result.history, o.rig.spec).ok, (algo, seed)


def test_elimination_differential():
    fewer = 0
    for seed in range(30):
        r_on, n_on, spec = elimination_run(seed, True)
        r_off, n_off, _ = elimination_run(seed, False)
        assert check_linearizable(r_on.history, spec).ok
        assert n_on <= n_off
        fewer += n_on < n_off
    assert fewer > 0


# ------------------------------------------------------------- CC-Synch

def cc_run(seed, n, h, plans, mode=None):
    sim = Sim(Topology(1, n + 1), SchedulerConfig(seed=seed, **({"mode": mode} if mode else {})))
    st = CStack(0)
    st.spawn(sim)
    ccsynch_setup(sim, 0)
    ports = {}

    def client(ctx, plan):
        p = CCSynchPort(ctx, h=h)
        ports[ctx.me] = p
        for op, v in plan:
            ctx.invoke(op, *(() if v is None else (v,)))
            r = yield from (st.push(p, v) if op == "push" else st.pop(p))
            ctx.respond(op, r)

    for i, plan in enumerate(plans):
        sim.spawn(1 + i, client, plan)
    res = sim.run()
    assert not res.deadlock
    return res, ports


def test_ccsynch_single_client_is_own_combiner():
    res, ports = cc_run(0, 1, 64, [[("push", 1)]])
    assert ports[1].phases == 1
    assert len(sends(res.log, op=BATCH)) == 1


def test_ccsynch_one_combiner_serves_all():
    res, ports = cc_run(0, 4, 64, [[("push", i)] for i in range(4)], mode=ROUND_ROBIN)
    assert sum(p.phases for p in ports.values()) == 1
    assert len(sends(res.log, op=BATCH)) == 1


def test_ccsynch_bounded_combining():
    res, ports = cc_run(0, 4, 2, [[("push", i)] for i in range(4)], mode=ROUND_ROBIN)
    assert sum(p.phases for p in ports.values()) >= 2


def test_ccsynch_random_runs():
    rng = random.Random(4)
    for seed in range(80):
        n = 2 + seed % 3
        plans = [[("push", 10 * c + i) if rng.random() < 0.5 else ("pop", None) for i in range(3)]
                 for c in range(n)]
        res, _ = cc_run(seed, n, 1 + seed % 4, plans)
        assert combiner_audit(res.log) == []
        assert check_linearizable(res.history, "stack").ok


def test_combiner_audit_flags_overlap():
    log = [(0, "comb_start", 1, 1, "0", 1), (1, "comb_start", 2, 2, "0", 2)]
    assert combiner_audit(log)
