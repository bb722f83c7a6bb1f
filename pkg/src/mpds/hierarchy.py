"""Island masters, elimination, counter combining and CC-Synch.

A master sits on one core of each island.  Clients hand it requests
(``OUT``); on every timer tick it ships one batch per (server, op) pair,
either as a single envelope or, when large, as a DMA transfer followed by
a small notification.  Servers answer with packed replies (``IN``) that the
master splits back to its clients.  Two optional reductions run before a
flush: elimination of opposite operations and counter combining toward
directory synchronizers.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from typing import Optional

from .dir_structs import COMB, COMBR, DEQ, ELIM, ENQ, POP, PUSH
from .node import BATCH, IN, NOTIFY, OUT, Reply, Server
from .simcore import ENGINE, Recv, Send

ACK, NACK, DATA = "ACK", "NACK", "DATA"


# --------------------------------------------------------- pure helpers

def eliminate(requests, ins_op, outs_op):
    """FIFO-pair inserts with removals.  Returns (pairs, residual)."""
    ins = [r for r in requests if r[0] == ins_op]
    outs = [r for r in requests if r[0] == outs_op]
    k = min(len(ins), len(outs))
    pairs = list(zip(ins[:k], outs[:k]))
    paired = {id(r) for p in pairs for r in p}
    residual = [r for r in requests if id(r) not in paired]
    return pairs, residual


def combine_counts(top_key, f):
    """Keys handed to ``f`` combined pushes when the counter stands at ``top_key``."""
    return list(range(top_key + 1, top_key + 1 + f))


# ------------------------------------------------------- central servers

class CentralStack(Server):
    def __init__(self):
        super().__init__()
        self.items = []

    def handle(self, src, op, body):
        if op == PUSH:
            self.items.append(body["data"])
            self.reply(body, ACK)
        elif op == POP:
            if self.items:
                self.reply(body, DATA, data=self.items.pop())
            else:
                self.reply(body, NACK)
        else:
            raise ValueError(f"central stack: unknown op {op!r}")


class CentralQueue(Server):
    def __init__(self):
        super().__init__()
        self.items = deque()

    def handle(self, src, op, body):
        if op == ENQ:
            self.items.append(body["data"])
            self.reply(body, ACK)
        elif op == DEQ:
            if self.items:
                self.reply(body, DATA, data=self.items.popleft())
            else:
                self.reply(body, NACK)
        else:
            raise ValueError(f"central queue: unknown op {op!r}")


class _Central:
    server_class = Server

    def __init__(self, core):
        self.core = core
        self.server = None

    def spawn(self, sim):
        self.server = self.server_class()
        sim.spawn(self.core, self.server.run, daemon=True, name=self.server_class.__name__)
        return self.server


class CStack(_Central):
    server_class = CentralStack

    def push(self, port, data):
        r = yield from port.call(self.core, PUSH, {"data": data})
        return r.op in (ACK, ELIM)

    def pop(self, port):
        r = yield from port.call(self.core, POP)
        return r.get("data") if r.op in (DATA, ELIM) else None


class CQueue(_Central):
    server_class = CentralQueue

    def enqueue(self, port, data):
        r = yield from port.call(self.core, ENQ, {"data": data})
        return r.op in (ACK, ELIM)

    def dequeue(self, port):
        r = yield from port.call(self.core, DEQ)
        return r.get("data") if r.op in (DATA, ELIM) else None


# ---------------------------------------------------------------- master

class Master:
    """One island master.

    ``eliminate``: {dest: (insert op, remove op)} or {dest: [pairs]} to cancel locally.
    ``combine``: destinations that accept one counts-only ``COMB`` message.
    ``patience``: ticks a residual eliminable request may wait for a partner.
    ``batching``: when False every request still waits for a tick (so it can
    be eliminated) but then travels alone.
    """

    def __init__(self, period=8, cap=16, mms=2, dma_factor=4, batching=True,
                 eliminate: Optional[dict] = None, combine=(), patience=0,
                 combine_order=(PUSH, ENQ, POP, DEQ)):
        self.period = period
        self.cap = cap
        self.dma_limit = dma_factor * mms
        self.batching = batching
        self.elim = dict(eliminate or {})
        self.combine = set(combine)
        self.patience = patience
        self.combine_order = combine_order
        self.buf: "OrderedDict[tuple, list]" = OrderedDict()
        self.pending_comb: dict = {}
        self.dma_wait: dict = {}
        self.ctx = None
        self.tick = 0
        self.stats = {"flushes": 0, "batches": 0, "dma": 0, "eliminated": 0, "comb": 0}
        self._n = 0

    # entry point
    def run(self, ctx):
        self.ctx = ctx
        nxt = (ctx.now // self.period + 1) * self.period
        while True:
            msg = yield Recv(deadline=nxt)
            out = []
            if msg is None:
                self.tick += 1
                out = self._on_timer()
                nxt = (ctx.now // self.period + 1) * self.period
            elif msg.op == OUT:
                out = self._on_client(msg.body)
            elif msg.op == IN:
                out = self._split(msg.body["items"])
            elif msg.op == COMBR:
                out = self._on_combr(msg.body)
            elif msg.src == ENGINE and msg.op == "DMA_DONE":
                dest, n = self.dma_wait.pop(msg.body["tag"])
                ctx.memory().pop(msg.body["tag"], None)
                out = [Send(dest, NOTIFY, {"region": msg.body["tag"], "count": n})]
            else:
                raise ValueError(f"master: unexpected {msg.op!r}")
            for a in out:
                yield a

    # client traffic
    def _on_client(self, b):
        dest, op, body = b["dest"], b["op"], b["body"]
        key = (dest, op)
        self.buf.setdefault(key, []).append((op, body, self.tick))
        if self.batching and dest not in self.elim and dest not in self.combine \
                and len(self.buf[key]) >= self.cap:
            self.ctx.note("flush", "cap", dest)
            return self._ship(dest, self.buf.pop(key))
        return []

    def _split(self, items):
        return [Send(body["cid"], op, body) for op, body in items]

    def _on_timer(self):
        out = []
        if self.elim:
            out += self._eliminate()
        if not self.buf:
            return out
        self.stats["flushes"] += 1
        self.ctx.note("flush", "timer", self.tick)
        dests = OrderedDict()
        for (dest, op), reqs in list(self.buf.items()):
            if dest in self.elim and self.patience:
                keep = [r for r in reqs if self.tick - r[2] < self.patience]
                go = [r for r in reqs if self.tick - r[2] >= self.patience]
                if keep:
                    self.buf[(dest, op)] = keep
                else:
                    del self.buf[(dest, op)]
                reqs = go
            else:
                del self.buf[(dest, op)]
            if reqs:
                dests.setdefault(dest, []).append((op, reqs))
        for dest, groups in dests.items():
            if dest in self.combine:
                out += self._combine(dest, groups)
            else:
                for _, reqs in groups:
                    out += self._ship(dest, reqs)
        return out

    def _eliminate(self):
        out = []
        for dest, ins_op, outs_op in self._elim_pairs():
            ins = self.buf.get((dest, ins_op), [])
            outs = self.buf.get((dest, outs_op), [])
            k = min(len(ins), len(outs))
            for (_, a, _), (_, b, _) in zip(ins[:k], outs[:k]):
                out.append(Send(a["cid"], ELIM, {"cid": a["cid"], "sid": self.ctx.me, "elim": True}))
                out.append(Send(b["cid"], ELIM, {"cid": b["cid"], "sid": self.ctx.me,
                                                 "data": a.get("data"), "elim": True}))
                self.ctx.note("elim", str(dest), (a["cid"], b["cid"]))
            self.stats["eliminated"] += 2 * k
            for op, rest in ((ins_op, ins[k:]), (outs_op, outs[k:])):
                if rest:
                    self.buf[(dest, op)] = rest
                else:
                    self.buf.pop((dest, op), None)
        return out

    def _elim_pairs(self):
        for dest, spec in self.elim.items():
            for ins_op, outs_op in ([spec] if isinstance(spec[0], str) else spec):
                yield dest, ins_op, outs_op

    def _ship(self, dest, reqs):
        items = [(op, body) for op, body, _ in reqs]
        if not self.batching:
            return [Send(dest, op, body) for op, body in items]
        self.stats["batches"] += 1
        if len(items) > self.dma_limit:
            self._n += 1
            region = f"batch{self.ctx.me}.{self._n}"
            self.ctx.memory(region)[:] = items
            self.dma_wait[region] = (dest, len(items))
            self.stats["dma"] += 1
            return [self.ctx.dma(dest, region, region, len(items), tag=region)]
        return [Send(dest, BATCH, {"items": items, "count": len(items)}, size=len(items))]

    def _combine(self, dest, groups):
        by_op = {op: [body for _, body, _ in reqs] for op, reqs in groups}
        order = [op for op in self.combine_order if op in by_op] + \
                [op for op in by_op if op not in self.combine_order]
        self._n += 1
        self.pending_comb[self._n] = {op: by_op[op] for op in order}
        self.stats["comb"] += 1
        counts = [(op, len(by_op[op])) for op in order]
        return [Send(dest, COMB, {"counts": counts, "batch": self._n, "cid": self.ctx.me})]

    def _on_combr(self, body):
        waiting = self.pending_comb.pop(body["batch"])
        out = []
        for op, grants in body["grants"]:
            for req, (rop, fields) in zip(waiting[op], grants):
                b = dict(fields, cid=req["cid"], sid=body.get("sid"))
                out.append(Send(req["cid"], rop, b))
        return out


def master_core(topology, island):
    return island * topology.cores_per_island


def spawn_masters(sim, topology, **kw):
    masters = {}
    for isl in range(topology.islands):
        m = Master(**kw)
        sim.spawn(master_core(topology, isl), m.run, daemon=True, name=f"master{isl}")
        masters[isl] = m
    return masters


# --------------------------------------------------------------- CC-Synch

def _f(node, field):
    return ("ccs", node, field)


def ccsynch_setup(sim, island):
    """Dummy node ``-1`` starts as the list tail; it is nobody's and not waiting."""
    sim.cells[(island, ("ccs", "tail"))] = -1
    for field, v in (("wait", False), ("completed", False), ("next", None), ("req", None)):
        sim.cells[(island, _f(-1, field))] = v


class CCSynchPort:
    """Combining over island-shared cells.

    Only request/response servers are supported: the combiner waits for
    every reply of its batch before handing over, so a server that defers
    replies (blocking deletes, synchronous queues) would stall the island.
    """

    def __init__(self, ctx, h=64):
        self.ctx = ctx
        self.h = h
        self.node = ctx.me   # this process' spare node
        self.phases = 0

    def _w(self, node, field, v):
        return self.ctx.write_cell(_f(node, field), v)

    def _r(self, node, field):
        return self.ctx.read_cell(_f(node, field))

    def send(self, dest, op, body=None):  # pragma: no cover - guard
        raise NotImplementedError("CC-Synch clients use call()")

    def call(self, dest, op, body=None):
        ctx = self.ctx
        nxt = self.node
        yield self._w(nxt, "next", None)
        yield self._w(nxt, "wait", True)
        yield self._w(nxt, "completed", False)
        cur = yield ctx.atomic(("ccs", "tail"), lambda v: (nxt, v))
        req = (dest, op, dict(body or {}, cid=ctx.me))
        yield self._w(cur, "req", req)
        yield self._w(cur, "next", nxt)
        self.node = cur
        yield ctx.wait_cell(_f(cur, "wait"), lambda v: not v)
        done = yield self._r(cur, "completed")
        if done:
            ret = yield self._r(cur, "ret")
            return ret
        ret = yield from self._combine(cur)
        return ret

    def _combine(self, cur):
        ctx = self.ctx
        self.phases += 1
        ctx.note("comb_start", str(ctx.island), ctx.me)
        nodes = []
        tmp = cur
        while True:
            nx = yield self._r(tmp, "next")
            if nx is None or len(nodes) >= self.h:
                break
            req = yield self._r(tmp, "req")
            nodes.append((tmp, req))
            tmp = nx
        # one batch per destination, replies come back to us
        by_dest = OrderedDict()
        owner = {}
        for node, (dest, op, body) in nodes:
            b = dict(body, via=ctx.me)
            by_dest.setdefault(dest, []).append((op, b))
            owner[b["cid"]] = node
        for dest, items in by_dest.items():
            yield Send(dest, BATCH, {"items": items, "count": len(items)}, size=len(items))
        got = {}
        while len(got) < len(nodes):
            m = yield Recv(op=IN)
            for op, body in m.body["items"]:
                got[body["cid"]] = Reply(op, body, m.src)
        mine = None
        for cid, rep in got.items():
            node = owner[cid]
            if cid == ctx.me:
                mine = rep
                continue
            yield self._w(node, "ret", rep)
            yield self._w(node, "completed", True)
            yield self._w(node, "wait", False)
        ctx.note("comb_end", str(ctx.island), ctx.me)
        yield self._w(tmp, "wait", False)
        return mine


def combiner_audit(log) -> list[str]:
    """Combining phases of one island must not overlap."""
    active: dict = {}
    bad = []
    for step, kind, src, _, op, _ in log:
        if kind == "comb_start":
            if active.get(op) is not None:
                bad.append(f"step {step}: island {op} combiner {src} overlaps {active[op]}")
            active[op] = src
        elif kind == "comb_end":
            active[op] = None
    return bad
