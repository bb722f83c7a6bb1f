"""Shared-memory primitives served by a manager process.

Cells live in the manager's local memory (region ``heap``, initial value 0)
so that a client already holding a monitor can touch them with remote
reads and writes instead of messages.
"""

from __future__ import annotations

from collections import deque

from .node import Server
from .simcore import Recv, SimFault

RD, WR, FAA, SWP, CAS = "RD", "WR", "FAA", "SWP", "CAS"
RL, RU, WL, WU, TL = "RL", "RU", "WL", "WU", "TL"
VAL, ACK, NACK = "VAL", "ACK", "NACK"
HEAP = "heap"


class RwMonitor:
    """Writer-priority readers/writers state with an optional phase threshold."""

    def __init__(self, threshold=None):
        self.readers: set = set()
        self.writer = None
        self.rq: deque = deque()
        self.wq: deque = deque()
        self.threshold = threshold
        self.writer_run = 0   # write phases finished while readers waited

    def free(self):
        return self.writer is None and not self.readers


class Manager(Server):
    def __init__(self, heap_size=64, threshold=None):
        super().__init__()
        self.heap_size = heap_size
        self.threshold = threshold
        self.monitors: dict = {}

    def started(self):
        self.ctx.memory(HEAP)[:] = [0] * self.heap_size

    def _heap(self):
        return self.ctx.memory(HEAP)

    def _check(self, addr):
        if not 0 <= addr < self.heap_size:
            raise SimFault(f"cell address {addr} outside heap of {self.heap_size}")

    def _mon(self, mid):
        m = self.monitors.get(mid)
        if m is None:
            m = self.monitors[mid] = RwMonitor(self.threshold)
        return m

    def _grant(self, mid, kind, req):
        self.ctx.note("rw_grant", kind, (mid, req["cid"]))
        self.reply(req, ACK)

    def handle(self, src, op, body):
        if op in (RD, WR, FAA, SWP, CAS):
            self._cell(op, body)
        elif op in (RL, RU, WL, WU, TL):
            self._monitor(op, body)
        else:
            raise ValueError(f"manager: unknown op {op!r}")

    def _cell(self, op, body):
        a = body["addr"]
        self._check(a)
        h = self._heap()
        old = h[a]
        if op == RD:
            self.reply(body, VAL, value=old)
        elif op == WR:
            h[a] = body["value"]
            self.reply(body, ACK)
        elif op == FAA:
            h[a] = old + body["value"]
            self.reply(body, VAL, value=h[a])
        elif op == SWP:
            h[a] = body["value"]
            self.reply(body, VAL, value=old)
        else:
            if old == body["old"]:
                h[a] = body["new"]
            self.reply(body, VAL, value=old)

    def _monitor(self, op, body):
        mid, cid = body["mon"], body["cid"]
        m = self._mon(mid)
        if op in (RL, WL, TL):
            self.ctx.note("rw_arrive", op, (mid, cid))
        if op == RL:
            if m.writer is None and not m.wq:
                m.readers.add(cid)
                self._grant(mid, "R", body)
            else:
                m.rq.append(body)
        elif op == WL:
            if m.free():
                self._take_write(m, mid, body)
            else:
                m.wq.append(body)
        elif op == TL:
            if m.free() and not m.wq:
                self._take_write(m, mid, body)
            else:
                self.reply(body, NACK)
        elif op == RU:
            if cid not in m.readers:
                raise SimFault(f"client {cid} read-unlocks monitor {mid} it does not hold")
            m.readers.discard(cid)
            self.ctx.note("rw_release", "R", (mid, cid))
            self.reply(body, ACK)
            if not m.readers and m.wq:
                self._take_write(m, mid, m.wq.popleft())
        else:  # WU
            if m.writer != cid:
                raise SimFault(f"client {cid} write-unlocks monitor {mid} it does not hold")
            m.writer = None
            self.ctx.note("rw_release", "W", (mid, cid))
            self.reply(body, ACK)
            if m.rq:
                m.writer_run += 1
            tired = m.threshold is not None and m.writer_run >= m.threshold and m.rq
            if m.wq and not tired:
                self._take_write(m, mid, m.wq.popleft())
            else:
                m.writer_run = 0
                while m.rq:
                    r = m.rq.popleft()
                    m.readers.add(r["cid"])
                    self._grant(mid, "R", r)

    def _take_write(self, m, mid, req):
        m.writer = req["cid"]
        self._grant(mid, "W", req)


class Atomics:
    """Client stubs.  Several manager cores shard cells by ``addr mod K``."""

    def __init__(self, cores, heap_size=64, threshold=None):
        self.cores = list(cores) if isinstance(cores, (list, tuple, range)) else [cores]
        self.heap_size = heap_size
        self.threshold = threshold
        self.managers = []

    def spawn(self, sim):
        self.managers = []
        for c in self.cores:
            m = Manager(self.heap_size, self.threshold)
            sim.spawn(c, m.run, daemon=True, name=f"manager{c}")
            self.managers.append(m)
        return self.managers

    def home(self, addr):
        return self.cores[addr % len(self.cores)]

    def _call(self, port, dest, op, **body):
        yield from port.send(dest, op, body)
        r = yield Recv(op=(VAL, ACK, NACK))
        return r

    def _cell(self, port, op, addr, **kw):
        r = yield from self._call(port, self.home(addr), op, addr=addr, **kw)
        return r.get("value")

    def read(self, port, addr):
        return (yield from self._cell(port, RD, addr))

    def write(self, port, addr, value):
        yield from self._cell(port, WR, addr, value=value)
        return None

    def faa(self, port, addr, delta):
        return (yield from self._cell(port, FAA, addr, value=delta))

    def swap(self, port, addr, value):
        return (yield from self._cell(port, SWP, addr, value=value))

    def cas(self, port, addr, old, new):
        return (yield from self._cell(port, CAS, addr, old=old, new=new))

    # monitors live on the manager that owns the cell of the same number
    def read_lock(self, port, mon):
        yield from self._call(port, self.home(mon), RL, mon=mon)

    def read_unlock(self, port, mon):
        yield from self._call(port, self.home(mon), RU, mon=mon)

    def write_lock(self, port, mon):
        yield from self._call(port, self.home(mon), WL, mon=mon)

    def write_unlock(self, port, mon):
        yield from self._call(port, self.home(mon), WU, mon=mon)

    def try_lock(self, port, mon):
        r = yield from self._call(port, self.home(mon), TL, mon=mon)
        return r.op == ACK

    def get_and_set(self, port, addr, value):
        """Swap composed from the cell's monitor plus remote memory accesses."""
        core = self.home(addr)
        yield from self.write_lock(port, addr)
        old = yield port.ctx.remote_read(core, HEAP, addr)
        yield port.ctx.remote_write(core, HEAP, addr, value)
        yield from self.write_unlock(port, addr)
        return old

    def get_and_set_cas_loop(self, port, addr, value):
        """The same swap built from read + CAS retries, for message comparisons."""
        while True:
            cur = yield from self.read(port, addr)
            seen = yield from self.cas(port, addr, cur, value)
            if seen == cur:
                return cur

    def lazy_cas(self, port, addr, old, new):
        """CAS that gives up at once (False) when anyone holds the cell's monitor."""
        if not (yield from self.try_lock(port, addr)):
            return False
        core = self.home(addr)
        cur = yield port.ctx.remote_read(core, HEAP, addr)
        if cur == old:
            yield port.ctx.remote_write(core, HEAP, addr, new)
        yield from self.write_unlock(port, addr)
        return cur == old


def rw_audit(log) -> list[str]:
    """Safety and writer-priority violations in a run log."""
    bad = []
    readers: dict = {}
    writer: dict = {}
    waiting_w: dict = {}   # mid -> list of (arrival idx, cid) of writers not yet granted
    arrivals = []
    for i, (step, kind, src, _, op, detail) in enumerate(log):
        if kind == "rw_arrive":
            mid, cid = detail
            if op == WL:
                waiting_w.setdefault(mid, []).append((i, cid))
            arrivals.append((i, op, mid, cid))
        elif kind == "rw_grant":
            mid, cid = detail
            rs = readers.setdefault(mid, set())
            if op == "W":
                if rs or writer.get(mid) is not None:
                    bad.append(f"step {step}: writer {cid} granted over holders on {mid}")
                writer[mid] = cid
                ws = waiting_w.get(mid, [])
                waiting_w[mid] = [w for w in ws if w[1] != cid]
            else:
                if writer.get(mid) is not None:
                    bad.append(f"step {step}: reader {cid} granted while writer holds {mid}")
                # a reader that arrived after a still-waiting writer must not get in first
                r_arr = max((a for a, o, m, c in arrivals if o == RL and m == mid and c == cid),
                            default=None)
                for w_arr, wcid in waiting_w.get(mid, []):
                    if r_arr is not None and w_arr < r_arr:
                        bad.append(f"step {step}: reader {cid} overtook waiting writer {wcid}")
                rs.add(cid)
        elif kind == "rw_release":
            mid, cid = detail
            if op == "W":
                writer[mid] = None
            else:
                readers.get(mid, set()).discard(cid)
    return bad
