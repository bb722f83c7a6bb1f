"""Stack, queue, deque, synchronous queue and delay queue over the directory.

Each structure has one synchronizer process that owns the key counters.
Clients ask it for a key and then store or fetch the element under that
key in the directory.  Synchronizers also answer ``COMB`` requests from an
island master: one message carrying per-op counts, one reply carrying
every grant, in the order the counts were listed.
"""

from __future__ import annotations

from collections import defaultdict, deque

from .directory import ACK, Directory
from .node import Server
from .simcore import Recv, Send

KEY, NACK, ELIM = "KEY", "NACK", "ELIM"
COMB, COMBR = "COMB", "COMBR"
PUSH, POP = "PUSH", "POP"
ENQ, DEQ = "ENQ", "DEQ"
ENQ_T, ENQ_H, DEQ_T, DEQ_H = "ENQ_T", "ENQ_H", "DEQ_T", "DEQ_H"
DATA = "DATA"


class Synchronizer(Server):
    """Base for counter owners; subclasses define ``grant``."""

    def grant(self, op, body):
        raise NotImplementedError

    def handle(self, src, op, body):
        if op == COMB:
            out = []
            for kind, n in body["counts"]:
                out.append((kind, [self.grant(kind, body) for _ in range(n)]))
            self.send(src, COMBR, {"cid": src, "batch": body["batch"], "grants": out})
            return None
        rop, fields = self.grant(op, body)
        self.reply(body, rop, **fields)
        return None


# ------------------------------------------------------------------ stack

class StackSync(Synchronizer):
    def __init__(self):
        super().__init__()
        self.top_key = -1
        # generation per key: a reused key never aliases an older element
        self.gen = defaultdict(int)
        self.granted = []   # (op, key, gen) audit trail

    def grant(self, op, body):
        if op == PUSH:
            self.top_key += 1
            self.gen[self.top_key] += 1
            k, g = self.top_key, self.gen[self.top_key]
            self.granted.append((PUSH, k, g))
            return KEY, {"key": k, "gen": g}
        if op == POP:
            if self.top_key == -1:
                return NACK, {}
            k = self.top_key
            self.top_key -= 1
            self.granted.append((POP, k, self.gen[k]))
            return KEY, {"key": k, "gen": self.gen[k]}
        raise ValueError(f"stack synchronizer: unknown op {op!r}")


class DirStack:
    """Client side.  ``polling`` selects the literal retry-delete loop."""

    def __init__(self, sync_core: int, directory: Directory, polling: bool = True):
        self.sync = sync_core
        self.dir = directory
        self.polling = polling

    def spawn(self, sim):
        s = StackSync()
        sim.spawn(self.sync, s.run, daemon=True, name="stack-sync")
        return s

    def push(self, port, data):
        r = yield from port.call(self.sync, PUSH, {"data": data})
        if r.op == ELIM:
            return True
        return (yield from self.dir.insert(port, r["key"], data, tag=r["gen"]))

    def pop(self, port):
        r = yield from port.call(self.sync, POP)
        if r.op == ELIM:
            return r["data"]
        if r.op == NACK:
            return None
        if self.polling:
            return (yield from self.dir.block_delete_polling(port, r["key"], r["gen"]))
        return (yield from self.dir.block_delete(port, r["key"], r["gen"]))


# ------------------------------------------------------------------ queue

class QueueSync(Synchronizer):
    def __init__(self):
        super().__init__()
        self.head_key = 0
        self.tail_key = 0
        self.granted = []

    def grant(self, op, body):
        if op == ENQ:
            self.tail_key += 1
            self.granted.append((ENQ, self.tail_key))
            return KEY, {"key": self.tail_key}
        if op == DEQ:
            if self.head_key < self.tail_key:
                self.head_key += 1
                self.granted.append((DEQ, self.head_key))
                return KEY, {"key": self.head_key}
            return NACK, {}
        raise ValueError(f"queue synchronizer: unknown op {op!r}")


class DirQueue:
    sync_class = QueueSync

    def __init__(self, sync_core: int, directory: Directory):
        self.sync = sync_core
        self.dir = directory

    def spawn(self, sim):
        s = self.sync_class()
        sim.spawn(self.sync, s.run, daemon=True, name="queue-sync")
        return s

    def enqueue(self, port, data):
        r = yield from port.call(self.sync, ENQ, {"data": data})
        if r.op == ELIM:
            return True
        return (yield from self.dir.insert(port, r["key"], data))

    def dequeue(self, port):
        r = yield from port.call(self.sync, DEQ)
        if r.op == ELIM:
            return r["data"]
        if r.op == NACK:
            return None
        return (yield from self.dir.block_delete(port, r["key"]))


class DelayQueue(DirQueue):
    """Elements become removable only ``delay`` steps after their enqueue began."""

    def enqueue(self, port, data, delay: int = 0):
        not_before = port.ctx.now + delay
        r = yield from port.call(self.sync, ENQ)
        return (yield from self.dir.insert(port, r["key"], data, not_before=not_before))


# ------------------------------------------------------------------ deque

class DequeSync(Server):
    """Grants keys and performs dequeues itself, retrying until the element lands."""

    def __init__(self, directory: Directory):
        super().__init__()
        self.dir = directory
        self.head_key = 0
        self.tail_key = 0

    def _take(self, key):
        home = self.dir.home(key)
        me = self.me
        while True:
            yield from self.flush()
            yield Send(home, "DELETE", {"key": key, "tag": None, "cid": me})
            r = yield Recv(src=home, pred=lambda e: e.body.get("cid") == me)
            if r.op == ACK:
                return r["data"]

    def handle(self, src, op, body):
        if op == ENQ_T:
            self.tail_key += 1
            self.reply(body, KEY, key=self.tail_key)
        elif op == ENQ_H:
            self.reply(body, KEY, key=self.head_key)
            self.head_key -= 1
        elif op in (DEQ_T, DEQ_H):
            if self.head_key == self.tail_key:
                self.reply(body, NACK)
                return None
            if op == DEQ_T:
                key = self.tail_key
                self.tail_key -= 1
            else:
                self.head_key += 1
                key = self.head_key
            return self._deq(body, key)
        else:
            raise ValueError(f"deque synchronizer: unknown op {op!r}")
        return None

    def _deq(self, body, key):
        data = yield from self._take(key)
        self.reply(body, DATA, data=data)


class DirDeque:
    def __init__(self, sync_core: int, directory: Directory):
        self.sync = sync_core
        self.dir = directory

    def spawn(self, sim):
        s = DequeSync(self.dir)
        sim.spawn(self.sync, s.run, daemon=True, name="deque-sync")
        return s

    def _enq(self, port, op, data):
        # data rides along so an island master can hand it to a paired dequeue
        r = yield from port.call(self.sync, op, {"data": data})
        if r.op == ELIM:
            return True
        return (yield from self.dir.insert(port, r["key"], data))

    def _deq(self, port, op):
        r = yield from port.call(self.sync, op)
        return None if r.op == NACK else r["data"]

    def enq_t(self, port, data):
        return (yield from self._enq(port, ENQ_T, data))

    def enq_h(self, port, data):
        return (yield from self._enq(port, ENQ_H, data))

    def deq_t(self, port):
        return (yield from self._deq(port, DEQ_T))

    def deq_h(self, port):
        return (yield from self._deq(port, DEQ_H))


# ------------------------------------------------------ synchronous queue

class SyncQueueSync(Server):
    """Dequeues always take the next key; enqueuers wait until head reaches theirs."""

    def __init__(self):
        super().__init__()
        self.head_key = 0
        self.tail_key = 0
        self.waiting = deque()   # (request body, key) in key order

    def handle(self, src, op, body):
        if op == ENQ:
            self.tail_key += 1
            self.waiting.append((body, self.tail_key))
        elif op == DEQ:
            self.head_key += 1
            self.reply(body, KEY, key=self.head_key)
        else:
            raise ValueError(f"synchronous queue: unknown op {op!r}")
        while self.waiting and self.waiting[0][1] <= self.head_key:
            req, k = self.waiting.popleft()
            self.reply(req, KEY, key=k)


class SyncQueue:
    def __init__(self, sync_core: int, directory: Directory):
        self.sync = sync_core
        self.dir = directory

    def spawn(self, sim):
        s = SyncQueueSync()
        sim.spawn(self.sync, s.run, daemon=True, name="syncq-sync")
        return s

    def enqueue(self, port, data):
        r = yield from port.call(self.sync, ENQ)
        return (yield from self.dir.insert(port, r["key"], data))

    def dequeue(self, port):
        r = yield from port.call(self.sync, DEQ)
        return (yield from self.dir.block_delete(port, r["key"]))
