"""Distributed hash table with chained buckets, spread over NS servers."""

from __future__ import annotations

import heapq
from collections import defaultdict, deque
from typing import Callable

from .node import Server

INSERT, SEARCH, DELETE, BDELETE = "INSERT", "SEARCH", "DELETE", "BDELETE"
ACK, NACK = "ACK", "NACK"


def dir_hash(key: int, ns: int, b: int) -> tuple[int, int]:
    """Home (server index, bucket) of ``key``; negative keys are fine."""
    if ns < 1 or b < 1:
        raise ValueError("ns and b must be >= 1")
    span = ns * b
    idx = ((key % span) + span) % span
    return idx % ns, idx // ns


def div_hash(k: int) -> Callable[[int, int, int], tuple[int, int]]:
    """Quotient hashing: runs of ``k`` consecutive keys share a home bucket."""

    def h(key: int, ns: int, b: int) -> tuple[int, int]:
        return dir_hash(key // k, ns, b)

    return h


class DirectoryServer(Server):
    def __init__(self, index: int, ns: int, buckets: int = 64, hash_fn=dir_hash):
        super().__init__()
        self.index = index
        self.ns = ns
        self.nb = buckets
        self.hash_fn = hash_fn
        self.buckets = [[] for _ in range(buckets)]
        self.parked = defaultdict(deque)    # (key, tag) -> waiting BDELETE requests
        self.unripe = []                    # heap of (not_before, seq, key, tag)
        self._n = 0

    # ---------------------------------------------------------- storage

    def _bucket(self, key):
        sid, b = self.hash_fn(key, self.ns, self.nb)
        if sid != self.index:
            raise AssertionError(f"key {key} routed to server {self.index}, home is {sid}")
        return self.buckets[b]

    def _find(self, key, tag):
        for e in self._bucket(key):
            if e[0] == key and e[1] == tag:
                return e
        return None

    def _remove(self, e):
        self._bucket(e[0]).remove(e)

    def contents(self) -> dict:
        out = {}
        for b in self.buckets:
            for key, tag, data, _ in b:
                out[(key, tag)] = data
        return out

    def residency_ok(self) -> bool:
        for i, b in enumerate(self.buckets):
            for e in b:
                if self.hash_fn(e[0], self.ns, self.nb) != (self.index, i):
                    return False
        return True

    # ---------------------------------------------------------- protocol

    def _ripe(self, e) -> bool:
        return e[3] is None or e[3] <= self.ctx.now

    def deadline(self):
        while self.unripe:
            nb, _, key, tag = self.unripe[0]
            if self.parked.get((key, tag)) and self._find(key, tag) is not None:
                return nb
            heapq.heappop(self.unripe)
        return None

    def on_timer(self):
        for key, tag in list(self.parked):
            self._serve_parked(key, tag)

    def _serve_parked(self, key, tag):
        q = self.parked.get((key, tag))
        e = self._find(key, tag)
        if not q or e is None:
            return
        if not self._ripe(e):
            self._n += 1
            heapq.heappush(self.unripe, (e[3], self._n, key, tag))
            return
        req = q.popleft()
        if not q:
            del self.parked[(key, tag)]
        self._remove(e)
        self.reply(req, ACK, data=e[2])

    def handle(self, src, op, body):
        key, tag = body["key"], body.get("tag")
        if op == INSERT:
            if self._find(key, tag) is not None:
                self.reply(body, NACK)
                return
            self._bucket(key).append([key, tag, body.get("data"), body.get("not_before")])
            self.reply(body, ACK)
            self._serve_parked(key, tag)
        elif op == SEARCH:
            e = self._find(key, tag)
            if e is None:
                self.reply(body, NACK, data=None)
            else:
                self.reply(body, ACK, data=e[2])
        elif op == DELETE:
            e = self._find(key, tag)
            if e is None or not self._ripe(e):
                self.reply(body, NACK, data=None)
            else:
                self._remove(e)
                self.reply(body, ACK, data=e[2])
        elif op == BDELETE:
            self.parked[(key, tag)].append(body)
            self._serve_parked(key, tag)
        else:
            raise ValueError(f"directory: unknown op {op!r}")


class Directory:
    """Client-side view: where each key lives and the four operations."""

    def __init__(self, cores: list[int], buckets: int = 64, hash_fn=dir_hash):
        self.cores = list(cores)
        self.ns = len(cores)
        self.buckets = buckets
        self.hash_fn = hash_fn

    def home(self, key: int) -> int:
        return self.cores[self.hash_fn(key, self.ns, self.buckets)[0]]

    def spawn(self, sim, daemon=True):
        servers = []
        for i, core in enumerate(self.cores):
            s = DirectoryServer(i, self.ns, self.buckets, self.hash_fn)
            sim.spawn(core, s.run, daemon=daemon, name=f"dir{i}")
            servers.append(s)
        return servers

    def _req(self, key, tag, **kw):
        b = {"key": key, "tag": tag}
        b.update(kw)
        return b

    def insert(self, port, key, data, tag=None, not_before=None):
        r = yield from port.call(self.home(key), INSERT,
                                 self._req(key, tag, data=data, not_before=not_before))
        return r.op == ACK

    def search(self, port, key, tag=None):
        r = yield from port.call(self.home(key), SEARCH, self._req(key, tag))
        return (r.op == ACK, r.get("data"))

    def delete(self, port, key, tag=None):
        r = yield from port.call(self.home(key), DELETE, self._req(key, tag))
        return (r.op == ACK, r.get("data"))

    def block_delete(self, port, key, tag=None):
        """Server-side wait: one request, one reply once the key shows up."""
        r = yield from port.call(self.home(key), BDELETE, self._req(key, tag))
        return r.get("data")

    def block_delete_polling(self, port, key, tag=None, backoff: int = 0):
        """Client-side retry loop, the literal do/while form."""
        while True:
            found, data = yield from self.delete(port, key, tag)
            if found:
                return data
            if backoff:
                yield port.ctx.work(backoff)
