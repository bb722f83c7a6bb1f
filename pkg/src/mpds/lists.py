"""Distributed sets: unsorted list (token for inserts), its two-phase
variant, and the sorted list whose servers hold ordered key ranges.

Searches and deletes are broadcast to every server; the client answers
true iff some server acknowledged.
"""

from __future__ import annotations

import bisect
import math

from .node import Server
from .simcore import ENGINE, Recv, Send

INSERT, SEARCH, DELETE = "INSERT", "SEARCH", "DELETE"
PROBE = "PROBE"
ACK, NACK = "ACK", "NACK"
REQC, CVR, FAIL, CHUNK = "REQC", "CVR", "FAIL", "CHUNK"
REPLY_OPS = (ACK, NACK)


def _broadcast(port, cores, op, body):
    for c in cores:
        yield from port.send(c, op, body)
    replies = []
    seq = body["seq"]
    for _ in cores:
        r = yield Recv(op=REPLY_OPS + (PROBE,), pred=lambda e: e.body.get("seq") == seq)
        replies.append(r)
    return replies


class _Client:
    def __init__(self, cores):
        self.cores = list(cores)
        self.ns = len(cores)
        self._seq = {}
        self.servers = []

    def _next(self, port):
        cid = port.ctx.me
        self._seq[cid] = self._seq.get(cid, 0) + 1
        return self._seq[cid]

    def _single(self, port, dest, op, body):
        seq = self._next(port)
        yield from port.send(dest, op, dict(body, seq=seq))
        r = yield Recv(op=REPLY_OPS, pred=lambda e: e.body.get("seq") == seq)
        return r

    def search(self, port, key):
        rs = yield from _broadcast(port, self.cores, SEARCH, {"key": key, "seq": self._next(port)})
        return any(r.op == ACK for r in rs)

    def delete(self, port, key):
        rs = yield from _broadcast(port, self.cores, DELETE, {"key": key, "seq": self._next(port)})
        return any(r.op == ACK for r in rs)


# -------------------------------------------------------------- unsorted

class UListServer(Server):
    """Storage is addressed by position ``round * NS + index`` like the rings."""

    def __init__(self, index, cores, capacity, max_rounds=None):
        super().__init__()
        self.index = index
        self.cores = cores
        self.ns = len(cores)
        self.cap = capacity
        self.max_rounds = max_rounds
        self.chunks: dict[int, dict] = {}
        self.pos = 0 if index == 0 else None   # token position when held
        self.hint = index                      # best guess of the token position

    def started(self):
        if self.holder:
            self.ctx.note("tok_acq", "LIST")

    @property
    def holder(self):
        return self.pos is not None

    def _find(self, key):
        return any(key in ch for ch in self.chunks.values())

    def _next_core(self):
        return self.cores[(self.index + 1) % self.ns]

    def _take_token(self, body):
        if body.get("tk") is not None:
            self.pos = body["tk"]
            self.hint = self.pos
            self.ctx.note("tok_acq", "LIST")
            body = dict(body, tk=None)
        return body

    def _pass_token(self, body):
        nxt = self.pos + 1
        self.ctx.note("tok_fwd", "LIST", {"end": "LIST", "dir": 1, "kind": "expand",
                                          "len": len(self.chunks.get(self.pos, {})),
                                          "cap": self.cap, "from": self.pos, "to": nxt})
        self.ctx.note("tok_rel", "LIST")
        self.pos = None
        self.hint = nxt
        fwd = dict(body, tk=nxt)
        if "cursor" in fwd:
            fwd["cursor"] = nxt
        self.send(self._next_core(), INSERT, fwd)

    def _store_or_pass(self, body):
        ch = self.chunks.setdefault(self.pos, {})
        if len(ch) < self.cap:
            ch[body["key"]] = body.get("data")
            self.reply(body, ACK)
            return
        if not ch:
            del self.chunks[self.pos]
        if self.max_rounds is not None and (self.pos + 1) // self.ns >= self.max_rounds:
            self.reply(body, NACK, reason="full")
            return
        if self.index == self.ns - 1:
            body = dict(body, mloop=True)
        self._pass_token(body)

    def handle(self, src, op, body):
        body = self._take_token(body)
        key = body.get("key")
        if op in (SEARCH, DELETE):
            hit = None
            for ch in self.chunks.values():
                if key in ch:
                    hit = ch
                    break
            if hit is not None and op == DELETE:
                del hit[key]
            self.reply(body, ACK if hit is not None else NACK)
            return
        if op == PROBE:
            self.reply(body, PROBE, found=self._find(key), holder=self.holder, hint=self.hint)
            return
        if op != INSERT:
            raise ValueError(f"unsorted list: unknown op {op!r}")
        if self._find(key):
            self.reply(body, NACK, reason="dup")
            return
        if "cursor" in body:
            self._insert_alt(body)
            return
        if not self.holder:
            if self.index == self.ns - 1:
                body = dict(body, mloop=True)
            self.send(self._next_core(), INSERT, body)
            return
        rnd = self.pos // self.ns
        if self.index != self.ns - 1 and rnd > 0 and not body.get("mloop"):
            # later servers may hold the key from an earlier round
            self.send(self._next_core(), INSERT, body)
            return
        self._store_or_pass(body)

    def _insert_alt(self, body):
        """Second phase of the two-phase insert: walk positions up to the token."""
        cur = body["cursor"]
        if self.holder and self.pos == cur:
            self._store_or_pass(body)
            return
        self.send(self._next_core(), INSERT, dict(body, cursor=cur + 1))


class UnsortedList(_Client):
    def __init__(self, cores, capacity=64, max_rounds=None):
        super().__init__(cores)
        self.cap = capacity
        self.max_rounds = max_rounds

    def spawn(self, sim):
        self.servers = []
        for i, core in enumerate(self.cores):
            s = UListServer(i, self.cores, self.cap, self.max_rounds)
            sim.spawn(core, s.run, daemon=True, name=f"ulist{i}")
            self.servers.append(s)
        return self.servers

    def insert(self, port, key, data=None):
        r = yield from self._single(port, self.cores[0], INSERT,
                                    {"key": key, "data": data, "mloop": False, "tk": None})
        return r.op == ACK

    def contents(self):
        out = {}
        for s in self.servers:
            for ch in s.chunks.values():
                out.update(ch)
        return out


class UnsortedListAlt(UnsortedList):
    """Insert asks every server first, then walks from the lowest reported token position."""

    def insert(self, port, key, data=None):
        seq = self._next(port)
        rs = yield from _broadcast(port, self.cores, PROBE, {"key": key, "seq": seq})
        if any(r["found"] for r in rs):
            return False
        start = min(r["hint"] for r in rs)
        r = yield from self._single(port, self.cores[start % self.ns], INSERT,
                                    {"key": key, "data": data, "cursor": start, "tk": None})
        return r.op == ACK


# ---------------------------------------------------------------- sorted

class SListServer(Server):
    def __init__(self, index, cores, capacity, chunk=None):
        super().__init__()
        self.index = index
        self.cores = cores
        self.ns = len(cores)
        self.cap = capacity
        self.chunk = chunk if chunk is not None else math.ceil(capacity / 2)
        self.keys: list = []
        self.data: dict = {}
        self.forwarded = False   # some keys of ours have been handed to the next server
        self.cv: dict[int, int] = {}
        # key -> {cid: n}: queries numbered <= n were answered by the previous owner
        self.hidden: dict = {}
        self.frozen = False
        self.moves = 0

    def accepts(self):
        return CHUNK if self.frozen else None

    # ---------------------------------------------------------- storage

    def _kmax(self):
        return self.keys[-1] if self.keys else None

    def _add(self, key, data, hidden=None):
        bisect.insort(self.keys, key)
        self.data[key] = data
        if hidden:
            self.hidden[key] = hidden

    def _remove(self, key):
        i = bisect.bisect_left(self.keys, key)
        del self.keys[i]
        self.hidden.pop(key, None)
        return self.data.pop(key)

    def _belongs(self, key):
        km = self._kmax()
        return (km is not None and key < km) or not self.forwarded or self.index == self.ns - 1

    # ---------------------------------------------------------- queries

    def _query(self, op, body):
        cid, key = body["cid"], body["key"]
        n = self.cv.get(cid, 0) + 1
        self.cv[cid] = n
        present = key in self.data
        if present and key in self.hidden and self.hidden[key].get(cid, 0) >= n:
            present = False
        if present and op == DELETE:
            self._remove(key)
        self.reply(body, ACK if present else NACK)
        self.ctx.note("cv", str(cid), n)

    def handle(self, src, op, body):
        if op in (SEARCH, DELETE):
            self._query(op, body)
            return None
        if op == INSERT:
            return self._insert(body)
        if op == REQC:
            return self._on_reqc(src, body)
        if op == CHUNK:
            self._on_chunk(body)
            return None
        raise ValueError(f"sorted list: unknown op {op!r}")

    def _insert(self, body):
        key = body["key"]
        while True:
            if key in self.data:
                self.reply(body, NACK, reason="dup")
                return
            if not self._belongs(key):
                self.send(self.cores[self.index + 1], INSERT, body)
                return
            if len(self.keys) < self.cap:
                self._add(key, body.get("data"))
                self.reply(body, ACK)
                return
            if self.index < self.ns - 1 and key > self._kmax():
                # larger than everything here: the next server takes it directly
                self.forwarded = True
                self.send(self.cores[self.index + 1], INSERT, body)
                return
            if self.index == self.ns - 1:
                self.reply(body, NACK, reason="full")
                return
            ok = yield from self._server_move()
            if not ok:
                self.reply(body, NACK, reason="full")
                return

    # ---------------------------------------------------------- moves

    def _server_move(self):
        """Hand our largest keys to the next server; False if it cannot take them."""
        nxt = self.cores[self.index + 1]
        n = min(self.chunk, len(self.keys))
        yield from self.flush()
        yield Send(nxt, REQC, {"n": n, "cid": self.me})
        r = yield Recv(src=nxt, op=(CVR, FAIL))
        if r.op == FAIL:
            return False
        nbr = r["cv"]
        # serve queries the neighbour has already seen so both agree on who answered what
        while any(self.cv.get(c, 0) < k for c, k in nbr.items()):
            m = yield Recv(op=(SEARCH, DELETE))
            self._query(m.op, m.body)
            yield from self.flush()
        # catch-up deletes may have shrunk us; an empty move still unfreezes the neighbour
        n = min(n, len(self.keys))
        moving = self.keys[len(self.keys) - n:]
        items = []
        for k in moving:
            snap = dict(self.cv)
            for c, v in self.hidden.get(k, {}).items():
                snap[c] = max(snap.get(c, 0), v)
            items.append((k, self.data[k], snap))
        for k in moving:
            self._remove(k)
        self.forwarded = True
        self.moves += 1
        region = f"move{self.index}.{self.moves}"
        if items:
            self.ctx.memory(region)[:] = items
            yield self.ctx.dma(nxt, region, region, len(items), tag=region)
            yield Recv(src=ENGINE, op="DMA_DONE", pred=lambda e: e.body.get("tag") == region)
        yield Send(nxt, CHUNK, {"region": region, "n": len(items)})
        self.ctx.note("move", "", {"from": self.index, "to": self.index + 1, "keys": moving})
        return True

    def _on_reqc(self, src, body):
        n = body["n"]
        if len(self.keys) + n > self.cap:
            if self.index == self.ns - 1:
                yield Send(src, FAIL, {})
                return
            ok = yield from self._server_move()
            if not ok or len(self.keys) + n > self.cap:
                yield Send(src, FAIL, {})
                return
        self.frozen = True
        yield Send(src, CVR, {"cv": dict(self.cv)})

    def _on_chunk(self, body):
        mem = self.ctx.memory()
        items = mem.pop(body["region"], [])
        for k, d, snap in items[: body["n"]]:
            live = {c: v for c, v in snap.items() if v > self.cv.get(c, 0)}
            self._add(k, d, live or None)
        self.frozen = False


class SortedList(_Client):
    def __init__(self, cores, capacity=64, chunk=None):
        super().__init__(cores)
        self.cap = capacity
        self.chunk = chunk

    def spawn(self, sim):
        self.servers = []
        for i, core in enumerate(self.cores):
            s = SListServer(i, self.cores, self.cap, self.chunk)
            sim.spawn(core, s.run, daemon=True, name=f"slist{i}")
            self.servers.append(s)
        return self.servers

    def insert(self, port, key, data=None):
        r = yield from self._single(port, self.cores[0], INSERT, {"key": key, "data": data})
        return r.op == ACK

    def partitions(self):
        return [list(s.keys) for s in self.servers]

    def ordered(self) -> bool:
        flat = [k for part in self.partitions() for k in part]
        return all(a < b for a, b in zip(flat, flat[1:]))
