"""Token-based stack, queue and deque over a logical ring of servers.

Queue and deque share one engine.  Storage is addressed by *positions*:
position ``p`` lives on server ``p mod NS`` in round ``p // NS`` and holds
one chunk of at most ``capacity`` elements.  The HEAD and TAIL tokens each
carry their position plus a ``served`` map (client id -> last request
sequence number served at that end), which is what makes every request
get exactly one reply no matter how many copies chase the token.

Moves are classified as ``expand`` (a full chunk pushes the token outward),
``shrink`` (an empty chunk pulls it inward) or ``bounce`` (see below).

Deque ends can shrink toward each other at the same time and swap places
on one link.  Every shrink departure leaves a ``gone`` record at the server
it left; an arriving shrink that finds the other end's record knows the
two tokens crossed.  The tail then bounces back one position and the head
holds still with its empty-handed dequeues parked until the tail rejoins.
"""

from __future__ import annotations

from collections import deque

from .node import Server
from .simcore import Recv

ACK, NACK, DATA = "ACK", "NACK", "DATA"
PUSH, POP = "PUSH", "POP"
ENQ_T, ENQ_H, DEQ_T, DEQ_H = "ENQ_T", "ENQ_H", "DEQ_T", "DEQ_H"
TAIL, HEAD, STACK = "TAIL", "HEAD", "STACK"

END = {ENQ_T: TAIL, DEQ_T: TAIL, ENQ_H: HEAD, DEQ_H: HEAD}
# chase direction of a request that reaches a non-holder
CHASE = {ENQ_T: +1, DEQ_T: -1, ENQ_H: -1, DEQ_H: +1}
# direction in which each end grows
GROW = {TAIL: +1, HEAD: -1}
OTHER = {TAIL: HEAD, HEAD: TAIL}
REPLY_OPS = (ACK, NACK, DATA)


# ------------------------------------------------------------------ stack

class TokenStackServer(Server):
    def __init__(self, index, cores, capacity):
        super().__init__()
        self.index = index
        self.cores = cores
        self.ns = len(cores)
        self.cap = capacity
        self.stack = []
        self.has_token = index == 0

    def started(self):
        if self.has_token:
            self.ctx.note("tok_acq", STACK)

    def _pass(self, step, op, body):
        self.has_token = False
        self.ctx.note("tok_rel", STACK)
        self.ctx.note("tok_fwd", STACK, {"end": STACK, "dir": step, "len": len(self.stack),
                                         "cap": self.cap, "kind": "expand" if step > 0 else "shrink"})
        self.send(self.cores[self.index + step], op, dict(body, tk=True))

    def handle(self, src, op, body):
        if body.get("tk"):
            self.has_token = True
            self.ctx.note("tok_acq", STACK)
            body = dict(body, tk=False)
        if not self.has_token:
            # servers below the token are full, above it empty
            if self.index == 0:
                step = 1
            elif self.index == self.ns - 1:
                step = -1
            else:
                step = 1 if len(self.stack) == self.cap else -1
            self.send(self.cores[self.index + step], op, body)
            return
        if op == PUSH:
            if len(self.stack) < self.cap:
                self.stack.append(body["data"])
                self.reply(body, ACK)
            elif self.index == self.ns - 1:
                self.reply(body, NACK, reason="full")
            else:
                self._pass(+1, op, body)
        elif op == POP:
            if self.stack:
                self.reply(body, DATA, data=self.stack.pop())
            elif self.index == 0:
                self.reply(body, NACK, reason="empty")
            else:
                self._pass(-1, op, body)
        else:
            raise ValueError(f"token stack: unknown op {op!r}")


class _ClientCache:
    """Per-client lazily updated guesses of where each token lives."""

    def __init__(self):
        self.sid = {}
        self.seq = {}

    def next_seq(self, cid):
        self.seq[cid] = self.seq.get(cid, 0) + 1
        return self.seq[cid]


class TokenStack:
    def __init__(self, cores, capacity=64):
        self.cores = list(cores)
        self.cap = capacity
        self.cache = _ClientCache()

    def spawn(self, sim):
        out = []
        for i, core in enumerate(self.cores):
            s = TokenStackServer(i, self.cores, self.cap)
            sim.spawn(core, s.run, daemon=True, name=f"tstack{i}")
            out.append(s)
        return out

    def _call(self, port, op, data=None):
        cid = port.ctx.me
        seq = self.cache.next_seq(cid)
        dest = self.cache.sid.get(cid, self.cores[0])
        yield from port.send(dest, op, {"data": data, "seq": seq})
        r = yield Recv(op=REPLY_OPS, pred=lambda e: e.body.get("seq") == seq)
        self.cache.sid[cid] = r["sid"]
        return r

    def push(self, port, data):
        r = yield from self._call(port, PUSH, data)
        return r.op == ACK

    def pop(self, port):
        r = yield from self._call(port, POP)
        return r["data"] if r.op == DATA else None


# --------------------------------------------------------- queue / deque

class RingServer(Server):
    def __init__(self, index, cores, capacity, dynamic=False, eliminate=False):
        super().__init__()
        self.index = index
        self.cores = cores
        self.ns = len(cores)
        self.cap = capacity
        self.dynamic = dynamic
        self.eliminate = eliminate
        self.chunks: dict[int, deque] = {}
        self.tok = {TAIL: None, HEAD: None}
        if index == 0:
            for end in (TAIL, HEAD):
                self.tok[end] = {"pos": 0, "served": {}, "epoch": 0}
        self.table: dict[int, dict] = {}   # client id -> direct request
        self.gone = {TAIL: None, HEAD: None}   # (epoch, pos) of last shrink departure
        self.parked: list = []   # head-end dequeues waiting for the tail to rejoin

    # ---------------------------------------------------------- helpers

    def started(self):
        for end in (TAIL, HEAD):
            if self.tok[end] is not None:
                self.ctx.note("tok_acq", end)

    def _core(self, pos):
        return self.cores[pos % self.ns]

    def _other_nonempty(self, pos):
        return any(p != pos and ch for p, ch in self.chunks.items())

    def _chunk(self, pos):
        return self.chunks.setdefault(pos, deque())

    def _tidy(self, pos):
        ch = self.chunks.get(pos)
        if ch is not None and not ch:
            del self.chunks[pos]

    def _served(self, end, body) -> bool:
        return body["seq"] <= self.tok[end]["served"].get(body["cid"], 0)

    def _mark(self, end, body):
        self.tok[end]["served"][body["cid"]] = body["seq"]
        t = self.table.get(body["cid"])
        if t is not None and t["seq"] <= body["seq"]:
            del self.table[body["cid"]]

    def _colocated(self, end):
        o = self.tok[OTHER[end]]
        return o is not None and o["pos"] == self.tok[end]["pos"]

    def _move(self, end, step, kind, op, body):
        t = self.tok[end]
        src = t["pos"]
        ch = self.chunks.get(src)
        self.ctx.note("tok_fwd", end, {"end": end, "dir": step, "len": len(ch) if ch else 0,
                                       "cap": self.cap, "kind": kind,
                                       "from": src, "to": src + step})
        self._tidy(src)
        if kind == "shrink":
            self.gone[end] = (t["epoch"], src)
        else:
            self.gone[end] = None
        t = dict(t, pos=src + step)
        self.tok[end] = None
        self.ctx.note("tok_rel", end)
        fwd = dict(body, tk=end, tok=t, how=kind)
        self.send(self._core(src + step), op, fwd)

    def _chase(self, op, body):
        if body.get("origin", -1) == -1:
            self.table[body["cid"]] = body
        fwd = dict(body, origin=self.index if body.get("origin", -1) == -1 else body["origin"])
        self.send(self._core(self.index + CHASE[op]), op, fwd)

    # ---------------------------------------------------------- protocol

    def handle(self, src, op, body):
        end_in = body.get("tk")
        if end_in:
            tok = body["tok"]
            how = body.get("how")
            body = {k: v for k, v in body.items() if k not in ("tk", "tok", "how")}
            self.tok[end_in] = tok
            self.ctx.note("tok_acq", end_in)
            if self._crossed(end_in, how):
                if end_in == TAIL:
                    self._move(TAIL, +1, "bounce", op, body)
                    return
            self.gone[end_in] = None
            self._serve_old(end_in)
        self._dispatch(op, body)
        if self.parked and not self._head_waiting():
            self._release_parked()

    def _crossed(self, end, how) -> bool:
        if how != "shrink":
            return False
        t = self.tok[end]
        ch = self.chunks.get(t["pos"])
        if ch or self._colocated(end):
            return False
        return self.gone[OTHER[end]] == (t["epoch"], t["pos"])

    def _dispatch(self, op, body):
        end = END[op]
        if self.tok[end] is None:
            self._chase(op, body)
            return
        self._serve(op, body)

    def _serve_old(self, end):
        ents = sorted((c, b) for c, b in self.table.items()
                      if END[b["op"]] == end)
        live = [b for _, b in ents if not self._served(end, b)]
        for c, b in ents:
            if self._served(end, b):
                del self.table[c]
        if self.eliminate:
            enq = ENQ_T if end == TAIL else ENQ_H
            ins = [b for b in live if b["op"] == enq]
            outs = [b for b in live if b["op"] != enq]
            for a, b in zip(ins, outs):
                self._mark(end, a)
                self._mark(end, b)
                self.reply(a, ACK, elim=True)
                self.reply(b, DATA, data=a["data"], elim=True)
                self.ctx.note("elim", end, (a["cid"], b["cid"]))
            k = min(len(ins), len(outs))
            live = ins[k:] + outs[k:]
            live.sort(key=lambda b: b["cid"])
        for b in live:
            if self.tok[end] is None:
                break   # token moved on; the chasing copy will be served there
            if not self._served(end, b):
                self._serve(b["op"], b)

    def _head_waiting(self) -> bool:
        t = self.tok[HEAD]
        if t is None or self.chunks.get(t["pos"]) or self._colocated(HEAD):
            return False
        return self.gone[TAIL] == (t["epoch"], t["pos"])

    def _release_parked(self):
        parked, self.parked = self.parked, []
        for op, body in parked:
            self._dispatch(op, body)

    def _serve(self, op, body):
        end = END[op]
        if self._served(end, body):
            return
        t = self.tok[end]
        pos = t["pos"]
        if op in (ENQ_T, ENQ_H):
            ch = self._chunk(pos)
            if not self.dynamic and not ch and self._other_nonempty(pos):
                self._mark(end, body)
                self.reply(body, NACK, reason="full")
                self._tidy(pos)
            elif len(ch) < self.cap:
                if op == ENQ_T:
                    ch.append(body["data"])
                else:
                    ch.appendleft(body["data"])
                self._mark(end, body)
                self.reply(body, ACK)
            else:
                self._move(end, GROW[end], "expand", op, body)
            return
        ch = self.chunks.get(pos)
        if ch:
            x = ch.pop() if op == DEQ_T else ch.popleft()
            self._mark(end, body)
            self.reply(body, DATA, data=x)
            return
        if self._colocated(end):
            self._mark(end, body)
            self.reply(body, NACK, reason="empty")
            self._reset(pos)
            return
        if end == HEAD and self.gone[TAIL] == (t["epoch"], pos):
            self.parked.append((op, body))
            return
        self._move(end, -GROW[end], "shrink", op, body)

    def _reset(self, pos):
        """Queue drained: both tokens restart at round 0 of this server."""
        self._tidy(pos)
        for end in (TAIL, HEAD):
            t = self.tok[end]
            self.tok[end] = dict(t, pos=self.index, epoch=t["epoch"] + 1)
        self.gone = {TAIL: None, HEAD: None}
        self.ctx.note("reset", "", self.index)

    # ---------------------------------------------------------- audits

    def rounds(self):
        return {p: p // self.ns for p, ch in self.chunks.items() if ch}


class TokenRing:
    """Client side shared by the queue and the deque."""

    eliminate = False

    def __init__(self, cores, capacity=64, dynamic=False):
        self.cores = list(cores)
        self.cap = capacity
        self.dynamic = dynamic
        self.cache = _ClientCache()
        self.servers = []

    def spawn(self, sim):
        self.servers = []
        for i, core in enumerate(self.cores):
            s = RingServer(i, self.cores, self.cap, self.dynamic, self.eliminate)
            sim.spawn(core, s.run, daemon=True, name=f"ring{i}")
            self.servers.append(s)
        return self.servers

    def _call(self, port, op, data=None):
        cid = port.ctx.me
        seq = self.cache.next_seq(cid)
        key = (cid, END[op])
        dest = self.cache.sid.get(key, self.cores[0])
        yield from port.send(dest, op, {"op": op, "data": data, "seq": seq, "origin": -1})
        r = yield Recv(op=REPLY_OPS, pred=lambda e: e.body.get("seq") == seq)
        self.cache.sid[key] = r["sid"]
        return r

    def _enq(self, port, op, data):
        r = yield from self._call(port, op, data)
        return r.op == ACK

    def _deq(self, port, op):
        r = yield from self._call(port, op)
        return r["data"] if r.op == DATA else None

    def contents(self):
        """Abstract content at quiescence: chunks from head position to tail position."""
        holder = {}
        for s in self.servers:
            for end in (TAIL, HEAD):
                if s.tok[end] is not None:
                    holder[end] = s.tok[end]["pos"]
        out = []
        h, t = holder[HEAD], holder[TAIL]
        for p in range(h, t + 1):
            ch = self.servers[p % len(self.servers)].chunks.get(p)
            if ch:
                out.extend(ch)
        return out


class TokenQueue(TokenRing):
    def enqueue(self, port, data):
        return (yield from self._enq(port, ENQ_T, data))

    def dequeue(self, port):
        return (yield from self._deq(port, DEQ_H))


class TokenDeque(TokenRing):
    eliminate = True

    def enq_t(self, port, data):
        return (yield from self._enq(port, ENQ_T, data))

    def enq_h(self, port, data):
        return (yield from self._enq(port, ENQ_H, data))

    def deq_t(self, port):
        return (yield from self._deq(port, DEQ_T))

    def deq_h(self, port):
        return (yield from self._deq(port, DEQ_H))


# ------------------------------------------------------------- log audits

def token_audit(log) -> list[str]:
    """Ownership overlap and forward-precondition violations found in a run log."""
    bad = []
    held: dict[str, int] = {}
    for step, kind, src, _, op, detail in log:
        if kind == "tok_acq":
            held[op] = held.get(op, 0) + 1
            if held[op] > 1:
                bad.append(f"step {step}: {op} token held twice")
        elif kind == "tok_rel":
            held[op] = held.get(op, 0) - 1
            if held[op] < 0:
                bad.append(f"step {step}: {op} token released while not held")
        elif kind == "tok_fwd":
            d = detail
            end, kind_, ln, cap, step_dir = d["end"], d["kind"], d["len"], d["cap"], d["dir"]
            grow = 1 if end in (TAIL, STACK) else -1
            if kind_ == "expand" and not (ln == cap and step_dir == grow):
                bad.append(f"step {step}: {end} expanded with {ln}/{cap} elements")
            if kind_ == "shrink" and not (ln == 0 and step_dir == -grow):
                bad.append(f"step {step}: {end} shrank with {ln} elements")
            if kind_ == "bounce" and not (ln == 0 and end == TAIL):
                bad.append(f"step {step}: {end} bounced with {ln} elements")
    return bad
