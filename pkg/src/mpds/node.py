"""Server skeleton and client ports shared by every structure.

A server handles one request at a time.  Requests arrive either directly
from a client or packed inside a batch from an island master; replies are
routed back the same way, so protocol code never needs to know which.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Optional

from .simcore import Envelope, Recv, Send

BATCH = "BATCH"      # master -> server, items = [(op, body), ...]
NOTIFY = "NOTIFY"    # master -> server after a DMA'd batch landed
IN = "IN"            # server -> master, packed replies
OUT = "OUT"          # client -> master, one request


class Server:
    """Base class: subclasses implement ``handle(src, op, body)``.

    ``handle`` may be a plain method or a generator (when it has to block
    on messages of its own, e.g. a synchronizer talking to the directory).
    """

    def __init__(self):
        self.ctx = None
        self.me: Optional[int] = None
        self._out: list = []
        self._batches: "OrderedDict[int, list]" = OrderedDict()

    # process entry point
    def run(self, ctx):
        self.ctx = ctx
        self.me = ctx.me
        self.started()
        while True:
            msg = yield Recv(op=self.accepts(), deadline=self.deadline())
            if msg is None:
                r = self.on_timer()
                if r is not None:
                    yield from r
                yield from self.flush()
                continue
            if msg.op == BATCH:
                items = msg.body["items"]
            elif msg.op == NOTIFY:
                mem = ctx.memory()
                items = mem.pop(msg.body["region"])
            else:
                items = None
            if items is None:
                r = self.handle(msg.src, msg.op, msg.body)
                if r is not None:
                    yield from r
            else:
                for op, body in items:
                    r = self.handle(msg.src, op, body)
                    if r is not None:
                        yield from r
            yield from self.flush()

    # hooks
    def started(self):
        pass

    def accepts(self):
        return None

    def deadline(self):
        return None

    def on_timer(self):
        return None

    def handle(self, src, op, body):  # pragma: no cover - abstract
        raise NotImplementedError

    # outgoing traffic
    def send(self, dest, op, body):
        self._out.append((dest, op, body))

    def reply(self, req: dict, op: str, **fields):
        body = {"cid": req["cid"], "sid": self.me}
        if "seq" in req:
            body["seq"] = req["seq"]
        body.update(fields)
        via = req.get("via")
        if via is None:
            self._out.append((req["cid"], op, body))
        else:
            self._batches.setdefault(via, []).append((op, body))

    def flush(self):
        out, self._out = self._out, []
        for dest, op, body in out:
            yield Send(dest, op, body)
        if self._batches:
            batches, self._batches = self._batches, OrderedDict()
            for via, items in batches.items():
                yield Send(via, IN, {"items": items}, size=len(items))


# ------------------------------------------------------------------ ports

class FlatPort:
    """Client talks to servers directly."""

    def __init__(self, ctx):
        self.ctx = ctx

    def send(self, dest, op, body=None):
        b = dict(body or {})
        b["cid"] = self.ctx.me
        yield Send(dest, op, b)

    def recv(self):
        msg = yield Recv()
        return msg

    def call(self, dest, op, body=None):
        yield from self.send(dest, op, body)
        msg = yield from self.recv()
        return msg


class MasterPort(FlatPort):
    """Client routes every request through its island master."""

    def __init__(self, ctx, master):
        super().__init__(ctx)
        self.master = master

    def send(self, dest, op, body=None):
        b = dict(body or {})
        b["cid"] = self.ctx.me
        b["via"] = self.master
        yield Send(self.master, OUT, {"dest": dest, "op": op, "body": b})


class Reply:
    """Envelope look-alike for replies that never crossed a mailbox."""

    __slots__ = ("op", "body", "src")

    def __init__(self, op, body, src=None):
        self.op, self.body, self.src = op, body, src

    def get(self, key, default=None):
        return self.body.get(key, default)

    def __getitem__(self, key):
        return self.body[key]


def is_reply(msg) -> bool:
    return isinstance(msg, (Envelope, Reply))
