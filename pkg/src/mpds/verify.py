"""History recording and linearizability checking.

The checker is a Wing & Gong style depth-first search over candidate
linearization orders, memoised on (set of linearized ops, abstract state).
A brute-force permutation oracle is kept alongside it for self-validation.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional, Sequence

from .simcore import HistoryEvent

DEFAULT_CAP = 14
PENDING = object()


class HistoryError(ValueError):
    pass


class CapExceeded(ValueError):
    pass


# ------------------------------------------------------- sequential specs

@dataclass(frozen=True)
class SequentialSpec:
    name: str
    init: Any
    apply: Callable[[Any, str, tuple], tuple]


def _stack_apply(state, op, args):
    if op == "push":
        return state + (args[0],), True
    if op == "pop":
        if not state:
            return state, None
        return state[:-1], state[-1]
    raise HistoryError(f"stack: unknown op {op!r}")


def _queue_apply(state, op, args):
    if op == "enq":
        return state + (args[0],), True
    if op == "deq":
        if not state:
            return state, None
        return state[1:], state[0]
    raise HistoryError(f"queue: unknown op {op!r}")


def _deque_apply(state, op, args):
    if op == "enq_t":
        return state + (args[0],), True
    if op == "enq_h":
        return (args[0],) + state, True
    if op == "deq_t":
        return (state[:-1], state[-1]) if state else (state, None)
    if op == "deq_h":
        return (state[1:], state[0]) if state else (state, None)
    raise HistoryError(f"deque: unknown op {op!r}")


def _set_apply(state, op, args):
    k = args[0]
    if op == "insert":
        return (state, False) if k in state else (state | {k}, True)
    if op == "search":
        return state, k in state
    if op == "delete":
        return (state - {k}, True) if k in state else (state, False)
    raise HistoryError(f"set: unknown op {op!r}")


def _register_apply(state, op, args):
    if op == "read":
        return state, state
    if op == "write":
        return args[0], None
    if op == "faa":
        v = state + args[0]
        return v, v
    if op in ("swap", "get_and_set"):
        return args[0], state
    if op == "cas":
        old, new = args
        return (new if state == old else state), state
    raise HistoryError(f"register: unknown op {op!r}")


def _registers_apply(state, op, args):
    """Several independent registers, addressed by the first argument."""
    addr, rest = args[0], args[1:]
    d = dict(state)
    nv, res = _register_apply(d.get(addr, 0), op, rest)
    d[addr] = nv
    return tuple(sorted(d.items())), res


STACK = SequentialSpec("stack", (), _stack_apply)
QUEUE = SequentialSpec("queue", (), _queue_apply)
DEQUE = SequentialSpec("deque", (), _deque_apply)
SET = SequentialSpec("set", frozenset(), _set_apply)
REGISTER = SequentialSpec("register", 0, _register_apply)
REGISTERS = SequentialSpec("registers", (), _registers_apply)

SPECS = {s.name: s for s in (STACK, QUEUE, DEQUE, SET, REGISTER, REGISTERS)}


def run_sequential(spec: SequentialSpec, ops: Iterable[tuple]) -> list:
    state, out = spec.init, []
    for op, *args in ops:
        state, res = spec.apply(state, op, tuple(args))
        out.append(res)
    return out


# ------------------------------------------------------------- histories

@dataclass(frozen=True)
class Op:
    id: int
    pid: int
    name: str
    args: tuple
    result: Any
    inv: int
    res: float  # response index, inf when pending

    @property
    def pending(self) -> bool:
        return self.res == float("inf")


class Recorder:
    """Collects invoke/respond events outside the simulator (tests, tools)."""

    def __init__(self):
        self.events: list[HistoryEvent] = []
        self._open: dict[int, HistoryEvent] = {}

    def invoke(self, pid, op, *args):
        if pid in self._open:
            raise HistoryError(f"process {pid} already has an open operation")
        ev = HistoryEvent(len(self.events), pid, "invoke", op, tuple(args))
        self._open[pid] = ev
        self.events.append(ev)

    def respond(self, pid, op, result):
        inv = self._open.pop(pid, None)
        if inv is None or inv.op != op:
            raise HistoryError(f"response from process {pid} without a matching invoke")
        self.events.append(HistoryEvent(len(self.events), pid, "respond", op, (), result))


def to_ops(events: Sequence[HistoryEvent]) -> list[Op]:
    """Pair invokes with responses; reject malformed histories."""
    open_: dict[int, HistoryEvent] = {}
    ops: list[Op] = []
    order = sorted(events, key=lambda e: e.idx)
    for ev in order:
        if ev.kind == "invoke":
            if ev.pid in open_:
                raise HistoryError(f"process {ev.pid} invoked twice without a response")
            open_[ev.pid] = ev
        elif ev.kind == "respond":
            inv = open_.pop(ev.pid, None)
            if inv is None:
                raise HistoryError(f"unmatched response at index {ev.idx}")
            if inv.op != ev.op:
                raise HistoryError(f"response {ev.op!r} does not match invoke {inv.op!r}")
            ops.append(Op(len(ops), ev.pid, inv.op, tuple(inv.args), ev.result, inv.idx, ev.idx))
        else:
            raise HistoryError(f"bad event kind {ev.kind!r}")
    for inv in open_.values():
        ops.append(Op(len(ops), inv.pid, inv.op, tuple(inv.args), PENDING, inv.idx, float("inf")))
    return sorted(ops, key=lambda o: o.inv)


def intervals(events: Sequence[HistoryEvent]) -> list[tuple]:
    return [(o.pid, o.name, o.inv, o.res) for o in to_ops(events)]


# --------------------------------------------------------------- checker

@dataclass
class CheckResult:
    ok: bool
    witness: Optional[list] = None
    failing_prefix: Optional[int] = None
    closure: Optional[str] = None

    def __bool__(self):
        return self.ok


def _search(ops: list[Op], spec: SequentialSpec, optional_pending: bool):
    """DFS over linearizations. Pending ops may be skipped iff optional_pending."""
    n = len(ops)
    must = 0
    for o in ops:
        if not (o.pending and optional_pending):
            must |= 1 << o.id
    by_id = {o.id: o for o in ops}
    # preds[i]: ops that must be linearized before op i (responded before i was invoked)
    preds = [0] * n
    for a in ops:
        for b in ops:
            if b.res < a.inv:
                preds[a.id] |= 1 << b.id
    seen = set()
    path: list[int] = []

    def dfs(done: int, state) -> bool:
        if done & must == must:
            return True
        key = (done, state)
        if key in seen:
            return False
        seen.add(key)
        for i in range(n):
            bit = 1 << i
            if done & bit:
                continue
            # every op that responded before i is invoked must already be placed;
            # skipped pending ops never block anything since their res is inf
            if preds[i] & ~done:
                continue
            o = by_id[i]
            new_state, res = spec.apply(state, o.name, o.args)
            if o.result is not PENDING and res != o.result:
                continue
            path.append(i)
            if dfs(done | bit, new_state):
                return True
            path.pop()
        return False

    ok = dfs(0, spec.init)
    return ok, (list(path) if ok else None)


def check_linearizable(history, spec, cap: int = DEFAULT_CAP,
                       pending: str = "either") -> CheckResult:
    """Decide linearizability of a finished (or cut-off) history.

    ``history`` is a sequence of HistoryEvent or of Op.  ``pending`` chooses
    how operations without a response are closed: ``"drop"`` removes them,
    ``"complete"`` forces each to take effect with any result,
    ``"either"`` accepts if one of the two closures is linearizable, and
    ``"any"`` lets every pending op independently take effect or not.
    """
    if isinstance(spec, str):
        spec = SPECS[spec]
    ops = _coerce(history)
    if len(ops) > cap:
        raise CapExceeded(f"history has {len(ops)} operations; checker cap is {cap}")
    ops = [Op(i, o.pid, o.name, o.args, o.result, o.inv, o.res) for i, o in enumerate(ops)]
    has_pending = any(o.pending for o in ops)
    closures = ["complete"] if not has_pending else (
        ["drop", "complete"] if pending == "either" else [pending])
    for closure in closures:
        sub = ops
        if closure == "drop":
            sub = [o for o in ops if not o.pending]
            sub = [Op(i, o.pid, o.name, o.args, o.result, o.inv, o.res) for i, o in enumerate(sub)]
        ok, path = _search(sub, spec, optional_pending=(closure == "any"))
        if ok:
            return CheckResult(True, [sub[i] for i in path], None, closure)
    return CheckResult(False, None, _failing_prefix(ops, spec), None)


def _failing_prefix(ops: list[Op], spec) -> Optional[int]:
    """Smallest event index t such that the history cut at t is already not linearizable."""
    points = sorted({o.inv for o in ops} | {o.res for o in ops if not o.pending})
    for t in points:
        cut = []
        for o in ops:
            if o.inv > t:
                continue
            if o.res <= t:
                cut.append(o)
            else:
                cut.append(Op(o.id, o.pid, o.name, o.args, PENDING, o.inv, float("inf")))
        cut = [Op(i, o.pid, o.name, o.args, o.result, o.inv, o.res) for i, o in enumerate(cut)]
        ok, _ = _search(cut, spec, optional_pending=True)
        if not ok:
            return t
    return None


def _coerce(history) -> list[Op]:
    items = list(history)
    if items and isinstance(items[0], Op):
        return sorted(items, key=lambda o: o.inv)
    return to_ops(items)


def permutation_oracle(history, spec, pending: str = "either") -> bool:
    """Naive reference: try every ordering of every admissible op subset."""
    if isinstance(spec, str):
        spec = SPECS[spec]
    ops = _coerce(history)
    done_ops = [o for o in ops if not o.pending]
    pend = [o for o in ops if o.pending]
    sizes = {"drop": [0], "complete": [len(pend)], "either": sorted({0, len(pend)}),
             "any": range(len(pend) + 1)}[pending]
    for r in sizes:
        for extra in itertools.combinations(pend, r):
            chosen = done_ops + list(extra)
            for perm in itertools.permutations(chosen):
                if _respects_real_time(perm) and _replays(perm, spec):
                    return True
    return False


def _respects_real_time(perm) -> bool:
    for i, a in enumerate(perm):
        for b in perm[i + 1:]:
            if b.res < a.inv:
                return False
    return True


def _replays(perm, spec) -> bool:
    state = spec.init
    for o in perm:
        state, res = spec.apply(state, o.name, o.args)
        if o.result is not PENDING and res != o.result:
            return False
    return True


# --------------------------------------------------------- file formats

def _enc(v) -> str:
    if v is PENDING:
        return ""
    return json.dumps(v)


def _dec(s: str):
    return json.loads(s) if s != "" else None


def write_history(events: Sequence[HistoryEvent], path_or_buf) -> None:
    own = isinstance(path_or_buf, str)
    f = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["idx", "pid", "kind", "op", "args", "result"])
        for ev in sorted(events, key=lambda e: e.idx):
            res = _enc(ev.result) if ev.kind == "respond" else ""
            w.writerow([ev.idx, ev.pid, ev.kind, ev.op, json.dumps(list(ev.args)), res])
    finally:
        if own:
            f.close()


def read_history(path_or_buf) -> list[HistoryEvent]:
    own = isinstance(path_or_buf, str)
    f = open(path_or_buf, newline="") if own else path_or_buf
    try:
        rows = list(csv.DictReader(f))
    finally:
        if own:
            f.close()
    out = []
    for r in rows:
        args = tuple(_tuplify(a) for a in json.loads(r["args"] or "[]"))
        res = _tuplify(_dec(r["result"])) if r["kind"] == "respond" else None
        out.append(HistoryEvent(int(r["idx"]), int(r["pid"]), r["kind"], r["op"], args, res))
    return out


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def history_csv(events) -> str:
    buf = io.StringIO()
    write_history(events, buf)
    return buf.getvalue()
