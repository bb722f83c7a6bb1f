"""Deterministic discrete-step simulator of a clustered many-core machine.

Processes are Python generators.  Each ``yield`` hands the scheduler one
action (send, receive, busy work, a shared-cell operation, a DMA request or
a remote memory access).  Every executed action costs one scheduler step;
plain Python code between two yields is free local computation.

Mailboxes are per core.  Channels are FIFO: a message is never delivered
to a mailbox ahead of an earlier message on the same (src, dst) pair.
"""

from __future__ import annotations

import csv
import heapq
import io
import random
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Any, Callable, Generator, Iterable, Optional

ROUND_ROBIN = "deterministic-round-robin"
RANDOM_FAIR = "seeded-random-fair"

ENGINE = -1  # source id used for DMA completion notices


class ConfigError(ValueError):
    pass


class SimFault(RuntimeError):
    pass


@dataclass(frozen=True)
class Topology:
    islands: int
    cores_per_island: int

    def __post_init__(self):
        if self.islands < 1 or self.cores_per_island < 1:
            raise ConfigError("islands and cores_per_island must be >= 1")

    @property
    def total(self) -> int:
        return self.islands * self.cores_per_island

    def island(self, core: int) -> int:
        return core // self.cores_per_island

    def cores_of(self, island: int) -> range:
        c = self.cores_per_island
        return range(island * c, island * c + c)


@dataclass
class SchedulerConfig:
    seed: int = 0
    mode: str = RANDOM_FAIR
    max_steps: int = 1_000_000
    max_delay: int = 3
    act_prob: float = 0.5
    window: int = 4
    log: bool = True
    # message cost parameters; they feed metrics only
    mms: int = 2
    c_m: float = 1.0
    c_d: float = 0.25
    mailbox_bound: Optional[int] = None

    def __post_init__(self):
        if self.mode not in (ROUND_ROBIN, RANDOM_FAIR):
            raise ConfigError(f"unknown scheduler mode {self.mode!r}")
        if self.max_delay < 1 or self.window < 1:
            raise ConfigError("max_delay and window must be >= 1")


class Envelope:
    __slots__ = ("mid", "src", "dst", "op", "body", "size", "sent_at")

    def __init__(self, mid, src, dst, op, body, size=1, sent_at=0):
        self.mid = mid
        self.src = src
        self.dst = dst
        self.op = op
        self.body = body
        self.size = size
        self.sent_at = sent_at

    def get(self, key, default=None):
        return self.body.get(key, default) if self.body else default

    def __getitem__(self, key):
        return self.body[key]

    def __repr__(self):
        return f"Envelope(#{self.mid} {self.src}->{self.dst} {self.op} {self.body})"


# ---------------------------------------------------------------- actions

class Action:
    __slots__ = ()


class Send(Action):
    __slots__ = ("dest", "op", "body", "size")

    def __init__(self, dest, op, body=None, size=1):
        self.dest, self.op, self.body, self.size = dest, op, body, size


class Recv(Action):
    __slots__ = ("src", "op", "pred", "deadline")

    def __init__(self, src=None, op=None, pred=None, deadline=None):
        self.src = _as_set(src)
        self.op = _as_set(op)
        self.pred = pred
        self.deadline = deadline

    def matches(self, env: Envelope) -> bool:
        if self.src is not None and env.src not in self.src:
            return False
        if self.op is not None and env.op not in self.op:
            return False
        return self.pred is None or self.pred(env)


class Work(Action):
    __slots__ = ("n",)

    def __init__(self, n):
        self.n = n


class Atomic(Action):
    __slots__ = ("cell", "fn")

    def __init__(self, cell, fn):
        self.cell, self.fn = cell, fn


class WaitCell(Action):
    __slots__ = ("cell", "pred")

    def __init__(self, cell, pred):
        self.cell, self.pred = cell, pred


class Dma(Action):
    __slots__ = ("src", "src_region", "dst", "dst_region", "length", "burst", "tag")

    def __init__(self, src, src_region, dst, dst_region, length, burst, tag):
        self.src, self.src_region = src, src_region
        self.dst, self.dst_region = dst, dst_region
        self.length, self.burst, self.tag = length, burst, tag


class RemoteRead(Action):
    __slots__ = ("core", "region", "index")

    def __init__(self, core, region, index):
        self.core, self.region, self.index = core, region, index


class RemoteWrite(Action):
    __slots__ = ("core", "region", "index", "value")

    def __init__(self, core, region, index, value):
        self.core, self.region, self.index, self.value = core, region, index, value


def _as_set(x):
    if x is None:
        return None
    if isinstance(x, (set, frozenset)):
        return x
    if isinstance(x, (list, tuple)):
        return frozenset(x)
    return frozenset((x,))


# ------------------------------------------------------------- processes

READY, BLOCKED, SLEEPING, WAITCELL, DONE = range(5)


class Process:
    __slots__ = ("pid", "name", "gen", "action", "status", "daemon", "result",
                 "skipped", "wake_token", "ctx", "resume")

    def __init__(self, pid, name, gen, daemon):
        self.pid = pid
        self.name = name
        self.gen = gen
        self.action = None
        self.status = READY
        self.daemon = daemon
        self.result = None
        self.skipped = 0
        self.wake_token = 0
        self.ctx = None
        self.resume = None


@dataclass
class HistoryEvent:
    idx: int
    pid: int
    kind: str  # "invoke" | "respond"
    op: str
    args: tuple = ()
    result: Any = None
    step: int = 0


@dataclass
class RunResult:
    steps: int
    truncated: bool
    deadlock: bool
    blocked: list
    log: list
    history: list
    sent: dict
    received: dict
    results: dict
    max_depth: dict = None   # deepest mailbox seen per core

    def csv(self) -> str:
        return log_to_csv(self.log)


class Ctx:
    """Per-process handle used by process code to build actions."""

    __slots__ = ("sim", "me", "proc")

    def __init__(self, sim: "Sim", me: int, proc: Process):
        self.sim = sim
        self.me = me
        self.proc = proc

    @property
    def now(self) -> int:
        return self.sim.step

    @property
    def island(self) -> int:
        return self.sim.topology.island(self.me)

    def send(self, dest, op, body=None, size=1):
        return Send(dest, op, body, size)

    def recv(self, src=None, op=None, pred=None, deadline=None):
        return Recv(src, op, pred, deadline)

    def work(self, n):
        return Work(n)

    def atomic(self, name, fn):
        return Atomic((self.island, name), fn)

    def read_cell(self, name):
        return Atomic((self.island, name), lambda v: (v, v))

    def write_cell(self, name, value):
        return Atomic((self.island, name), lambda v: (value, v))

    def wait_cell(self, name, pred):
        return WaitCell((self.island, name), pred)

    def dma(self, dst, dst_region, src_region, length, burst=None, tag=None):
        b = burst if burst is not None else self.sim.dma_burst
        return Dma(self.me, src_region, dst, dst_region, length, b, tag)

    def remote_read(self, core, region, index):
        return RemoteRead(core, region, index)

    def remote_write(self, core, region, index, value):
        return RemoteWrite(core, region, index, value)

    def memory(self, region=None):
        mem = self.sim.memory[self.me]
        return mem if region is None else mem.setdefault(region, [])

    def note(self, kind, op="", detail="", dst=None):
        self.sim.note(kind, self.me, dst if dst is not None else self.me, op, detail)

    def invoke(self, op, *args):
        self.sim.record(self.me, "invoke", op, args, None)

    def respond(self, op, result):
        self.sim.record(self.me, "respond", op, (), result)


class _DmaJob:
    __slots__ = ("req", "done", "initiator", "steps")

    def __init__(self, req, initiator):
        self.req = req
        self.done = 0
        self.initiator = initiator
        self.steps = 0


class Sim:
    def __init__(self, topology: Topology, config: Optional[SchedulerConfig] = None,
                 dma_burst: int = 4):
        self.topology = topology
        self.config = config or SchedulerConfig()
        self.rng = random.Random(self.config.seed)
        self.dma_burst = dma_burst
        self.step = 0
        self.procs: dict[int, Process] = {}
        self.mailboxes: dict[int, deque] = defaultdict(deque)
        self.inflight: list = []
        self.channel_last: dict = {}
        self.timers: list = []
        self.cells: dict = defaultdict(int)
        self.cell_waiters: dict = defaultdict(list)
        self.memory: dict = defaultdict(dict)
        self.dma_jobs: list = []
        self.log: list = []
        self.history: list = []
        self.sent = defaultdict(int)
        self.received = defaultdict(int)
        self.max_depth = defaultdict(int)
        self.overflows = 0
        self._mid = 0
        self._seq = 0
        self._hidx = 0
        self._live = 0

    # ---------------------------------------------------------- setup

    def spawn(self, core: int, fn: Callable[..., Generator], *args,
              daemon: bool = False, name: Optional[str] = None, **kwargs) -> Process:
        self._check_core(core)
        if core in self.procs:
            raise ConfigError(f"core {core} already runs a process")
        proc = Process(core, name or getattr(fn, "__name__", "proc"), None, daemon)
        ctx = Ctx(self, core, proc)
        proc.ctx = ctx
        proc.gen = fn(ctx, *args, **kwargs)
        self.procs[core] = proc
        if not daemon:
            self._live += 1
        return proc

    def _check_core(self, core):
        if not isinstance(core, int) or core < 0 or core >= self.topology.total:
            raise ConfigError(f"invalid core id {core!r}")

    # ---------------------------------------------------------- logging

    def note(self, kind, src, dst, op, detail):
        if self.config.log:
            self.log.append((self.step, kind, src, dst, op, detail))

    def record(self, pid, kind, op, args, result):
        self.history.append(HistoryEvent(self._hidx, pid, kind, op, tuple(args), result, self.step))
        self._hidx += 1

    # ---------------------------------------------------------- run loop

    def run(self) -> RunResult:
        cfg = self.config
        for proc in self.procs.values():
            self._advance(proc, None)
        truncated = False
        # once every client exits and the network drains, idle daemons
        # (servers, master timers) would tick forever; stop there
        has_clients = self._live > 0
        while True:
            self._deliver_due()
            self._fire_timers()
            self._dma_tick()
            ready = [p for p in self._ordered() if p.status == READY]
            if has_clients and not self._live and not ready and not self.inflight \
                    and not self.dma_jobs:
                break
            if ready:
                if cfg.mode == RANDOM_FAIR:
                    self.rng.shuffle(ready)
                    for p in ready:
                        if p.skipped + 1 >= cfg.window or self.rng.random() < cfg.act_prob:
                            p.skipped = 0
                            if p.status == READY:
                                self._execute(p)
                        else:
                            p.skipped += 1
                else:
                    for p in ready:
                        if p.status == READY:
                            self._execute(p)
            nxt = self._next_event_time(bool(ready))
            if nxt is None:
                break
            if nxt >= cfg.max_steps:
                self.step = cfg.max_steps
                truncated = True
                self.note("truncated", -1, -1, "", f"max_steps={cfg.max_steps}")
                break
            self.step = nxt
        blocked = [
            (p.pid, p.name, _describe(p.action))
            for p in self._ordered()
            if p.status != DONE and not p.daemon
        ]
        deadlock = bool(blocked) and not truncated
        if deadlock:
            self.note("deadlock", -1, -1, "", ";".join(f"{pid}:{n}:{a}" for pid, n, a in blocked))
        return RunResult(
            steps=self.step,
            truncated=truncated,
            deadlock=deadlock,
            blocked=blocked,
            log=self.log,
            history=self.history,
            sent=dict(self.sent),
            received=dict(self.received),
            results={p.pid: p.result for p in self.procs.values()},
            max_depth=dict(self.max_depth),
        )

    def _ordered(self):
        return [self.procs[k] for k in sorted(self.procs)]

    def _next_event_time(self, acted: bool):
        if acted or self.dma_jobs:
            return self.step + 1
        cands = []
        if self.inflight:
            cands.append(self.inflight[0][0])
        while self.timers and not self._timer_live(self.timers[0]):
            heapq.heappop(self.timers)
        if self.timers:
            cands.append(self.timers[0][0])
        if not cands:
            return None
        return max(self.step + 1, min(cands))

    def _timer_live(self, entry):
        _, _, pid, token = entry
        p = self.procs[pid]
        return p.wake_token == token and p.status in (SLEEPING, BLOCKED)

    def _deliver_due(self):
        q = self.inflight
        while q and q[0][0] <= self.step:
            _, _, env = heapq.heappop(q)
            box = self.mailboxes[env.dst]
            box.append(env)
            depth = len(box)
            if depth > self.max_depth[env.dst]:
                self.max_depth[env.dst] = depth
            bound = self.config.mailbox_bound
            if bound is not None and depth > bound:
                self.overflows += 1
            if env.src != ENGINE:
                self.received[env.dst] += 1
            self.note("deliver", env.src, env.dst, env.op, env)
            p = self.procs.get(env.dst)
            if p is not None and p.status == BLOCKED and p.action.matches(env):
                p.status = READY
                p.wake_token += 1

    def _fire_timers(self):
        while self.timers and self.timers[0][0] <= self.step:
            _, _, pid, token = heapq.heappop(self.timers)
            p = self.procs[pid]
            if p.wake_token != token:
                continue
            if p.status == SLEEPING:
                p.status = READY
                p.wake_token += 1
                self._advance(p, None)
            elif p.status == BLOCKED:
                # receive deadline passed without a match
                p.status = READY
                p.wake_token += 1
                self.note("timeout", p.pid, p.pid, "", "")
                self._advance(p, None)

    def _dma_tick(self):
        if not self.dma_jobs:
            return
        still = []
        for job in self.dma_jobs:
            req = job.req
            src = self.memory[req.src].setdefault(req.src_region, [])
            dst = self.memory[req.dst].setdefault(req.dst_region, [])
            lo = job.done
            hi = min(req.length, lo + req.burst)
            if len(dst) < req.length:
                dst.extend([None] * (req.length - len(dst)))
            if hi > len(src):
                raise SimFault(f"DMA read beyond region {req.src_region!r} on core {req.src}")
            dst[lo:hi] = src[lo:hi]
            job.done = hi
            job.steps += 1
            self.note("dma_burst", req.src, req.dst, str(req.tag), f"{lo}:{hi}")
            if job.done >= req.length:
                self._post(ENGINE, job.initiator, "DMA_DONE",
                           {"tag": req.tag, "steps": job.steps, "region": req.dst_region}, 1)
            else:
                still.append(job)
        self.dma_jobs = still

    # ---------------------------------------------------------- actions

    def _post(self, src, dst, op, body, size):
        self._mid += 1
        env = Envelope(self._mid, src, dst, op, body, size, self.step)
        cfg = self.config
        if cfg.mode == ROUND_ROBIN or src == ENGINE:
            delay = 1
        else:
            delay = self.rng.randint(1, cfg.max_delay)
        t = self.step + delay
        key = (src, dst)
        last = self.channel_last.get(key)
        if last is not None and last > t:
            t = last
        self.channel_last[key] = t
        self._seq += 1
        heapq.heappush(self.inflight, (t, self._seq, env))
        return env

    def _execute(self, p: Process):
        a = p.action
        cls = type(a)
        if cls is Send:
            self._check_core(a.dest)
            env = self._post(p.pid, a.dest, a.op, a.body, a.size)
            self.sent[p.pid] += 1
            self.note("send", p.pid, a.dest, a.op, env)
            self._advance(p, None)
        elif cls is Recv:
            box = self.mailboxes[p.pid]
            for i, env in enumerate(box):
                if a.matches(env):
                    del box[i]
                    self.note("recv", env.src, p.pid, env.op, env)
                    self._advance(p, env)
                    return
            p.status = BLOCKED
            if a.deadline is not None:
                if a.deadline <= self.step:
                    p.status = READY
                    self._advance(p, None)
                    return
                p.wake_token += 1
                self._push_timer(a.deadline, p)
        elif cls is Work:
            p.status = SLEEPING
            p.wake_token += 1
            self._push_timer(self.step + a.n, p)
        elif cls is Atomic:
            old = self.cells[a.cell]
            new, ret = a.fn(old)
            self.cells[a.cell] = new
            self.note("cell", p.pid, p.pid, str(a.cell[1]), f"{old}->{new}")
            if new != old:
                self._wake_cell(a.cell)
            self._advance(p, ret)
        elif cls is WaitCell:
            v = self.cells[a.cell]
            if a.pred(v):
                self._advance(p, v)
            else:
                p.status = WAITCELL
                self.cell_waiters[a.cell].append(p)
        elif cls is Dma:
            self._check_core(a.dst)
            if a.length < 0:
                raise SimFault("negative DMA length")
            src = self.memory[a.src].get(a.src_region)
            if a.length and (src is None or len(src) < a.length):
                raise SimFault(f"DMA source region {a.src_region!r} too short")
            self.note("dma_start", p.pid, a.dst, str(a.tag), f"len={a.length} burst={a.burst}")
            if a.length == 0:
                self._post(ENGINE, p.pid, "DMA_DONE", {"tag": a.tag, "steps": 0, "region": a.dst_region}, 1)
            else:
                self.dma_jobs.append(_DmaJob(a, p.pid))
            self._advance(p, None)
        elif cls is RemoteRead:
            region = self.memory[a.core].setdefault(a.region, [])
            if a.index >= len(region):
                raise SimFault(f"remote read out of bounds {a.region}[{a.index}]")
            self.note("rread", p.pid, a.core, str(a.region), str(a.index))
            self._advance(p, region[a.index])
        elif cls is RemoteWrite:
            region = self.memory[a.core].setdefault(a.region, [])
            if a.index >= len(region):
                raise SimFault(f"remote write out of bounds {a.region}[{a.index}]")
            region[a.index] = a.value
            self.note("rwrite", p.pid, a.core, str(a.region), f"{a.index}={a.value}")
            self._advance(p, None)
        else:
            raise SimFault(f"unknown action {a!r} from process {p.pid}")

    def _push_timer(self, t, p):
        self._seq += 1
        heapq.heappush(self.timers, (t, self._seq, p.pid, p.wake_token))

    def _wake_cell(self, cell):
        waiters = self.cell_waiters.get(cell)
        if not waiters:
            return
        keep = []
        for p in waiters:
            if p.status == WAITCELL:
                p.status = READY
                p.action = WaitCell(cell, p.action.pred)
            # ready processes re-check their predicate when scheduled
        self.cell_waiters[cell] = keep

    def _advance(self, p: Process, value):
        try:
            while True:
                act = p.gen.send(value)
                if type(act) is Work and act.n <= 0:
                    value = None
                    continue
                break
        except StopIteration as stop:
            p.status = DONE
            p.result = stop.value
            if not p.daemon:
                self._live -= 1
            p.action = None
            self.note("exit", p.pid, p.pid, "", "")
            return
        p.action = act
        p.status = READY


def _describe(action) -> str:
    if action is None:
        return "-"
    if isinstance(action, Recv):
        parts = []
        if action.src is not None:
            parts.append(f"src={sorted(action.src)}")
        if action.op is not None:
            parts.append(f"op={sorted(action.op)}")
        return "recv(" + ",".join(parts) + ")"
    return type(action).__name__.lower()


# -------------------------------------------------------------- log tools

def _fmt_detail(d) -> str:
    if isinstance(d, Envelope):
        return f"#{d.mid} {d.body}" if d.body is not None else f"#{d.mid}"
    return str(d)


def log_to_csv(log: Iterable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "kind", "src", "dst", "op", "detail"])
    for step, kind, src, dst, op, detail in log:
        w.writerow([step, kind, src, dst, op, _fmt_detail(detail)])
    return buf.getvalue()


def check_fifo(log: Iterable) -> list:
    """Return channel-order violations: sends vs mailbox deliveries per (src, dst)."""
    sent = defaultdict(deque)
    bad = []
    for step, kind, src, dst, op, detail in log:
        if not isinstance(detail, Envelope) or src == ENGINE:
            continue
        if kind == "send":
            sent[(src, dst)].append(detail.mid)
        elif kind == "deliver":
            q = sent[(src, dst)]
            if not q or q[0] != detail.mid:
                bad.append((step, src, dst, detail.mid))
                if detail.mid in q:
                    q.remove(detail.mid)
            else:
                q.popleft()
    return bad


def check_conservation(log: Iterable) -> bool:
    """Every sent envelope is delivered exactly once (meaningful at quiescence)."""
    sent, delivered = [], []
    for _, kind, src, _, _, detail in log:
        if isinstance(detail, Envelope) and src != ENGINE:
            if kind == "send":
                sent.append(detail.mid)
            elif kind == "deliver":
                delivered.append(detail.mid)
    return sorted(sent) == sorted(delivered) and len(set(delivered)) == len(delivered)
