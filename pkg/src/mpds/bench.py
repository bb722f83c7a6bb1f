"""Workload runner, metrics and CSV output."""

from __future__ import annotations

import csv
import os
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .dir_structs import DEQ_H, DEQ_T, ENQ_H, ENQ_T, POP, PUSH, DirDeque, DirQueue, DirStack
from .directory import Directory
from .hierarchy import CQueue, CStack, spawn_masters
from .lists import SortedList, UnsortedList, UnsortedListAlt
from .node import FlatPort, MasterPort
from .simcore import RANDOM_FAIR, ConfigError, SchedulerConfig, Sim, Topology
from .syncprims import Atomics
from .token_structs import TokenDeque, TokenQueue, TokenStack
from .verify import write_history

ALGOS = ("cstack", "estack", "hstack", "tstack", "dstack", "cqueue", "hqueue", "dqueue",
         "tqueue", "ddeque", "tdeque", "ulist", "ulist-alt", "slist", "atomics", "rwmon")

CSV_HEADER = ["algo", "m", "c", "N", "W", "seed", "total_msgs", "max_server_msgs", "throughput", "sf"]

# hierarchy / elimination defaults per algorithm
_DEFAULT_HIER = {"estack", "hstack", "hqueue", "dqueue", "dstack"}
_DEFAULT_ELIM = {"estack"}


@dataclass
class WorkloadConfig:
    algo: str
    islands: int = 1
    cores: int = 8
    ops: int = 1000
    work: int = 0
    seed: int = 0
    capacity: int = 64
    hier: Optional[bool] = None
    elim: Optional[bool] = None
    servers: int = 4
    keys: int = 64
    period: int = 8
    batch_cap: int = 16
    patience: int = 2
    mode: str = RANDOM_FAIR
    max_steps: int = 50_000_000
    log: bool = False

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; choose from {', '.join(ALGOS)}")
        if self.ops < 0 or self.ops % 2:
            raise ConfigError("ops must be a non-negative even number (operations come in pairs)")
        if self.work < 0:
            raise ConfigError("work bound must be >= 0")
        if self.hier is None:
            self.hier = self.algo in _DEFAULT_HIER
        if self.elim is None:
            self.elim = self.algo in _DEFAULT_ELIM
        if self.elim and not self.hier:
            raise ConfigError("elimination runs at island masters; it needs --hier on")


@dataclass
class Metrics:
    algo: str
    m: int
    c: int
    N: int
    W: int
    seed: int
    total_msgs: int
    max_server_msgs: int
    throughput: float
    sf: float
    steps: int = 0
    per_server: dict = field(default_factory=dict)
    sf_per_server: dict = field(default_factory=dict)
    deadlock: bool = False
    truncated: bool = False
    max_mailbox: int = 0

    def row(self):
        return [self.algo, self.m, self.c, self.N, self.W, self.seed, self.total_msgs,
                self.max_server_msgs, f"{self.throughput:.6f}", f"{self.sf:.6f}"]


def scalability_factor(received: dict, servers, ops: int) -> tuple[float, dict]:
    """Max over servers of messages received per completed operation."""
    per = {s: (received.get(s, 0) / ops if ops else 0.0) for s in servers}
    return (max(per.values()) if per else 0.0), per


def emit_csv(metrics, path) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(CSV_HEADER)
        for m in (metrics if isinstance(metrics, list) else [metrics]):
            w.writerow(m.row())


# ------------------------------------------------------------- structures

@dataclass
class Rig:
    """What the runner needs to know about one structure instance."""
    obj: object
    pair: tuple            # two callables: (port, rng) -> (name, args, generator)
    servers: list          # cores whose receive counts define sf
    spec: Optional[str] = None
    elim: dict = field(default_factory=dict)
    combine: tuple = ()
    sync: Optional[int] = None
    spawned: list = field(default_factory=list)


def _op(method, name, arg=None):
    def choose(port, rng):
        args = (arg(rng),) if arg else ()
        return name, args, method(port, *args)
    return choose


def _fresh():
    n = [0]

    def f(rng):
        n[0] += 1
        return n[0]
    return f


def _build(cfg: WorkloadConfig, take: Callable[[int], list]) -> Rig:
    a = cfg.algo
    val = _fresh()
    if a in ("cstack", "estack", "hstack"):
        core, = take(1)
        s = CStack(core)
        return Rig(s, (_op(s.push, "push", val), _op(s.pop, "pop")), [core], "stack",
                   elim={core: (PUSH, POP)})
    if a in ("cqueue", "hqueue"):
        core, = take(1)
        q = CQueue(core)
        return Rig(q, (_op(q.enqueue, "enq", val), _op(q.dequeue, "deq")), [core], "queue")
    if a == "tstack":
        cores = take(cfg.servers)
        s = TokenStack(cores, cfg.capacity)
        return Rig(s, (_op(s.push, "push", val), _op(s.pop, "pop")), cores, "stack")
    if a == "tqueue":
        cores = take(cfg.servers)
        q = TokenQueue(cores, cfg.capacity, dynamic=True)
        return Rig(q, (_op(q.enqueue, "enq", val), _op(q.dequeue, "deq")), cores, "queue")
    if a == "tdeque":
        cores = take(cfg.servers)
        d = TokenDeque(cores, cfg.capacity, dynamic=True)
        return Rig(d, (_deque_ins(d, val), _deque_rem(d)), cores, "deque")
    if a in ("dstack", "dqueue", "ddeque"):
        sync, *dcores = take(1 + cfg.servers)
        directory = Directory(dcores)
        if a == "dstack":
            s = DirStack(sync, directory, polling=False)
            r = Rig(s, (_op(s.push, "push", val), _op(s.pop, "pop")), [sync] + dcores, "stack",
                    elim={sync: (PUSH, POP)}, combine=(sync,))
        elif a == "dqueue":
            s = DirQueue(sync, directory)
            r = Rig(s, (_op(s.enqueue, "enq", val), _op(s.dequeue, "deq")), [sync] + dcores, "queue",
                    combine=(sync,))
        else:
            s = DirDeque(sync, directory)
            r = Rig(s, (_deque_ins(s, val), _deque_rem(s)), [sync] + dcores, "deque",
                    elim={sync: [(ENQ_T, DEQ_T), (ENQ_H, DEQ_H)]})
        r.sync = sync
        r.spawned.append(directory)
        return r
    if a in ("ulist", "ulist-alt", "slist"):
        cores = take(cfg.servers)
        if a == "slist":
            lst = SortedList(cores, cfg.capacity)
        else:
            lst = (UnsortedList if a == "ulist" else UnsortedListAlt)(cores, cfg.capacity)
        return Rig(lst, _set_pair(lst, cfg.keys), cores, "set")
    if a == "atomics":
        cores = take(cfg.servers)
        at = Atomics(cores)
        return Rig(at, _register_pair(at, cfg.keys), cores, "registers")
    if a == "rwmon":
        cores = take(1)
        at = Atomics(cores)
        return Rig(at, _rw_pair(at), cores, None)
    raise ConfigError(f"unknown algorithm {a!r}")  # pragma: no cover


def _deque_ins(d, val):
    def choose(port, rng):
        v = val(rng)
        if rng.random() < 0.5:
            return "enq_t", (v,), d.enq_t(port, v)
        return "enq_h", (v,), d.enq_h(port, v)
    return choose


def _deque_rem(d):
    def choose(port, rng):
        if rng.random() < 0.5:
            return "deq_t", (), d.deq_t(port)
        return "deq_h", (), d.deq_h(port)
    return choose


def _set_pair(lst, keys):
    last = {}

    def ins(port, rng):
        k = rng.randrange(keys)
        last[port.ctx.me] = k
        return "insert", (k,), lst.insert(port, k)

    def rem(port, rng):
        k = last.get(port.ctx.me, rng.randrange(keys))
        return "delete", (k,), lst.delete(port, k)
    return ins, rem


def _register_pair(at, keys):
    n = min(keys, at.heap_size)

    def gas(port, rng):
        a, v = rng.randrange(n), rng.randint(1, 1 << 20)
        return "get_and_set", (a, v), at.get_and_set(port, a, v)

    def rd(port, rng):
        a = rng.randrange(n)
        return "read", (a,), at.read(port, a)
    return gas, rd


def _rw_pair(at):
    mon = 0

    def section(port, lock, unlock, hold):
        yield from lock(port, mon)
        yield port.ctx.work(hold)
        yield from unlock(port, mon)

    def reader(port, rng):
        return "read_section", (), section(port, at.read_lock, at.read_unlock, rng.randint(0, 4))

    def writer(port, rng):
        return "write_section", (), section(port, at.write_lock, at.write_unlock, rng.randint(0, 4))
    return reader, writer


# ------------------------------------------------------------------ runner

@dataclass
class RunOutput:
    metrics: Metrics
    result: object
    rig: Rig
    masters: dict
    clients: list


def run_workload(cfg: WorkloadConfig, history: Optional[str] = None,
                 clients: Optional[int] = None) -> RunOutput:
    topo = Topology(cfg.islands, cfg.cores)
    masters_at = [i * cfg.cores for i in range(cfg.islands)] if cfg.hier else []
    pool = [c for c in range(topo.total) if c not in masters_at]

    def take(n):
        if n > len(pool) - 1:
            raise ConfigError(f"{cfg.algo}: {topo.total} cores cannot host {n} servers, "
                              f"{len(masters_at)} masters and at least one client")
        got = pool[:n]
        del pool[:n]
        return got

    rig = _build(cfg, take)
    client_cores = pool if clients is None else pool[:clients]
    if not client_cores:
        raise ConfigError("no cores left for clients")

    sim = Sim(topo, SchedulerConfig(seed=cfg.seed, mode=cfg.mode, max_steps=cfg.max_steps, log=cfg.log))
    rig.obj.spawn(sim)
    for extra in rig.spawned:
        extra.spawn(sim)
    masters = {}
    if cfg.hier:
        masters = spawn_masters(
            sim, topo, period=cfg.period, cap=cfg.batch_cap,
            eliminate=rig.elim if cfg.elim else None,
            combine=rig.combine, patience=cfg.patience if cfg.elim else 0)

    pairs = cfg.ops // 2
    share = [pairs // len(client_cores) + (1 if i < pairs % len(client_cores) else 0)
             for i in range(len(client_cores))]
    master_rng = random.Random(cfg.seed)

    def client(ctx, n_pairs, rng):
        port = MasterPort(ctx, topo.island(ctx.me) * cfg.cores) if cfg.hier else FlatPort(ctx)
        for _ in range(n_pairs):
            for fn in rig.pair:
                if cfg.work:
                    yield ctx.work(rng.randint(0, cfg.work))
                name, args, op = fn(port, rng)
                ctx.invoke(name, *args)
                ctx.respond(name, (yield from op))

    for core, n in zip(client_cores, share):
        sim.spawn(core, client, n, random.Random(master_rng.getrandbits(64)), name=f"client{core}")

    res = sim.run()
    if history:
        write_history(res.history, history)
    done = sum(1 for e in res.history if e.kind == "respond")
    sf, per = scalability_factor(res.received, rig.servers, done)
    total = sum(res.received.values())
    m = Metrics(cfg.algo, cfg.islands, cfg.cores, cfg.ops, cfg.work, cfg.seed, total,
                max((res.received.get(s, 0) for s in rig.servers), default=0),
                done / res.steps if res.steps else 0.0, sf, res.steps,
                {s: res.received.get(s, 0) for s in rig.servers}, per,
                res.deadlock, res.truncated,
                max((res.max_depth.get(s, 0) for s in rig.servers), default=0))
    return RunOutput(m, res, rig, masters, client_cores)
