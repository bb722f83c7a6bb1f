"""``dsbench``: run workloads and check recorded histories."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .bench import ALGOS, WorkloadConfig, emit_csv, run_workload
from .simcore import ConfigError
from .verify import SPECS, CapExceeded, HistoryError, check_linearizable, read_history

LOG_TAIL = 20


def _onoff(s):
    if s not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return s == "on"


def build_parser():
    p = argparse.ArgumentParser(prog="dsbench")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run one workload and print its metrics")
    r.add_argument("--algo", required=True, choices=ALGOS)
    r.add_argument("--islands", type=int, default=1)
    r.add_argument("--cores", type=int, default=8)
    r.add_argument("--ops", type=int, default=1000)
    r.add_argument("--work", type=int, default=0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--capacity", type=int, default=64)
    r.add_argument("--hier", type=_onoff, default=None, metavar="{on,off}")
    r.add_argument("--elim", type=_onoff, default=None, metavar="{on,off}")
    r.add_argument("--servers", type=int, default=4)
    r.add_argument("--period", type=int, default=8, help="island master flush period in steps")
    r.add_argument("--batch-cap", type=int, default=16, help="requests per batch before an early flush")
    r.add_argument("--max-steps", type=int, default=50_000_000)
    r.add_argument("--csv", help="append the metrics row to this file")
    r.add_argument("--history", help="write the operation history here")
    r.add_argument("--log", help="write the event log here")

    c = sub.add_parser("check", help="check a history file for linearizability")
    c.add_argument("--history", required=True)
    c.add_argument("--spec", required=True, choices=sorted(SPECS))
    c.add_argument("--cap", type=int, default=14)
    return p


def _run(a, out):
    cfg = WorkloadConfig(a.algo, islands=a.islands, cores=a.cores, ops=a.ops, work=a.work,
                         seed=a.seed, capacity=a.capacity, hier=a.hier, elim=a.elim,
                         servers=a.servers, period=a.period, batch_cap=a.batch_cap,
                         max_steps=a.max_steps, log=bool(a.log))
    res = run_workload(cfg, history=a.history)
    m = res.metrics
    if a.log:
        with open(a.log, "w") as f:
            f.write(res.result.csv())
    if m.deadlock or m.truncated:
        # rerun with logging on to show what everyone was waiting for
        traced = run_workload(dataclasses.replace(cfg, log=True)) if not cfg.log else res
        what = "deadlock" if m.deadlock else "step limit reached"
        print(f"error: {cfg.algo}: {what}; blocked processes:", file=sys.stderr)
        for pid, name, action in traced.result.blocked:
            print(f"  {pid} {name}: {action}", file=sys.stderr)
        print("last events:", file=sys.stderr)
        for line in traced.result.csv().splitlines()[-LOG_TAIL:]:
            print("  " + line, file=sys.stderr)
        return 3
    if a.csv:
        emit_csv(m, a.csv)
    print(f"algo={m.algo} m={m.m} c={m.c} N={m.N} W={m.W} seed={m.seed} steps={m.steps}", file=out)
    print(f"total_msgs={m.total_msgs} max_server_msgs={m.max_server_msgs} "
          f"throughput={m.throughput:.6f} sf={m.sf:.6f} max_mailbox={m.max_mailbox}", file=out)
    for s, n in m.per_server.items():
        print(f"  server {s}: received={n} sf={m.sf_per_server[s]:.6f}", file=out)
    return 0


def _check(a, out):
    events = read_history(a.history)
    try:
        r = check_linearizable(events, a.spec, cap=a.cap)
    except CapExceeded as e:
        print(f"refused: {e}", file=sys.stderr)
        return 2
    if r.ok:
        print(f"linearizable ({r.closure} closure)", file=out)
        print("witness: " + " ".join(f"{o.pid}:{o.name}{o.args}->{o.result!r}" for o in r.witness), file=out)
        return 0
    print(f"NOT linearizable; fails once event {r.failing_prefix} is included", file=out)
    return 1


def main(argv=None, out=None):
    out = out or sys.stdout
    a = build_parser().parse_args(argv)
    try:
        return _run(a, out) if a.cmd == "run" else _check(a, out)
    except (ConfigError, HistoryError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
