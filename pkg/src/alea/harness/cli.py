"""Command-line entry point.

Exit codes: 0 on success, 1 when a checked trace has property violations,
2 on usage or input errors.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import signal
import sys
from pathlib import Path

from ..simnet import ScenarioError, load_scenario, load_trace, run, trace_from_records
from .checker import check_atomic_broadcast, check_vcbc_consistency
from .metrics import compute_metrics, to_csv
from .oracles import check_bridges

USAGE, VIOLATION = 2, 1


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alea", description="Asynchronous BFT atomic broadcast toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="run a scenario in the simulator and write its trace")
    s.add_argument("scenario")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default=".", help="output directory")
    s.add_argument("--check", action="store_true", help="also run the property checks")

    c = sub.add_parser("check", help="check atomic broadcast properties of one or more traces")
    c.add_argument("trace", nargs="+", help="trace file; several files are merged (net mode)")
    c.add_argument("--bridges", action="store_true", help="also check the choice-oracle bridges")

    m = sub.add_parser("metrics", help="throughput, latency, sigma and message counts")
    m.add_argument("trace", nargs="+")
    m.add_argument("--csv", action="store_true")

    k = sub.add_parser("keygen", help="write a cluster file for a loopback deployment")
    k.add_argument("--n", type=int, default=4)
    k.add_argument("--host", default="127.0.0.1")
    k.add_argument("--base-port", type=int, default=7100)
    k.add_argument("--scheme", default="bls12-381")
    k.add_argument("--seed", help="hex key seed; random when omitted")
    k.add_argument("--batch-size", type=int, default=64)
    k.add_argument("--out", default="cluster.toml")

    r = sub.add_parser("replica", help="run one replica over TCP")
    r.add_argument("config")
    r.add_argument("--index", type=int, help="overrides the config's index field")
    r.add_argument("--trace", help="JSONL trace output path")

    cl = sub.add_parser("client", help="submit an open-loop request stream over TCP")
    cl.add_argument("config")
    cl.add_argument("--index", type=int, default=0)
    cl.add_argument("--requests", type=int)
    cl.add_argument("--rate", type=float)
    cl.add_argument("--size", type=int)
    cl.add_argument("--strategy")
    cl.add_argument("--seed", type=int)
    cl.add_argument("--trace", help="JSONL trace of submissions")
    return p


def _load(paths):
    if len(paths) == 1:
        return load_trace(paths[0])
    from ..net.node import merge_traces

    return trace_from_records(merge_traces(paths))


def _report(trace, bridges: bool) -> int:
    reports = [check_atomic_broadcast(trace), check_vcbc_consistency(trace)]
    bad = [v for r in reports for v in r.violations]
    for v in bad:
        print(f"VIOLATION {v}")
    for note in reports[0].incomplete:
        print(f"incomplete: {note}")
    if bridges:
        br = check_bridges(trace)
        for cx in br.counterexamples:
            print(f"VIOLATION bridge: {cx}")
        bad += br.counterexamples
    st = reports[0].stats
    print(f"{'FAIL' if bad else 'OK'} complete={st['complete']} submitted={st['submitted']} "
          f"delivered={st['delivered']}")
    return VIOLATION if bad else 0


def cmd_simulate(a) -> int:
    sc = load_scenario(a.scenario)
    seed = sc.seed if a.seed is None else a.seed
    tr = run(sc, seed)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{Path(a.scenario).stem}-seed{seed}.jsonl"
    tr.write(path)
    print(f"wrote {path} ({len(tr.records)} records, complete={tr.complete})")
    return _report(tr, True) if a.check else 0


def cmd_check(a) -> int:
    return _report(_load(a.trace), a.bridges)


def cmd_metrics(a) -> int:
    rep = compute_metrics(_load(a.trace))
    if a.csv:
        sys.stdout.write(to_csv([rep]))
    else:
        print(json.dumps(rep.row(), indent=2))
    return 0


def cmd_keygen(a) -> int:
    import secrets

    from ..net.node import Cluster

    seed = bytes.fromhex(a.seed) if a.seed else secrets.token_bytes(16)
    cl = Cluster(a.n, [(a.host, a.base_port + i) for i in range(a.n)], seed, a.scheme,
                 config={"batch_size": a.batch_size})
    d = cl.to_dict()
    d.pop("f")
    d.pop("client")
    path = Path(a.out)
    if path.suffix == ".toml":
        lines = [f"n = {d['n']}", f'key_seed = "{d["key_seed"]}"', f'scheme = "{d["scheme"]}"',
                 "replicas = [" + ", ".join(f'"{x}"' for x in d["replicas"]) + "]", "", "[config]"]
        lines += [f"{k} = {json.dumps(v)}" for k, v in d["config"].items()]
        path.write_text("\n".join(lines) + "\n")
    else:
        path.write_text(json.dumps(d, indent=2) + "\n")
    print(f"wrote {path}")
    return 0


def cmd_replica(a) -> int:
    from ..net.node import ReplicaNode, TraceWriter, load_cluster

    cl, raw = load_cluster(a.config)
    index = a.index if a.index is not None else raw.get("index")
    if index is None or not 0 <= index < cl.n:
        print("replica index missing or out of range", file=sys.stderr)
        return USAGE

    async def main():
        trace = TraceWriter(a.trace, cl.trace_header()) if a.trace else None
        node = ReplicaNode(cl, index, trace=trace)
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        await node.start()
        await stop.wait()
        await node.stop(complete=True)
        print(f"replica {index} delivered {node.delivered} requests")

    asyncio.run(main())
    return 0


def cmd_client(a) -> int:
    from ..net.node import TraceWriter, load_cluster, run_client

    cl, _ = load_cluster(a.config)
    trace = TraceWriter(a.trace, cl.trace_header()) if a.trace else None
    n = asyncio.run(run_client(cl, a.index, trace=trace, requests=a.requests, rate=a.rate, size=a.size,
                               strategy=a.strategy, seed=a.seed))
    print(f"client {a.index} submitted {n} requests")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "check": cmd_check,
    "metrics": cmd_metrics,
    "keygen": cmd_keygen,
    "replica": cmd_replica,
    "client": cmd_client,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[a.cmd](a)
    except (OSError, ValueError, KeyError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
