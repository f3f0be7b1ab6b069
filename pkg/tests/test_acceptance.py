"""Acceptance suite. Each test prints one PASS/FAIL line for its criterion,
repeated in the terminal summary. Simulation results that criterion 9 reuses
are cached in module-scoped fixtures."""
import asyncio
import json
import random
import statistics
import subprocess
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from alea.harness import (
    check_atomic_broadcast,
    check_bridges,
    check_vcbc_consistency,
    compute_metrics,
    compute_sigma,
)
from alea.net.node import merge_traces
from alea.net.wire import Kind, MessageEnvelope, decode, encode
from alea.simnet import Adversary, ClientPlan, Fault, Scenario, load_scenario, run, run_aba, trace_from_records
from alea.tcrypto import BLS_SCHEME

from netutil import free_ports
from pqmodel import alphabet, explore

ROOT = Path(__file__).parent.parent
SCENARIOS = ROOT / "scenarios"
FAULT_KINDS = ["crash", "silent", "equivocating-vcbc-sender"]
SAFETY_RUNS = 1000


def bridge_summary(tr):
    b = check_bridges(tr)
    return len(b.counterexamples), b.heads_checked + b.votes_checked


# -- cached simulation results ------------------------------------------------


def safety_scenario(n, sched, seed):
    f = (n - 1) // 3
    k = seed % (f + 1)
    faults = [Fault(n - 1 - j, FAULT_KINDS[(seed + j) % 3], 0.05) for j in range(k)]
    return Scenario(n=n, scheduler=sched, adversary=Adversary(probability=0.3), faults=faults,
                    client=ClientPlan(requests=4, rate=400, strategy="f+1-broadcast"),
                    config={"batch_size": 2}, seed=seed)


@pytest.fixture(scope="module")
def safety():
    out = {}
    for n in (4, 7, 10):
        for sched in ("fair", "random", "adversarial-vcbc-delay"):
            st = Counter()
            t0 = time.monotonic()
            for seed in range(SAFETY_RUNS):
                tr = run(safety_scenario(n, sched, seed))
                rep = check_atomic_broadcast(tr)
                st["runs"] += 1
                st["violations"] += len(rep.violations)
                st["incomplete"] += bool(rep.incomplete) or not tr.complete
                st["faulty_runs"] += bool(tr.scenario["faults"])
                cx, checked = bridge_summary(tr)
                st["bridge_cx"] += cx
                st["bridge_checks"] += checked
            st["seconds"] = time.monotonic() - t0
            out[(n, sched)] = st
    return out


@pytest.fixture(scope="module")
def equivocation():
    st = Counter()
    base = load_scenario(SCENARIOS / "equivocation.toml")
    for seed in range(500):
        tr = run(base, seed)
        st["runs"] += 1
        st["vcbc_violations"] += len(check_vcbc_consistency(tr).violations)
        st["ab_violations"] += len(check_atomic_broadcast(tr).violations)
        st["equivocated"] += any(r["ev"] == "equivocate" for r in tr.records)
        cx, checked = bridge_summary(tr)
        st["bridge_cx"] += cx
        st["bridge_checks"] += checked
    return st


@pytest.fixture(scope="module")
def sigma_runs():
    fair = [run(load_scenario(SCENARIOS / "happy.toml"), seed) for seed in (1, 2, 3)]
    constructed = run(load_scenario(SCENARIOS / "sigma-delay.toml"))
    return fair, constructed


@pytest.fixture(scope="module")
def complexity_runs():
    out = {}
    for n in (4, 7, 10, 13):
        sc = Scenario(n=n, client=ClientPlan(requests=16 * n * 8, rate=3000, strategy="single", clients=n),
                      config={"batch_size": 16}, seed=1)
        out[n] = run(sc)
    return out


@pytest.fixture(scope="module")
def recovery_run():
    return run(load_scenario(SCENARIOS / "recovery.toml"))


@pytest.fixture(scope="module")
def crash_run():
    return run(load_scenario(SCENARIOS / "crash.toml"))


# -- criteria -------------------------------------------------------------------


def test_c01_safety_suite(safety, verdict):
    worst = {k: v for k, v in safety.items() if v["violations"] or v["incomplete"]}
    total = sum(v["seconds"] for v in safety.values())
    runs = min(v["runs"] for v in safety.values())
    ok = not worst and runs >= 1000
    faulty = sum(v["faulty_runs"] for v in safety.values())
    verdict(1, "safety suite", ok,
            f"{runs} runs x 9 configs, {faulty} with faults, violations="
            f"{sum(v['violations'] for v in safety.values())}, incomplete="
            f"{sum(v['incomplete'] for v in safety.values())}, {total:.0f}s")
    assert ok, worst


def test_c02_vcbc_consistency_under_equivocation(equivocation, verdict):
    st = equivocation
    ok = st["runs"] >= 500 and st["vcbc_violations"] == 0 and st["ab_violations"] == 0 and st["equivocated"] == st["runs"]
    verdict(2, "VCBC consistency", ok,
            f"{st['runs']} runs, equivocated in {st['equivocated']}, "
            f"consistency violations={st['vcbc_violations']}, broadcast violations={st['ab_violations']}")
    assert ok


def test_c03_aba_property_suite(verdict):
    runs = undecided = disagree = invalid = 0
    fair_rounds = []
    for seed in range(10_000):
        n = 4 if seed % 2 == 0 else 7
        f = (n - 1) // 3
        sched = "fair" if seed % 5 else "random"
        rng = random.Random(seed)
        silent = set(rng.sample(range(n), rng.randrange(f + 1)))
        inputs = [rng.randrange(2) for _ in range(n)]
        correct = [i for i in range(n) if i not in silent]
        o = run_aba(n, inputs, seed, scheduler=sched, silent=silent)
        runs += 1
        undecided += not o.all_decided(correct)
        disagree += not o.agreement
        given = {inputs[i] for i in correct}
        invalid += any(b not in given for b in o.decisions.values())
        if sched == "fair":
            fair_rounds += list(o.rounds.values())
    # rounds are counted from 1; the internal_round index at decision is one less
    mean_index = statistics.mean(fair_rounds) - 1
    ok = undecided == disagree == invalid == 0 and mean_index <= 2
    verdict(3, "ABA property suite", ok,
            f"{runs} schedules, undecided={undecided}, agreement violations={disagree}, "
            f"validity violations={invalid}, mean internal round at decision (fair)={mean_index:.2f} "
            f"(rounds executed {mean_index + 1:.2f})")
    assert ok


def test_c04_sigma(sigma_runs, verdict):
    fair, constructed = sigma_runs
    per_slot = [s for tr in fair for s in compute_sigma(tr).per_slot.values()]
    mean = statistics.mean(per_slot)
    built = compute_sigma(constructed).per_slot.get((0, 0))
    ok = mean <= 1.1 and built == 2 and all(tr.complete for tr in fair)
    verdict(4, "sigma", ok, f"fair N=4 B=16 mean sigma={mean:.3f} over {len(per_slot)} slots, constructed slot sigma={built}")
    assert ok


def test_c05_complexity_shape(complexity_runs, verdict):
    ns, bc, ag, exact = [], [], [], True
    for n, tr in sorted(complexity_runs.items()):
        m = compute_metrics(tr)
        instances = sum(1 for r in tr.records if r["ev"] == "broadcast")
        exact &= m.count_by_stage["broadcast"] == 3 * n * instances
        ns.append(n)
        bc.append(m.per_batch(m.count_by_stage["broadcast"]))
        ag.append(m.per_batch(m.count_by_stage["agreement"]))
    eb = np.polyfit(np.log(ns), np.log(bc), 1)[0]
    ea = np.polyfit(np.log(ns), np.log(ag), 1)[0]
    ok = 0.8 <= eb <= 1.2 and 1.7 <= ea <= 2.3 and exact
    verdict(5, "complexity shape", ok, f"broadcast exponent={eb:.2f}, agreement exponent={ea:.2f}, 3N per VCBC={exact}")
    assert ok


def test_c06_recovery(recovery_run, verdict):
    tr = recovery_run
    evs = Counter(r["ev"] for r in tr.records)
    votes = {r["rep"]: r["vote"] for r in tr.records if r["ev"] == "vote" and r["round"] == 0}
    decided = {r["bit"] for r in tr.records if r["ev"] == "decide" and r["round"] == 0}
    batches = {}
    for r in tr.records:
        if r["ev"] == "deliver" and r["round"] == 0:
            batches.setdefault(r["rep"], []).append((r["origin"], r["client"], r["seq"]))
    same = len(batches) == 4 and all(b == batches[0] for b in batches.values())
    ok = (votes.get(3) == 0 and decided == {1} and evs["fillgap"] >= 1 and evs["filler_accepted"] >= 1 and same
          and check_atomic_broadcast(tr).ok)
    verdict(6, "recovery path", ok,
            f"lagging vote={votes.get(3)}, decision={sorted(decided)}, FILL-GAP={evs['fillgap']}, "
            f"FILLER accepted={evs['filler_accepted']}, identical round-0 batch={same}")
    assert ok


def test_c07_crash_liveness(crash_run, verdict):
    tr = crash_run
    crash_t = 50e9
    win = Counter()
    before, after = Counter(), Counter()
    for r in tr.records:
        if r["ev"] == "deliver" and r["rep"] == 0:
            win[int(r["t"] // 5e9)] += 1
        if r["ev"] == "decide" and r["rep"] == 0:
            (after if r["t"] > crash_t else before)[r["via"]] += 1
    post = [win[w] for w in range(10, 24)]
    fast_after = after["unanimity"] / max(1, sum(after.values()))
    rep = check_atomic_broadcast(tr)
    ok = min(post) > 0 and before["unanimity"] > 0 and fast_after <= 0.01 and rep.ok
    verdict(7, "crash liveness", ok,
            f"min delivered per 5s window after crash={min(post)}, fast-path decisions "
            f"before={before['unanimity']} after={after['unanimity']} of {sum(after.values())}")
    assert ok


def test_c08_unanimity_fast_path(verdict):
    free = 0
    always = True
    for seed in range(1000):
        n = 4 if seed % 2 == 0 else 7
        b = seed % 3 % 2
        free += run_aba(n, [b] * n, seed).coin_free
        off = run_aba(n, [b] * n, seed, unanimity=False)
        always &= off.coin_releases > 0 and all(c > 0 for c in off.coins_at_decision.values())
    ok = free >= 990 and always
    verdict(8, "unanimity fast path", ok, f"coin-free decisions in {free}/1000 runs, coins always released with feature off={always}")
    assert ok


def test_c09_oracle_bridges(safety, equivocation, sigma_runs, complexity_runs, recovery_run, crash_run, verdict):
    cx = sum(v["bridge_cx"] for v in safety.values()) + equivocation["bridge_cx"]
    checked = sum(v["bridge_checks"] for v in safety.values()) + equivocation["bridge_checks"]
    fair, constructed = sigma_runs
    for tr in [*fair, constructed, *complexity_runs.values(), recovery_run, crash_run]:
        c, k = bridge_summary(tr)
        cx += c
        checked += k
    ok = cx == 0 and checked > 0
    verdict(9, "oracle bridges", ok, f"{checked} round entries checked across criteria 1-7 traces, counterexamples={cx}")
    assert ok


def test_c10_determinism_wire_pqueue(verdict):
    names = ["happy", "adversarial", "equivocation", "recovery", "sigma-delay"]
    same = all(run(load_scenario(SCENARIOS / f"{x}.toml")).dumps() == run(load_scenario(SCENARIOS / f"{x}.toml")).dumps()
               for x in names)
    rnd = Scenario(n=7, scheduler="random", client=ClientPlan(requests=40, rate=400), config={"batch_size": 4}, seed=11)
    same &= run(rnd).dumps() == run(rnd).dumps()
    vectors = json.loads((ROOT / "vectors" / "wire.json").read_text())["vectors"]
    wire_ok = True
    for v in vectors:
        e = MessageEnvelope(Kind(v["kind"]), v["sender"], v["origin"], v["seq"], v["internal_round"],
                            bytes.fromhex(v["body"]), v["version"])
        raw = bytes.fromhex(v["hex"])
        wire_ok &= encode(e) == raw and decode(raw) == e and encode(decode(raw)) == raw
    states = explore(12, alphabet(6, "abc"))
    ok = same and wire_ok
    verdict(10, "determinism, wire, pqueue", ok,
            f"byte-identical reruns={same}, {len(vectors)} wire vectors exact={wire_ok}, "
            f"pqueue matched model on all sequences of <= 12 ops over 24 ops ({states} states)")
    assert ok


def test_c11_net_smoke(tmp_path, verdict):
    requests = 10_000
    ports = free_ports(4)
    cfg = tmp_path / "cluster.json"
    cfg.write_text(json.dumps({
        "n": 4, "key_seed": "11" * 16, "scheme": BLS_SCHEME,
        "replicas": [f"127.0.0.1:{p}" for p in ports],
        "config": {"batch_size": 128},
    }))
    alea = [sys.executable, "-m", "alea"]
    traces = [tmp_path / f"replica{i}.jsonl" for i in range(4)]
    t0 = time.monotonic()
    procs = [subprocess.Popen(alea + ["replica", str(cfg), "--index", str(i), "--trace", str(traces[i])],
                              stdout=subprocess.PIPE, text=True) for i in range(4)]
    delivered = 0
    try:
        subprocess.run(alea + ["client", str(cfg), "--requests", str(requests), "--rate", "2000", "--size", "256",
                               "--trace", str(tmp_path / "client.jsonl")],
                       check=True, capture_output=True, timeout=300)
        while time.monotonic() - t0 < 300:
            delivered = sum(p.read_text().count('"ev":"deliver"') for p in traces)
            if delivered >= 4 * requests:
                break
            time.sleep(0.5)
        elapsed = time.monotonic() - t0
    finally:
        for p in procs:
            p.terminate()
        for p in procs:
            p.communicate(timeout=30)
    recs = merge_traces([tmp_path / "client.jsonl", *traces])
    rep = check_atomic_broadcast(trace_from_records(recs))
    ok = delivered >= 4 * requests and rep.ok and not rep.incomplete and elapsed < 300
    verdict(11, "net smoke", ok,
            f"BLS, 4 replica processes + 1 client over loopback TCP, {requests} x 256 B requests, "
            f"{delivered // 4} delivered per replica in {elapsed:.1f}s, violations={len(rep.violations)}")
    assert ok, rep.violations[:3]
