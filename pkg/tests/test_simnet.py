from pathlib import Path

import pytest

from alea.harness import check_atomic_broadcast, check_bridges, check_vcbc_consistency, compute_sigma
from alea.simnet import (
    Adversary,
    ClientPlan,
    CryptoCost,
    DelayModel,
    Fault,
    Scenario,
    ScenarioError,
    load_scenario,
    load_trace,
    run,
    inject_fault,
)

SCENARIOS = Path(__file__).parent.parent / "scenarios"


def logs(tr):
    out = {}
    for x in tr.records:
        if x["ev"] == "deliver":
            out.setdefault(x["rep"], []).append((x["client"], x["seq"]))
    return out


def test_same_seed_same_bytes(tmp_path):
    sc = Scenario(n=4, scheduler="random", client=ClientPlan(requests=30, rate=500), config={"batch_size": 3}, seed=9)
    a, b = run(sc), run(sc)
    assert a.dumps() == b.dumps()
    a.write(tmp_path / "t.jsonl")
    assert load_trace(tmp_path / "t.jsonl").records == a.records
    assert run(sc, seed=10).dumps() != a.dumps()


def test_fair_run_delivers_everything_in_one_order():
    tr = run(Scenario(n=4, client=ClientPlan(requests=100, rate=200), config={"batch_size": 4}, seed=1))
    lg = logs(tr)
    assert tr.complete and len(lg) == 4
    assert all(v == lg[0] for v in lg.values()) and len(set(lg[0])) == 100
    assert check_atomic_broadcast(tr).ok and check_bridges(tr).ok


@pytest.mark.parametrize("sched", ["fifo", "random", "adversarial-vcbc-delay"])
def test_schedulers_preserve_safety(sched):
    sc = Scenario(n=7, scheduler=sched, adversary=Adversary(probability=0.5),
                  client=ClientPlan(requests=60, rate=300), config={"batch_size": 4}, seed=4)
    tr = run(sc)
    rep = check_atomic_broadcast(tr)
    assert tr.complete and rep.ok and not rep.incomplete


def test_crash_keeps_remaining_replicas_delivering():
    sc = Scenario(n=4, faults=[Fault(3, "crash", 2.0)], duration_s=6,
                  client=ClientPlan(requests=200, rate=50, strategy="f+1-broadcast", clients=2),
                  config={"batch_size": 4}, seed=2)
    tr = run(sc)
    after = [x for x in tr.records if x["ev"] == "deliver" and x["rep"] == 0 and x["t"] > 2e9]
    assert after
    assert any(x["ev"] == "crash" for x in tr.records)
    assert check_atomic_broadcast(tr).ok


def test_delaying_slot_at_quorum_forces_a_zero_round():
    tr = run(load_scenario(SCENARIOS / "sigma-delay.toml"))
    decides = [x for x in tr.records if x["ev"] == "decide" and x["round"] == 0]
    assert {x["bit"] for x in decides} == {0}
    later = [x for x in tr.records if x["ev"] == "ac_deliver" and x["origin"] == 0 and x["prio"] == 0]
    assert later and all(x["round"] >= 4 for x in later)
    assert compute_sigma(tr).per_slot[(0, 0)] == 2


def test_delaying_slot_at_one_replica_uses_recovery():
    tr = run(load_scenario(SCENARIOS / "recovery.toml"))
    evs = [x["ev"] for x in tr.records]
    assert "fillgap" in evs and "filler_accepted" in evs
    lag = [x for x in tr.records if x["ev"] == "ac_deliver" and x["rep"] == 3]
    assert lag and lag[0]["round"] == 0


def _undelayed(features):
    return run(Scenario(n=4, delay=DelayModel("fixed", ms=10),
                        client=ClientPlan(requests=64, rate=400, strategy="single", clients=4),
                        config={"batch_size": 4, "features": features}, seed=1))


def test_no_delays_gives_sigma_one():
    # With prediction a replica holds its 0-vote while the leader's batch is in flight.
    sig = compute_sigma(_undelayed({"pipelining_prediction": True}))
    assert sig.per_slot and set(sig.per_slot.values()) == {1}


def test_no_delays_without_prediction_stays_close_to_one():
    sig = compute_sigma(_undelayed({}))
    assert min(sig.per_slot.values()) == 1 and sig.mean <= 1.1


def test_equivocating_sender_cannot_split_correct_replicas():
    for seed in range(10):
        sc = load_scenario(SCENARIOS / "equivocation.toml")
        tr = run(sc, seed)
        assert check_vcbc_consistency(tr).ok
        assert check_atomic_broadcast(tr).ok
        assert any(x["ev"] == "equivocate" for x in tr.records)


def test_silent_replica_disables_fast_path_but_terminates():
    sc = Scenario(n=4, faults=[Fault(2, "silent")], client=ClientPlan(requests=20, rate=200),
                  config={"batch_size": 2}, seed=5)
    tr = run(sc)
    vias = {x["via"] for x in tr.records if x["ev"] == "decide"}
    assert "unanimity" not in vias
    assert tr.complete and check_atomic_broadcast(tr).ok


def test_message_log_and_summary():
    sc = Scenario(n=4, client=ClientPlan(requests=4, rate=100), message_log=True, seed=1)
    tr = run(sc)
    msgs = [x for x in tr.records if x["ev"] == "msg"]
    summary = [x for x in tr.records if x["ev"] == "summary"][-1]
    assert msgs and sum(summary["count"].values()) >= len(msgs)
    assert sum(summary["stages"].values()) == sum(summary["count"].values())


def test_crypto_cost_slows_virtual_time():
    base = Scenario(n=4, client=ClientPlan(requests=8, rate=100), seed=1)
    slow = Scenario(n=4, client=ClientPlan(requests=8, rate=100), seed=1, crypto_cost=CryptoCost(2000, 2000, 8000))
    assert run(slow).end_ns > run(base).end_ns


def test_matrix_delays():
    m = [[0, 1, 50, 50], [1, 0, 50, 50], [50, 50, 0, 1], [50, 50, 1, 0]]
    tr = run(Scenario(n=4, delay=DelayModel("matrix", matrix_ms=m), client=ClientPlan(requests=10, rate=100), seed=1))
    assert tr.complete and check_atomic_broadcast(tr).ok


def test_scenario_validation():
    with pytest.raises(ScenarioError):
        Scenario(n=4, faults=[Fault(0, "crash"), Fault(1, "crash")]).validate()
    with pytest.raises(ScenarioError):
        Scenario(n=4, scheduler="psychic").validate()
    with pytest.raises(ScenarioError):
        Scenario.from_dict({"n": 4, "colour": "red"})
    sc = Scenario.from_dict(Scenario(n=7, faults=[Fault(1, "silent")]).to_dict())
    assert sc.n == 7 and sc.faults[0].kind == "silent"


def test_inject_fault():
    sc = inject_fault(Scenario(n=4), 2, "crash", at_s=1.5)
    assert sc.faults[0].at_s == 1.5
    with pytest.raises(ScenarioError):
        inject_fault(sc, 3, "crash")


@pytest.mark.parametrize("name", sorted(p.name for p in SCENARIOS.glob("*.toml")))
def test_shipped_scenarios_load(name):
    load_scenario(SCENARIOS / name).validate()
