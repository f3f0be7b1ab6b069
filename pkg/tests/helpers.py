"""Shared builders for replica-level tests."""
from alea import tcrypto
from alea.batch import Request, encode_requests
from alea.net.wire import Kind, MessageEnvelope
from alea.replica import Features, Replica, ReplicaConfig
from alea.vcbc import VcbcId, VcbcInstance

_KEYS = {}


def keys(n=4):
    if n not in _KEYS:
        _KEYS[n] = tcrypto.provision(n, (n - 1) // 3, b"replica-test")
    return _KEYS[n]


def replica(n=4, me=0, features=None, **cfg):
    r = Replica(ReplicaConfig(n, me, features=features or Features(), **cfg), keys(n))
    r.start(0)
    return r


def req(client, seq=0):
    return Request(client, seq, b"payload-%d-%d" % (client, seq))


def certify(sender, prio, requests, n=4):
    """A verifiable payload for slot (sender, prio), produced by a real VCBC run."""
    kb = keys(n)
    f = (n - 1) // 3
    vid = VcbcId(sender, prio)
    insts = [VcbcInstance(vid, i, n, f, kb.vcbc, kb.vcbc_shares[i]) for i in range(n)]
    queue = list(insts[sender].start_broadcast(encode_requests(tuple(requests))))
    while queue:
        dst, env = queue.pop(0)
        out, _ = insts[dst].handle(env)
        queue.extend(out)
    return insts[(sender + 1) % n].make_verifiable()


def finish(r, sender, b):
    return MessageEnvelope(Kind.FINISH, sender, 0, r, 0, bytes((b,)))


def decide(rep, r, b):
    """Make ABA(r) decide ``b`` at ``rep`` through f+1 FINISH messages."""
    fx = None
    f = rep.f
    for s in range(1, f + 2):
        fx = rep.receive(finish(r, s, b))
    return fx


def recs(fx, ev):
    return [x for x in fx.records if x["ev"] == ev]


def sends(fx, kind):
    return [(d, e) for d, e in fx.sends if e.kind == kind]
