"""Byzantine replica behaviours used by fault-injection scenarios."""
from __future__ import annotations

import random

from .. import tcrypto
from ..batch import Request, batch_digest, encode_requests
from ..net.wire import Kind, MessageEnvelope
from ..replica import Replica, ReplicaConfig
from ..vcbc import VcbcId, VcbcInstance, canonical_bytes

POISON_CLIENT = 0xFFFFFFFF


class EquivocatingReplica(Replica):
    """Sends two different payloads for each of its VCBC slots.

    The other replicas are split at random into two disjoint groups; one
    receives the honest batch and the other the same batch plus a poison
    request. The replica signs both payloads itself and ships FINAL for
    whichever one gathers a quorum of echoes.
    """

    def __init__(self, cfg: ReplicaConfig, keys: tcrypto.KeyBundle, rng: random.Random):
        super().__init__(cfg, keys)
        self.rng = rng
        self.shadows: dict[int, list[VcbcInstance]] = {}
        self._poison_seq = 0

    def start_vcbc(self, requests) -> None:
        prio = self.priority
        self.priority += 1
        poison = Request(POISON_CLIENT, self._poison_seq * self.n + self.me, b"equivocation")
        self._poison_seq += 1
        payloads = (encode_requests(requests), encode_requests(tuple(requests) + (poison,)))
        others = [j for j in range(self.n) if j != self.me]
        self.rng.shuffle(others)
        cut = self.rng.randint(0, len(others))
        vid = VcbcId(self.me, prio)
        shadows = []
        for payload, group in zip(payloads, (others[:cut], others[cut:])):
            inst = VcbcInstance(vid, self.me, self.n, self.f, self.keys.vcbc, self.keys.vcbc_shares[self.me])
            inst.start_broadcast(payload)
            env = MessageEnvelope(Kind.SEND, self.me, self.me, prio, 0, payload)
            self._send((j, env) for j in group)
            own = tcrypto.sign_share(self.keys.vcbc_shares[self.me], canonical_bytes(vid, payload))
            inst.on_echo(self.me, own.share_bytes)
            shadows.append(inst)
        self.shadows[prio] = shadows
        self._rec("equivocate", prio=prio, groups=[sorted(others[:cut]), sorted(others[cut:])],
                  digests=[batch_digest(p) for p in payloads])

    def _on_vcbc_msg(self, env: MessageEnvelope) -> None:
        if env.kind == Kind.ECHO and env.origin == self.me and env.seq in self.shadows:
            for inst in self.shadows[env.seq]:
                bad = inst.invalid_shares
                out = inst.on_echo(env.sender, env.body)
                if inst.invalid_shares == bad:
                    self._send(out)
                    break
            return
        super()._on_vcbc_msg(env)
