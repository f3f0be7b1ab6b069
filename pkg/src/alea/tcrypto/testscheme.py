"""Hash-based stand-in for threshold signatures.

Insecure by construction (the public material is the dealing seed), but
deterministic and subset independent, which is all protocol-logic tests need.
"""
from __future__ import annotations

import hashlib
import hmac

from .base import KeyShare, ThresholdParams, register


class HashScheme:
    scheme_id = "test-sha256"
    share_size = 32
    signature_size = 32

    def keygen(self, n, k, seed):
        params = ThresholdParams(n, k, self.scheme_id, bytes(seed))
        shares = [KeyShare(i, bytes(seed) + i.to_bytes(4, "big"), self.scheme_id) for i in range(n)]
        return params, shares

    @staticmethod
    def _share(seed: bytes, signer: int, message: bytes) -> bytes:
        return hashlib.sha256(seed + signer.to_bytes(4, "big") + message).digest()

    def sign(self, share, message):
        seed = share.secret_material[:-4]
        return self._share(seed, share.index, message)

    def verify_share(self, params, message, signer, share_bytes):
        return hmac.compare_digest(self._share(params.public_material, signer, message), share_bytes)

    def combine(self, params, message, shares):
        return hashlib.sha256(params.public_material + b"C" + message).digest()

    def verify(self, params, message, sig_bytes):
        return hmac.compare_digest(self.combine(params, message, {}), sig_bytes)


register(HashScheme())
