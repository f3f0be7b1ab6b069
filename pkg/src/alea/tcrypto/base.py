"""Threshold signature value types and the scheme-independent front end."""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Protocol


class ThresholdError(Exception):
    pass


class ParameterError(ThresholdError):
    pass


class InsufficientSharesError(ThresholdError):
    def __init__(self, have: int, need: int):
        super().__init__(f"need {need} distinct valid shares, have {have}")
        self.have = have
        self.need = need


class RejectedShareError(ThresholdError):
    def __init__(self, signer: int):
        super().__init__(f"invalid signature share from signer {signer}")
        self.signer = signer


class VerificationError(ThresholdError):
    pass


# Operation counts, read by the simulator's crypto cost model.
OPS: Counter = Counter()


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class ThresholdParams:
    n: int
    k: int
    scheme_id: str
    public_material: bytes


@dataclass(frozen=True)
class KeyShare:
    index: int
    secret_material: bytes
    scheme_id: str


@dataclass(frozen=True)
class SignatureShare:
    signer: int
    message_digest: bytes
    share_bytes: bytes


@dataclass(frozen=True)
class CombinedSignature:
    message_digest: bytes
    sig_bytes: bytes


class Scheme(Protocol):
    scheme_id: str
    share_size: int
    signature_size: int

    def keygen(self, n: int, k: int, seed: bytes) -> tuple[ThresholdParams, list[KeyShare]]: ...

    def sign(self, share: KeyShare, message: bytes) -> bytes: ...

    def verify_share(self, params: ThresholdParams, message: bytes, signer: int, share_bytes: bytes) -> bool: ...

    def combine(self, params: ThresholdParams, message: bytes, shares: dict[int, bytes]) -> bytes: ...

    def verify(self, params: ThresholdParams, message: bytes, sig_bytes: bytes) -> bool: ...


_SCHEMES: dict[str, Scheme] = {}


def register(scheme: Scheme) -> Scheme:
    _SCHEMES[scheme.scheme_id] = scheme
    return scheme


def get_scheme(scheme_id: str) -> Scheme:
    try:
        return _SCHEMES[scheme_id]
    except KeyError:
        raise ParameterError(f"unknown threshold scheme {scheme_id!r}") from None


def keygen(n: int, k: int, seed: bytes, scheme: str = "test-sha256") -> tuple[ThresholdParams, list[KeyShare]]:
    """Deal ``n`` key shares with combination threshold ``k``, deterministically in ``seed``."""
    if n < 1 or k < 1 or k > n:
        raise ParameterError(f"invalid threshold parameters n={n} k={k}")
    return get_scheme(scheme).keygen(n, k, seed)


def sign_share(share: KeyShare, message: bytes) -> SignatureShare:
    OPS["sign"] += 1
    sb = get_scheme(share.scheme_id).sign(share, message)
    return SignatureShare(share.index, digest(message), sb)


def verify_share(params: ThresholdParams, message: bytes, s: SignatureShare) -> bool:
    if not 0 <= s.signer < params.n or s.message_digest != digest(message):
        return False
    OPS["verify"] += 1
    return get_scheme(params.scheme_id).verify_share(params, message, s.signer, s.share_bytes)


def combine(params: ThresholdParams, message: bytes, shares: Iterable[SignatureShare],
            verified: bool = False) -> CombinedSignature:
    """Combine signature shares into a signature over ``message``.

    Every share is checked; the first invalid one aborts with
    :class:`RejectedShareError`. Duplicate signers count once. The result
    does not depend on which ``k`` shares were supplied. Callers that have
    already checked each share may pass ``verified=True``.
    """
    valid: dict[int, bytes] = {}
    for s in shares:
        if not verified and not verify_share(params, message, s):
            raise RejectedShareError(s.signer)
        valid.setdefault(s.signer, s.share_bytes)
    if len(valid) < params.k:
        raise InsufficientSharesError(len(valid), params.k)
    chosen = {i: valid[i] for i in sorted(valid)[: params.k]}
    OPS["combine"] += 1
    sig = get_scheme(params.scheme_id).combine(params, message, chosen)
    return CombinedSignature(digest(message), sig)


def verify_signature(params: ThresholdParams, message: bytes, sig: CombinedSignature) -> bool:
    if sig.message_digest != digest(message):
        return False
    OPS["verify"] += 1
    return get_scheme(params.scheme_id).verify(params, message, sig.sig_bytes)


def coin_value(params: ThresholdParams, coin_name: bytes, sig: CombinedSignature) -> int:
    """Common coin bit: low bit of SHA-256 over the combined signature bytes."""
    if not verify_signature(params, coin_name, sig):
        raise VerificationError("coin signature does not verify")
    return digest(sig.sig_bytes)[-1] & 1
