"""Threshold signatures and the common coin built on them."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

from . import bls, testscheme  # noqa: F401  (scheme registration)
from .base import (
    CombinedSignature,
    InsufficientSharesError,
    KeyShare,
    ParameterError,
    RejectedShareError,
    SignatureShare,
    ThresholdError,
    ThresholdParams,
    VerificationError,
    coin_value,
    combine,
    digest,
    get_scheme,
    keygen,
    sign_share,
    verify_share,
    verify_signature,
)

TEST_SCHEME = "test-sha256"
BLS_SCHEME = "bls12-381"


def vcbc_threshold(n: int, f: int) -> int:
    """Byzantine quorum ceil((n+f+1)/2)."""
    return (n + f + 2) // 2


def coin_threshold(n: int, f: int) -> int:
    return f + 1


@dataclass(frozen=True)
class KeyBundle:
    """Key material for one system instance: VCBC and coin schemes."""

    vcbc: ThresholdParams
    vcbc_shares: tuple[KeyShare, ...]
    coin: ThresholdParams
    coin_shares: tuple[KeyShare, ...]


def provision(n: int, f: int, seed: bytes, scheme: str = TEST_SCHEME) -> KeyBundle:
    vseed = hashlib.sha256(seed + b"vcbc").digest()
    cseed = hashlib.sha256(seed + b"coin").digest()
    vp, vs = keygen(n, vcbc_threshold(n, f), vseed, scheme)
    cp, cs = keygen(n, coin_threshold(n, f), cseed, scheme)
    return KeyBundle(vp, tuple(vs), cp, tuple(cs))


__all__ = [
    "BLS_SCHEME",
    "CombinedSignature",
    "InsufficientSharesError",
    "KeyBundle",
    "KeyShare",
    "ParameterError",
    "RejectedShareError",
    "SignatureShare",
    "TEST_SCHEME",
    "ThresholdError",
    "ThresholdParams",
    "VerificationError",
    "coin_threshold",
    "coin_value",
    "combine",
    "digest",
    "get_scheme",
    "keygen",
    "provision",
    "sign_share",
    "vcbc_threshold",
    "verify_share",
    "verify_signature",
]
