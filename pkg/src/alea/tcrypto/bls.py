"""Threshold BLS signatures on BLS12-381 (signatures in G2, keys in G1).

Shares are Shamir evaluations of a degree ``k-1`` polynomial at ``x = i+1``;
combination is Lagrange interpolation in the exponent. ``blspy`` provides
the curve arithmetic and pairing check but no scalar multiplication of
points, so interpolation uses double-and-add over point addition.
"""
from __future__ import annotations

import hashlib

from .base import KeyShare, ThresholdParams, register

try:
    from blspy import BasicSchemeMPL, G1Element, G2Element, PrivateKey
except ImportError:  # pragma: no cover - exercised only without blspy
    BasicSchemeMPL = None

CURVE_ORDER = 0x73EDA753299D7D483339D80809A1D80553BDA402FFFE5BFEFFFFFFFF00000001
G1_SIZE = 48
G2_SIZE = 96


def available() -> bool:
    return BasicSchemeMPL is not None


def _scalar(seed: bytes, tag: bytes, j: int) -> int:
    h = hashlib.sha512(seed + tag + j.to_bytes(4, "big")).digest()
    return int.from_bytes(h, "big") % CURVE_ORDER


def _privkey(x: int):
    return PrivateKey.from_bytes(x.to_bytes(32, "big"))


def _mul(point, scalar: int):
    scalar %= CURVE_ORDER
    acc = None
    addend = point
    while scalar:
        if scalar & 1:
            acc = addend if acc is None else acc + addend
        scalar >>= 1
        if scalar:
            addend = addend + addend
    return acc if acc is not None else G2Element()


def lagrange_at_zero(xs: list[int]) -> list[int]:
    out = []
    for i, xi in enumerate(xs):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if i != j:
                num = num * xj % CURVE_ORDER
                den = den * (xj - xi) % CURVE_ORDER
        out.append(num * pow(den, -1, CURVE_ORDER) % CURVE_ORDER)
    return out


class BlsScheme:
    scheme_id = "bls12-381"
    share_size = G2_SIZE
    signature_size = G2_SIZE

    def __init__(self):
        self._pk_cache: dict[bytes, list] = {}

    def keygen(self, n, k, seed):
        if not available():
            raise RuntimeError("blspy is required for the BLS threshold scheme")
        coeffs = [_scalar(seed, b"bls-coef", j) for j in range(k)]
        if coeffs[0] == 0:
            coeffs[0] = 1

        def poly(x):
            acc = 0
            for c in reversed(coeffs):
                acc = (acc * x + c) % CURVE_ORDER
            return acc

        master = bytes(_privkey(coeffs[0]).get_g1())
        secrets = [poly(i + 1) for i in range(n)]
        pks = b"".join(bytes(_privkey(s).get_g1()) for s in secrets)
        params = ThresholdParams(n, k, self.scheme_id, master + pks)
        shares = [KeyShare(i, s.to_bytes(32, "big"), self.scheme_id) for i, s in enumerate(secrets)]
        return params, shares

    def _keys(self, params):
        keys = self._pk_cache.get(params.public_material)
        if keys is None:
            pm = params.public_material
            keys = [G1Element.from_bytes(pm[j : j + G1_SIZE]) for j in range(0, len(pm), G1_SIZE)]
            self._pk_cache[pm] = keys
        return keys

    def sign(self, share, message):
        sk = PrivateKey.from_bytes(share.secret_material)
        return bytes(BasicSchemeMPL.sign(sk, message))

    def _verify(self, pk, message, sig_bytes):
        if len(sig_bytes) != G2_SIZE:
            return False
        try:
            sig = G2Element.from_bytes(sig_bytes)
        except (ValueError, RuntimeError):
            return False
        return BasicSchemeMPL.verify(pk, message, sig)

    def verify_share(self, params, message, signer, share_bytes):
        return self._verify(self._keys(params)[signer + 1], message, share_bytes)

    def combine(self, params, message, shares):
        signers = sorted(shares)
        lams = lagrange_at_zero([i + 1 for i in signers])
        acc = None
        for i, lam in zip(signers, lams):
            term = _mul(G2Element.from_bytes(shares[i]), lam)
            acc = term if acc is None else acc + term
        return bytes(acc)

    def verify(self, params, message, sig_bytes):
        return self._verify(self._keys(params)[0], message, sig_bytes)


if available():
    register(BlsScheme())
