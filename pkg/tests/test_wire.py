import json
import random
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from alea.net.wire import (
    HEADER_SIZE,
    MAX_BODY,
    DecodeError,
    Kind,
    MessageEnvelope,
    SizeError,
    WireError,
    decode,
    encode,
    stage_of,
)

VECTORS = json.loads((Path(__file__).parent.parent / "vectors" / "wire.json").read_text())["vectors"]


def random_envelope(rng: random.Random) -> MessageEnvelope:
    return MessageEnvelope(
        Kind(rng.randint(1, 11)),
        rng.getrandbits(32),
        rng.getrandbits(32),
        rng.getrandbits(64),
        rng.getrandbits(32),
        rng.randbytes(rng.choice([0, 1, 2, 17, 300, 4096])),
    )


@pytest.mark.parametrize("vec", VECTORS, ids=[v["name"] for v in VECTORS])
def test_shipped_vectors(vec):
    e = MessageEnvelope(Kind(vec["kind"]), vec["sender"], vec["origin"], vec["seq"], vec["internal_round"],
                        bytes.fromhex(vec["body"]), vec["version"])
    assert encode(e).hex() == vec["hex"]
    assert decode(bytes.fromhex(vec["hex"])) == e


def test_minimal_finish_layout():
    data = encode(MessageEnvelope(Kind.FINISH, 0, 0, 0, 0, b"\x01"))
    # 22 bytes of fixed fields, a 4-byte body length, then the body
    assert HEADER_SIZE == 26
    assert len(data) == HEADER_SIZE + 1
    assert data[22:26] == b"\0\0\0\x01"


def test_fuzzed_round_trips():
    rng = random.Random(1)
    for _ in range(1000):
        e = random_envelope(rng)
        data = encode(e)
        assert decode(data) == e
        assert encode(decode(data)) == data


@given(st.integers(1, 11), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.integers(0, 2**64 - 1),
       st.integers(0, 2**32 - 1), st.binary(max_size=512))
def test_round_trip_property(kind, sender, origin, seq, ir, body):
    e = MessageEnvelope(Kind(kind), sender, origin, seq, ir, body)
    assert decode(encode(e)) == e


def test_bit_flips_are_rejected_or_change_the_envelope():
    rng = random.Random(2)
    for _ in range(1000):
        e = random_envelope(rng)
        data = bytearray(encode(e))
        i = rng.randrange(len(data))
        data[i] ^= 1 << rng.randrange(8)
        try:
            d = decode(bytes(data))
        except DecodeError:
            continue
        # accepted flips must land in a field and change the envelope
        assert d != e
        assert encode(d) == bytes(data)


def test_oversized_body():
    with pytest.raises(SizeError):
        encode(MessageEnvelope(Kind.FILLER, 0, body=bytes(MAX_BODY + 1)))


def test_field_overflow_is_a_wire_error():
    with pytest.raises(WireError):
        encode(MessageEnvelope(Kind.SEND, 2**32))


def test_decode_errors():
    good = encode(MessageEnvelope(Kind.SEND, 1, 1, 0, 0, b"abc"))
    with pytest.raises(DecodeError):
        decode(b"\x02" + good[1:])
    with pytest.raises(DecodeError):
        decode(good[:-1])
    with pytest.raises(DecodeError):
        decode(good[:10])
    with pytest.raises(DecodeError):
        decode(good + b"\0")
    with pytest.raises(DecodeError):
        decode(good[:1] + b"\x0c" + good[2:])
    with pytest.raises(DecodeError):
        decode(good[:1] + b"\x00" + good[2:])


def test_stage_partition():
    stages = {k: stage_of(k) for k in Kind}
    assert {k for k, s in stages.items() if s == "broadcast"} == {Kind.SEND, Kind.ECHO, Kind.FINAL}
    assert {k for k, s in stages.items() if s == "recovery"} == {Kind.FILLGAP, Kind.FILLER}
    assert stages[Kind.CLIENTREQ] == "client"
    assert {k for k, s in stages.items() if s == "agreement"} == {Kind.INIT, Kind.AUX, Kind.CONF, Kind.COIN, Kind.FINISH}
