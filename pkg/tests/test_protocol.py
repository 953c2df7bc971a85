import asyncio

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogids.errors import ProtocolError
from fogids.netsvc import protocol as P
from synth import synth_records

text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=30)
messages = st.builds(
    P.WireMessage,
    kind=st.sampled_from(sorted(P.KINDS)),
    record_id=st.integers(0, 2**63),
    payload=st.dictionaries(text.filter(bool), text, max_size=8),
)

# the seven canonical malformed inputs and the code each must produce
MALFORMED = [
    (b"FIDS/1 HEALTH 0 -", P.E_FRAMING),                    # no terminating newline
    (b"FIDS/1 HEALTH 0 a=%zz\n", P.E_ESCAPE),               # bad escape
    (b"FIDS/1 EXPLODE 0 -\n", P.E_KIND),                    # unknown kind
    (b"FIDS/2 HEALTH 0 -\n", P.E_VERSION),                  # version mismatch
    (b"FIDS/1 HEALTH 007 -\n", P.E_RECORD_ID),              # non-canonical record id
    (b"FIDS/1 HEALTH 0 b=1&a=2\n", P.E_PAYLOAD),            # keys out of order
    (b"FIDS/1 HEALTH 0 " + b"a=" + b"x" * P.MAX_MESSAGE_BYTES + b"\n", P.E_OVERSIZE),
]


def test_health_round_trip_bytes():
    m = P.WireMessage(P.HEALTH)
    data = P.encode_message(m)
    assert data == b"FIDS/1 HEALTH 0 -\n"
    assert P.decode_message(data) == m
    assert P.encode_message(P.decode_message(data)) == data


@settings(max_examples=1000, deadline=None)
@given(messages)
def test_round_trip_identity(m):
    data = P.encode_message(m)
    assert P.decode_message(data) == m
    assert P.encode_message(P.decode_message(data)) == data
    assert data.count(b"\n") == 1 and data.endswith(b"\n")


@pytest.mark.parametrize("data,code", MALFORMED, ids=[c for _, c in MALFORMED])
def test_malformed_codes(data, code):
    with pytest.raises(ProtocolError) as ei:
        P.decode_message(data)
    assert ei.value.code == code


def test_codes_are_distinct():
    assert len({c for _, c in MALFORMED}) == 7


@pytest.mark.parametrize("bad", [b"FIDS/1 HEALTH 0 a=%41\n", b"FIDS/1 HEALTH 0 a=%2f\n",
                                 b"FIDS/1 HEALTH 0 a=b c\n", b"FIDS/1 HEALTH 0 a=%\n"])
def test_only_canonical_escapes(bad):
    with pytest.raises(ProtocolError):
        P.decode_message(bad)


def test_size_boundary():
    base = P.encode_message(P.WireMessage(P.HEALTH, 0, {"a": ""}))
    fill = P.MAX_MESSAGE_BYTES - len(base)
    exact = P.WireMessage(P.HEALTH, 0, {"a": "x" * fill})
    data = P.encode_message(exact)
    assert len(data) == P.MAX_MESSAGE_BYTES
    assert P.decode_message(data) == exact
    over = P.WireMessage(P.HEALTH, 0, {"a": "x" * (fill + 1)})
    with pytest.raises(ProtocolError) as ei:
        P.encode_message(over)
    assert ei.value.code == P.E_OVERSIZE
    with pytest.raises(ProtocolError) as ei:
        P.decode_message(data[:-1] + b"x\n")
    assert ei.value.code == P.E_OVERSIZE


def test_encode_rejects_invalid_fields():
    with pytest.raises(ProtocolError):
        P.encode_message(P.WireMessage("NOPE"))
    with pytest.raises(ProtocolError):
        P.encode_message(P.WireMessage(P.HEALTH, -1))
    with pytest.raises(ProtocolError):
        P.encode_message(P.WireMessage(P.HEALTH, 0, {"a": 1}))


def test_record_payload_round_trip():
    for rec in synth_records(20, seed=11):
        m = P.WireMessage(P.RECORD_SUBMIT, rec.line, P.record_payload(rec))
        back = P.payload_record(P.decode_message(P.encode_message(m)).payload, rec.line)
        assert back == rec


def test_record_payload_missing_feature():
    rec = synth_records(1)[0]
    payload = P.record_payload(rec)
    del payload["service"]
    with pytest.raises(ProtocolError) as ei:
        P.payload_record(payload, 1)
    assert ei.value.code == P.E_PAYLOAD


def _read(chunks, limit):
    async def go():
        r = asyncio.StreamReader(limit=limit + 1)
        for c in chunks:
            r.feed_data(c)
        r.feed_eof()
        out = []
        while True:
            line = await P.read_line(r, limit)
            if line == b"":
                return out
            out.append(line)
    return asyncio.run(go())


def test_read_line_oversize_then_recovers():
    assert _read([b"x" * 50 + b"\n", b"ok\n"], 20) == [None, b"ok\n"]


def test_read_line_unterminated_tail():
    assert _read([b"a\nb"], 20) == [b"a\n", b"b"]
