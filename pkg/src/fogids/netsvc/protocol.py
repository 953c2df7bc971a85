"""Line-delimited canonical text protocol between replay client, fog and cloud.

One message per line::

    FIDS/<version> <KIND> <record_id> <payload>\\n

``payload`` is ``-`` when empty, otherwise ``key=value`` pairs joined by
``&`` with keys strictly ascending. Keys and values are UTF-8 and
percent-escaped: bytes outside ``[A-Za-z0-9._~+:-]`` become ``%XX`` with
upper-case hex and nothing else may be escaped. Each message therefore has
exactly one encoding, and the decoder rejects every other byte sequence.
"""

from __future__ import annotations

import asyncio
import re
from dataclasses import dataclass, field

from ..dataset import FEATURE_NAMES, ConnectionRecord, record_from_fields
from ..errors import ProtocolError

VERSION = 1
MAX_MESSAGE_BYTES = 65536

RECORD_SUBMIT = "RECORD_SUBMIT"
DETECT_RESPONSE = "DETECT_RESPONSE"
ANOMALY_FORWARD = "ANOMALY_FORWARD"
CLASSIFY_RESPONSE = "CLASSIFY_RESPONSE"
ALERT_EVENT = "ALERT_EVENT"
HEALTH = "HEALTH"
ERROR = "ERROR"
KINDS = frozenset({RECORD_SUBMIT, DETECT_RESPONSE, ANOMALY_FORWARD, CLASSIFY_RESPONSE,
                   ALERT_EVENT, HEALTH, ERROR})

# error codes, one per failure class
E_OVERSIZE = "E_OVERSIZE"
E_FRAMING = "E_FRAMING"
E_ESCAPE = "E_ESCAPE"
E_KIND = "E_KIND"
E_VERSION = "E_VERSION"
E_RECORD_ID = "E_RECORD_ID"
E_PAYLOAD = "E_PAYLOAD"
E_BUSY = "E_BUSY"
E_INTERNAL = "E_INTERNAL"

_SAFE = frozenset(b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789._~+:-")
_HEX = "0123456789ABCDEF"
_PREFIX = "FIDS/"
_ID = re.compile(r"0|[1-9][0-9]*")


@dataclass(frozen=True)
class WireMessage:
    kind: str
    record_id: int = 0
    payload: dict = field(default_factory=dict)
    version: int = VERSION


def escape(text: str) -> str:
    out = []
    for b in text.encode("utf-8"):
        if b in _SAFE:
            out.append(chr(b))
        else:
            out.append("%" + _HEX[b >> 4] + _HEX[b & 15])
    return "".join(out)


def unescape(text: str) -> str:
    raw = bytearray()
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "%":
            h = text[i + 1:i + 3]
            if len(h) != 2 or any(ch not in _HEX for ch in h):
                raise ProtocolError(E_ESCAPE, f"bad escape {text[i:i + 3]!r}")
            b = int(h, 16)
            if b in _SAFE:
                raise ProtocolError(E_ESCAPE, f"needless escape {text[i:i + 3]!r}")
            raw.append(b)
            i += 3
        elif ord(c) < 128 and ord(c) in _SAFE:
            raw.append(ord(c))
            i += 1
        else:
            raise ProtocolError(E_ESCAPE, f"unescaped character {c!r}")
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ProtocolError(E_ESCAPE, "escaped bytes are not valid UTF-8") from None


def encode_message(m: WireMessage, max_bytes: int = MAX_MESSAGE_BYTES) -> bytes:
    if m.kind not in KINDS:
        raise ProtocolError(E_KIND, f"unknown kind {m.kind!r}")
    if not isinstance(m.record_id, int) or m.record_id < 0:
        raise ProtocolError(E_RECORD_ID, f"record id must be a non-negative int: {m.record_id!r}")
    for k, v in m.payload.items():
        if not isinstance(k, str) or not k or not isinstance(v, str):
            raise ProtocolError(E_PAYLOAD, "payload entries must be non-empty str keys with str values")
    if m.payload:
        body = "&".join(f"{escape(k)}={escape(m.payload[k])}" for k in sorted(m.payload))
    else:
        body = "-"
    line = f"{_PREFIX}{m.version} {m.kind} {m.record_id} {body}\n".encode("ascii")
    if len(line) > max_bytes:
        raise ProtocolError(E_OVERSIZE, f"message is {len(line)} bytes, limit {max_bytes}")
    return line


def decode_message(data: bytes, max_bytes: int = MAX_MESSAGE_BYTES) -> WireMessage:
    """Parse one line (including its trailing newline)."""
    if len(data) > max_bytes:
        raise ProtocolError(E_OVERSIZE, f"message is {len(data)} bytes, limit {max_bytes}")
    if not data.endswith(b"\n") or b"\n" in data[:-1]:
        raise ProtocolError(E_FRAMING, "a message is exactly one newline-terminated line")
    try:
        text = data[:-1].decode("ascii")
    except UnicodeDecodeError:
        raise ProtocolError(E_FRAMING, "non-ASCII byte outside an escape") from None
    parts = text.split(" ")
    if len(parts) != 4:
        raise ProtocolError(E_FRAMING, f"expected 4 space-separated fields, got {len(parts)}")
    head, kind, rid, body = parts
    if not head.startswith(_PREFIX) or not _ID.fullmatch(head[len(_PREFIX):]):
        raise ProtocolError(E_FRAMING, f"bad protocol tag {head!r}")
    version = int(head[len(_PREFIX):])
    if version != VERSION:
        raise ProtocolError(E_VERSION, f"version {version} not supported (speaks {VERSION})")
    if kind not in KINDS:
        raise ProtocolError(E_KIND, f"unknown kind {kind!r}")
    if not _ID.fullmatch(rid):
        raise ProtocolError(E_RECORD_ID, f"bad record id {rid!r}")
    payload = {}
    if body != "-":
        prev = None
        for item in body.split("&"):
            if "=" not in item:
                raise ProtocolError(E_PAYLOAD, f"payload item without '=': {item!r}")
            ek, ev = item.split("=", 1)
            k, v = unescape(ek), unescape(ev)
            if not k:
                raise ProtocolError(E_PAYLOAD, "empty payload key")
            if prev is not None and k <= prev:
                raise ProtocolError(E_PAYLOAD, f"payload keys not strictly ascending at {k!r}")
            payload[k] = v
            prev = k
    return WireMessage(kind, int(rid), payload, version)


def error_message(code: str, detail: str, record_id: int = 0) -> WireMessage:
    return WireMessage(ERROR, record_id, {"code": code, "detail": detail})


# --------------------------------------------------------------------------
# record payloads
# --------------------------------------------------------------------------

def record_payload(record: ConnectionRecord, include_label=True) -> dict:
    fields = record.fields()
    payload = dict(zip(FEATURE_NAMES, fields))
    if include_label:
        payload["label"] = record.label
        if record.difficulty is not None:
            payload["difficulty"] = str(record.difficulty)
    return payload


def payload_record(payload: dict, record_id: int) -> ConnectionRecord:
    missing = [n for n in FEATURE_NAMES if n not in payload]
    if missing:
        raise ProtocolError(E_PAYLOAD, f"missing feature field(s): {', '.join(missing[:5])}")
    fields = [payload[n] for n in FEATURE_NAMES]
    fields.append(payload.get("label", "unknown") or "unknown")
    if "difficulty" in payload:
        fields.append(payload["difficulty"])
    if any("," in f for f in fields):
        raise ProtocolError(E_PAYLOAD, "field values may not contain commas")
    try:
        return record_from_fields(fields, record_id)
    except ValueError as exc:
        raise ProtocolError(E_PAYLOAD, str(exc)) from None


async def read_line(reader: asyncio.StreamReader, max_bytes: int = MAX_MESSAGE_BYTES):
    """Read one newline-terminated line.

    Returns ``b""`` at a clean EOF. An over-long line is consumed up to its
    newline and ``None`` is returned, so the caller can reply E_OVERSIZE and
    keep the connection open. A final unterminated line is returned as-is
    and the decoder rejects it as a framing error.
    """
    buf = bytearray()
    too_long = False
    while True:
        try:
            chunk = await reader.readuntil(b"\n")
        except asyncio.IncompleteReadError as exc:
            if too_long:
                return None
            if not buf and not exc.partial:
                return b""
            data = bytes(buf + exc.partial)
            return None if len(data) > max_bytes else data
        except asyncio.LimitOverrunError as exc:
            chunk = await reader.readexactly(exc.consumed)
            if not too_long:
                buf += chunk
                if len(buf) > max_bytes:
                    too_long = True
                    buf.clear()
            continue
        if too_long or len(buf) + len(chunk) > max_bytes:
            return None
        buf += chunk
        return bytes(buf)
