"""Replay client: streams connection records to a fog daemon as RECORD_SUBMIT."""

from __future__ import annotations

import socket
import time
from dataclasses import dataclass, field

import numpy as np

from .. import dataset as ds
from ..errors import ProtocolError
from . import protocol as proto


class Client:
    """Blocking request/reply client over one connection."""

    def __init__(self, host, port, timeout=30.0, max_bytes=proto.MAX_MESSAGE_BYTES):
        self.max_bytes = max_bytes
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.file = self.sock.makefile("rb")

    def close(self):
        self.file.close()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def send_raw(self, data: bytes) -> proto.WireMessage:
        self.sock.sendall(data)
        line = self.file.readline(self.max_bytes + 1)
        if not line:
            raise ConnectionError("connection closed by peer")
        return proto.decode_message(line, self.max_bytes)

    def request(self, msg: proto.WireMessage) -> proto.WireMessage:
        return self.send_raw(proto.encode_message(msg, self.max_bytes))

    def health(self) -> dict:
        return self.request(proto.WireMessage(proto.HEALTH)).payload


@dataclass
class ReplaySummary:
    submitted: int = 0
    normal: int = 0
    anomaly: int = 0
    categorized: int = 0
    partial: bool = False
    last_record_id: int | None = None
    error: str = ""
    latency: dict = field(default_factory=dict)   # seconds, keys p50/p90/p99/max/mean
    decisions: dict | None = None                 # record id -> decision, if collected

    def counts_reconcile(self):
        return self.submitted == self.normal + self.anomaly

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("submitted", "normal", "anomaly", "categorized",
                                           "partial", "last_record_id", "error", "latency")}
        return d


def latency_percentiles(samples) -> dict:
    if not samples:
        return {}
    a = np.asarray(samples, dtype=np.float64)
    p50, p90, p99 = np.percentile(a, [50, 90, 99])
    return {"p50": float(p50), "p90": float(p90), "p99": float(p99),
            "max": float(a.max()), "mean": float(a.mean())}


def replay(records, host, port, rate=None, collect=False, busy_retry=0.05,
           drain_timeout=60.0, include_label=False) -> ReplaySummary:
    """Submit ``records`` in order; ``rate`` is records/second (None = as fast as possible).

    ``records`` may be a path to an NSL-KDD file. Each record id is the
    record's line number. Once everything is submitted the fog is polled
    until its forward queue is empty, so ``categorized`` counts the cloud
    answers attributable to this run.
    """
    if isinstance(records, (str, bytes)) or hasattr(records, "__fspath__"):
        records = ds.parse_records(records)
    summary = ReplaySummary(decisions={} if collect else None)
    lat = []
    try:
        client = Client(host, port)
    except OSError as exc:
        summary.partial, summary.error = True, f"connect failed: {exc}"
        return summary
    with client:
        try:
            before = int(client.health().get("categorized", 0))
            t_start = time.perf_counter()
            for i, rec in enumerate(records):
                if rate:
                    delay = t_start + i / rate - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                rid = rec.line if rec.line is not None else i
                msg = proto.WireMessage(proto.RECORD_SUBMIT, rid,
                                        proto.record_payload(rec, include_label))
                while True:
                    t0 = time.perf_counter()
                    reply = client.request(msg)
                    dt = time.perf_counter() - t0
                    if reply.kind == proto.ERROR and reply.payload.get("code") == proto.E_BUSY:
                        time.sleep(busy_retry)
                        continue
                    break
                if reply.kind != proto.DETECT_RESPONSE:
                    raise ProtocolError(reply.payload.get("code", proto.E_KIND),
                                        f"record {rid}: {reply.payload.get('detail', reply.kind)}")
                if reply.record_id != rid:
                    raise ProtocolError(proto.E_RECORD_ID, f"reply for {reply.record_id}, sent {rid}")
                decision = reply.payload["decision"]
                lat.append(dt)
                summary.submitted += 1
                if decision == "anomaly":
                    summary.anomaly += 1
                else:
                    summary.normal += 1
                summary.last_record_id = rid
                if collect:
                    summary.decisions[rid] = decision
            deadline = time.monotonic() + drain_timeout
            while True:
                h = client.health()
                if int(h.get("pending", 0)) == 0 or time.monotonic() > deadline:
                    break
                time.sleep(0.02)
            summary.categorized = int(h.get("categorized", 0)) - before
            if int(h.get("pending", 0)):
                summary.error = f"{h['pending']} anomalies still queued for the cloud"
        except (OSError, ConnectionError) as exc:
            summary.partial, summary.error = True, f"connection lost: {exc}"
    summary.latency = latency_percentiles(lat)
    return summary
