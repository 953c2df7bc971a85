"""Fog daemon: stage-1 anomaly detection, local alerting, forwarding to the cloud."""

from __future__ import annotations

import asyncio
import collections
import logging
import time

from ..errors import ProtocolError
from ..pipeline import Alert, AlertLog, Stage, stage1_detect
from . import protocol as proto
from .server import LineService, ServiceConfig

log = logging.getLogger(__name__)


class FogService(LineService):
    """Answers RECORD_SUBMIT with the stage-1 decision.

    Anomalies are alerted locally first, then queued for the cloud. The
    queue is bounded; when it is full new submissions are refused with
    E_BUSY instead of dropping anything.
    """

    name = "fog"

    def __init__(self, config: ServiceConfig, stage: Stage, alerts: AlertLog | None = None):
        super().__init__(config)
        self.stage = stage
        self.alerts = alerts if alerts is not None else AlertLog(config.alert_sink, keep=False)
        self.queue = collections.deque()
        self.results = {}          # record id -> category reported by the cloud
        self.stats = dict.fromkeys(
            ("submitted", "normal", "anomaly", "forwarded", "categorized", "refused"), 0)
        self._wake = None
        self._task = None

    async def start(self):
        await super().start()
        self._wake = asyncio.Event()
        self._task = asyncio.create_task(self._forwarder())
        return self

    async def stop(self):
        if self._task is not None:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass
        await super().stop()

    def health(self):
        p = {"service": self.name, "version": str(proto.VERSION),
             "pending": str(len(self.queue)), "schema_hash": self.stage.model.schema_hash}
        p.update({k: str(v) for k, v in self.stats.items()})
        return p

    def handle(self, msg):
        if msg.kind == proto.HEALTH:
            return proto.WireMessage(proto.HEALTH, msg.record_id, self.health())
        if msg.kind != proto.RECORD_SUBMIT:
            raise ProtocolError(proto.E_KIND, f"fog does not accept {msg.kind}")
        record = proto.payload_record(msg.payload, msg.record_id)
        res = stage1_detect(self.stage, record)
        if res.decision == "anomaly":
            if len(self.queue) >= self.config.forward_queue:
                self.stats["refused"] += 1
                return proto.error_message(proto.E_BUSY, "forward queue full, retry later",
                                           msg.record_id)
            self.alerts.append(Alert("anomaly", msg.record_id, time.time(), (self.stage.model_id,)))
            self.queue.append(proto.WireMessage(proto.ANOMALY_FORWARD, msg.record_id,
                                                proto.record_payload(record)))
            self._wake.set()
        self.stats["submitted"] += 1
        self.stats[res.decision] += 1
        return proto.WireMessage(proto.DETECT_RESPONSE, msg.record_id, {
            "decision": res.decision, "attack_score": repr(res.attack_score),
            "seconds": repr(res.seconds)})

    async def _forwarder(self):
        """Drain the queue to the cloud; an item leaves only once the cloud answered it."""
        reader = writer = None
        limit = self.config.max_message_bytes
        while True:
            if not self.queue:
                self._wake.clear()
                await self._wake.wait()
                continue
            try:
                if writer is None:
                    reader, writer = await asyncio.open_connection(
                        self.config.peer_host, self.config.peer_port, limit=limit + 1)
                msg = self.queue[0]
                writer.write(proto.encode_message(msg, limit))
                await writer.drain()
                line = await proto.read_line(reader, limit)
                if not line:
                    raise ConnectionError("cloud closed the connection")
                reply = proto.decode_message(line, limit)
            except (OSError, ProtocolError) as exc:
                log.warning("forward to cloud failed: %s", exc)
                if writer is not None:
                    writer.close()
                reader = writer = None
                await asyncio.sleep(self.config.retry_seconds)
                continue
            self.queue.popleft()
            self.stats["forwarded"] += 1
            if reply.kind == proto.CLASSIFY_RESPONSE:
                self.stats["categorized"] += 1
                self.results[msg.record_id] = reply.payload.get("category", "")
            else:
                # the cloud rejected this record; retrying would fail the same way
                log.error("cloud refused record %d: %s", msg.record_id, reply.payload)


def load_fog(config: ServiceConfig) -> FogService:
    stage = Stage.load(config.model_path, config.schema_hash)
    if stage.config.task != "binary":
        raise ValueError(f"{config.model_path} is not a stage-1 (binary) bundle")
    return FogService(config, stage)


async def serve_fog(config: ServiceConfig):
    svc = await load_fog(config).start()
    try:
        async with svc.server:
            await svc.server.serve_forever()
    finally:
        await svc.stop()


def run_fog(config: ServiceConfig):
    asyncio.run(serve_fog(config))
