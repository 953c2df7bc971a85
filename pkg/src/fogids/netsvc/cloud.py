"""Cloud daemon: stage-2 attack categorisation of forwarded anomalies."""

from __future__ import annotations

import asyncio
import time

from ..pipeline import Alert, AlertLog, Stage, stage2_classify
from . import protocol as proto
from .server import LineService, ServiceConfig


class CloudService(LineService):
    name = "cloud"

    def __init__(self, config: ServiceConfig, stage: Stage, alerts: AlertLog | None = None):
        super().__init__(config)
        self.stage = stage
        self.alerts = alerts if alerts is not None else AlertLog(config.alert_sink, keep=False)
        self.alerted = set()
        self.stats = {"classified": 0, "errors": 0}

    def handle(self, msg):
        if msg.kind == proto.HEALTH:
            return proto.WireMessage(proto.HEALTH, msg.record_id, {
                "service": self.name, "version": str(proto.VERSION),
                "classified": str(self.stats["classified"]),
                "schema_hash": self.stage.model.schema_hash})
        if msg.kind != proto.ANOMALY_FORWARD:
            raise proto.ProtocolError(proto.E_KIND, f"cloud does not accept {msg.kind}")
        record = proto.payload_record(msg.payload, msg.record_id)
        res = stage2_classify(self.stage, record)
        self.stats["classified"] += 1
        # a re-forward after a dropped reply must not alert twice
        if msg.record_id not in self.alerted:
            self.alerted.add(msg.record_id)
            self.alerts.append(Alert("categorized", msg.record_id, time.time(),
                                     (self.stage.model_id,), res.category))
        payload = {"category": res.category, "seconds": repr(res.seconds)}
        for name, p in zip(self.stage.class_names, res.distribution):
            payload[f"score_{name}"] = repr(p)
        return proto.WireMessage(proto.CLASSIFY_RESPONSE, msg.record_id, payload)


def load_cloud(config: ServiceConfig) -> CloudService:
    stage = Stage.load(config.model_path, config.schema_hash)
    if stage.config.task != "category":
        raise ValueError(f"{config.model_path} is not a stage-2 (category) bundle")
    return CloudService(config, stage)


async def serve_cloud(config: ServiceConfig):
    svc = await load_cloud(config).start()
    async with svc.server:
        await svc.server.serve_forever()


def run_cloud(config: ServiceConfig):
    asyncio.run(serve_cloud(config))
