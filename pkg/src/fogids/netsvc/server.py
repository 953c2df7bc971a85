"""Service configuration and the asyncio plumbing shared by the fog and cloud daemons."""

from __future__ import annotations

import asyncio
import json
import logging
import threading
from dataclasses import asdict, dataclass, fields

from ..errors import ProtocolError, SchemaError
from . import protocol as proto

log = logging.getLogger(__name__)


@dataclass
class ServiceConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 0
    model_path: str = ""
    alert_sink: str | None = None
    peer_host: str = "127.0.0.1"      # fog only: cloud address
    peer_port: int = 0
    max_message_bytes: int = proto.MAX_MESSAGE_BYTES
    max_in_flight: int = 64
    forward_queue: int = 10_000
    retry_seconds: float = 0.5
    schema_hash: str | None = None    # if set, the model file must carry this hash

    def __post_init__(self):
        for name in ("max_message_bytes", "max_in_flight", "forward_queue"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_file(cls, path, **overrides):
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def to_dict(self):
        return asdict(self)


class LineService:
    """Accepts connections and answers one reply line per request line.

    Subclasses implement ``handle(msg) -> WireMessage`` (may be async).
    Decoding errors are answered with an ERROR message; the connection stays up.
    """

    name = "service"

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.server = None
        self._sem = None
        self._handlers = set()

    @property
    def address(self):
        return self.server.sockets[0].getsockname()[:2]

    async def start(self):
        self._sem = asyncio.Semaphore(self.config.max_in_flight)
        self.server = await asyncio.start_server(
            self._connection, self.config.listen_host, self.config.listen_port,
            limit=self.config.max_message_bytes + 1)
        log.info("%s listening on %s:%s", self.name, *self.address)
        return self

    async def stop(self):
        if self.server is not None:
            self.server.close()
            await self.server.wait_closed()
        for task in list(self._handlers):
            task.cancel()
        if self._handlers:
            await asyncio.gather(*self._handlers, return_exceptions=True)

    async def _connection(self, reader, writer):
        task = asyncio.current_task()
        self._handlers.add(task)
        try:
            while True:
                line = await proto.read_line(reader, self.config.max_message_bytes)
                if line == b"":
                    break
                reply = await self._reply(line)
                writer.write(proto.encode_message(reply, self.config.max_message_bytes))
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            self._handlers.discard(task)
            writer.close()

    async def _reply(self, line):
        if line is None:
            return proto.error_message(proto.E_OVERSIZE, "message exceeds size limit")
        try:
            msg = proto.decode_message(line, self.config.max_message_bytes)
        except ProtocolError as exc:
            return proto.error_message(exc.code, str(exc))
        async with self._sem:
            try:
                reply = self.handle(msg)
                if asyncio.iscoroutine(reply):
                    reply = await reply
                return reply
            except ProtocolError as exc:
                return proto.error_message(exc.code, str(exc), msg.record_id)
            except SchemaError as exc:
                return proto.error_message(proto.E_PAYLOAD, str(exc), msg.record_id)
            except Exception as exc:  # keep serving other requests
                log.exception("handler failed")
                return proto.error_message(proto.E_INTERNAL, repr(exc), msg.record_id)

    def handle(self, msg):
        raise NotImplementedError


class ServiceThread:
    """Run a service on its own event loop in a daemon thread (tests, embedding)."""

    def __init__(self, service: LineService):
        self.service = service
        self.loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self.loop.run_forever, daemon=True)

    def __enter__(self):
        self._thread.start()
        asyncio.run_coroutine_threadsafe(self.service.start(), self.loop).result(10)
        return self

    def __exit__(self, *exc):
        self.stop()

    @property
    def address(self):
        return self.service.address

    def call(self, coro, timeout=30):
        return asyncio.run_coroutine_threadsafe(coro, self.loop).result(timeout)

    def stop(self):
        if not self.loop.is_running():
            return
        try:
            self.call(self.service.stop(), 10)
        finally:
            self.loop.call_soon_threadsafe(self.loop.stop)
            self._thread.join(10)
