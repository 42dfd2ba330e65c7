"""The mailbox service.

:class:`MailboxApp` maps one parsed request to one response and holds no
state besides the store, so it can be exercised without sockets.
:class:`MailboxServer` puts it behind a small asyncio HTTP/1.1 front end
with keep-alive.
"""

from __future__ import annotations

import asyncio
import contextlib
import logging
import threading
import uuid
from dataclasses import dataclass, field
from typing import Iterator, Optional
from urllib.parse import quote, unquote, urlsplit

from . import codec
from .codec import (
    ChainLinks,
    CodecError,
    EntityTooLarge,
    UnsupportedMediaType,
    ViaInfo,
    format_content_type,
    format_http_date,
    format_link_header,
    format_via,
    is_absolute_uri,
)
from .store import MessageStore, NewMessage, StorageFailure, StoredMessage, open_store, validate_recipient

log = logging.getLogger(__name__)

UNSPECIFIED_SENDER = "unspecified:sender"
SERVER_NAME = "HTTP Mailbox"
MAILBOX_METHODS = "GET, POST, OPTIONS"
ID_METHODS = "GET, OPTIONS"

CORS_HEADERS = (
    ("Access-Control-Allow-Origin", "*"),
    ("Access-Control-Expose-Headers", "Location, Link, Via, Memento-Datetime, HM-Deleted, Date"),
)
CORS_PREFLIGHT_HEADERS = (
    ("Access-Control-Allow-Methods", MAILBOX_METHODS),
    ("Access-Control-Allow-Headers", "Content-Type, HM-Sender"),
    ("Access-Control-Max-Age", "86400"),
)

# Bodies beyond this are not drained before answering 413; the connection is dropped.
_MAX_DRAIN = 1 << 30

_REASONS = {
    200: "OK", 201: "Created", 204: "No Content", 400: "Bad Request", 404: "Not Found",
    405: "Method Not Allowed", 411: "Length Required", 413: "Payload Too Large",
    415: "Unsupported Media Type", 431: "Request Header Fields Too Large",
    500: "Internal Server Error",
}


def recipient_to_path(recipient: str) -> str:
    """Form of a recipient identifier as it appears after the HM-Base.

    URIs (anything with ``://``) are embedded verbatim; tokens are
    percent-encoded, keeping ``/`` so ``friends/alice`` stays readable.
    """
    if "://" in recipient:
        return recipient
    return quote(recipient, safe="/:@!$&'()*+,;=-._~")


def path_to_recipient(raw: str) -> str:
    return raw if "://" in raw else unquote(raw)


@dataclass
class ServerConfig:
    hm_base: str = "/hm/"
    public_base_uri: Optional[str] = None
    max_entity_bytes: int = codec.DEFAULT_MAX_ENTITY
    bind: str = "127.0.0.1:8080"
    store: str = "memory"
    cors_enabled: bool = True

    def __post_init__(self) -> None:
        if not (self.hm_base.startswith("/") and self.hm_base.endswith("/")):
            raise ValueError(f"hm_base must begin and end with '/': {self.hm_base!r}")
        if self.max_entity_bytes <= 0:
            raise ValueError("max_entity_bytes must be positive")
        if self.public_base_uri is not None and not is_absolute_uri(self.public_base_uri):
            raise ValueError(f"public_base_uri must be absolute: {self.public_base_uri!r}")

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.bind.rpartition(":")
        return host or "127.0.0.1", int(port)


@dataclass
class Request:
    method: str
    target: str
    headers: list[tuple[str, str]] = field(default_factory=list)
    body: bytes = b""
    peer: str = "127.0.0.1"
    version: str = "HTTP/1.1"

    def header(self, name: str) -> Optional[str]:
        return codec.get_header(self.headers, name)


@dataclass
class Response:
    status: int
    headers: list[tuple[str, str]] = field(default_factory=list)
    body: bytes = b""

    @property
    def reason(self) -> str:
        return _REASONS.get(self.status, "")

    def header(self, name: str) -> Optional[str]:
        return codec.get_header(self.headers, name)

    def to_bytes(self, version: str = "HTTP/1.1") -> bytes:
        headers = [(k, v) for k, v in self.headers if k.lower() != "content-length"]
        headers.append(("Content-Length", str(len(self.body))))
        lines = [f"{version} {self.status} {self.reason}"] + [f"{k}: {v}" for k, v in headers]
        return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1") + self.body


def _text(status: int, message: str, headers=()) -> Response:
    return Response(status, [("Content-Type", "text/plain; charset=utf-8"), *headers], (message + "\n").encode())


class MailboxApp:
    def __init__(self, config: ServerConfig, store: MessageStore, public_base_uri: Optional[str] = None):
        self.config = config
        self.store = store
        self.public_base_uri = public_base_uri or config.public_base_uri or "http://{}:{}/".format(*config.host_port)

    # -- URIs --------------------------------------------------------------

    @property
    def base_url(self) -> str:
        return self.public_base_uri.rstrip("/") + self.config.hm_base

    def message_uri(self, msg_id: str) -> str:
        return f"{self.base_url}id/{msg_id}"

    def recipient_uri(self, recipient: str) -> str:
        return self.base_url + recipient_to_path(recipient)

    def links_for(self, msg_id: str) -> ChainLinks:
        n = self.store.neighbors(msg_id)
        return ChainLinks(
            current=self.recipient_uri(n.recipient),
            self=self.message_uri(n.self),
            first=self.message_uri(n.first),
            last=self.message_uri(n.last),
            previous=self.message_uri(n.prev) if n.prev else None,
            next=self.message_uri(n.next) if n.next else None,
        )

    # -- dispatch ----------------------------------------------------------

    def _path(self, target: str) -> str:
        if not target.startswith("/"):
            # absolute-form request target
            parts = urlsplit(target)
            target = target[len(f"{parts.scheme}://{parts.netloc}"):] or "/"
        return target

    def classify(self, target: str) -> tuple[str, str]:
        """Return (route, remainder): route is one of root/id/recipient/bare/other."""
        path = self._path(target)
        base = self.config.hm_base
        if path == "/" and base != "/":
            return "root", ""
        if not path.startswith(base):
            return "other", ""
        rest = path[len(base):]
        if rest.startswith("id/"):
            return "id", rest[3:]
        if not rest:
            return ("root" if base == "/" else "bare"), ""
        return "recipient", rest

    def precheck(self, method: str, target: str, content_length: int) -> Optional[Response]:
        """Early answer for oversized sends, before the body is read."""
        if method == "POST" and content_length > self.config.max_entity_bytes:
            route, _ = self.classify(target)
            if route == "recipient":
                return self._finish(
                    _text(413, f"entity of {content_length} bytes exceeds {self.config.max_entity_bytes}")
                )
        return None

    def handle(self, req: Request) -> Response:
        try:
            resp = self._dispatch(req)
        except StorageFailure as exc:
            log.exception("storage failure")
            resp = _text(500, f"storage failure: {exc}")
        return self._finish(resp)

    def _finish(self, resp: Response) -> Response:
        resp.headers.insert(0, ("Server", SERVER_NAME))
        if codec.get_header(resp.headers, "Date") is None:
            resp.headers.insert(1, ("Date", format_http_date(codec.utcnow_seconds())))
        if self.config.cors_enabled:
            resp.headers.extend(CORS_HEADERS)
        return resp

    def _dispatch(self, req: Request) -> Response:
        route, rest = self.classify(req.target)
        if route == "other":
            return _text(404, "not a mailbox path")
        if req.method == "OPTIONS":
            if not self.config.cors_enabled:
                return Response(204, [("Allow", ID_METHODS if route == "id" else MAILBOX_METHODS)])
            return Response(204, list(CORS_PREFLIGHT_HEADERS))
        if route == "root":
            if req.method != "GET":
                return _text(405, "method not allowed", [("Allow", "GET, OPTIONS")])
            return self.describe()
        if route == "id":
            if req.method != "GET":
                return _text(405, "method not allowed", [("Allow", ID_METHODS)])
            return self.handle_retrieve_by_id(rest)
        if req.method not in ("GET", "POST"):
            return _text(405, "method not allowed", [("Allow", MAILBOX_METHODS)])
        if route == "bare":
            return _text(400, "missing recipient identifier after HM-Base")
        recipient = path_to_recipient(rest)
        if req.method == "POST":
            return self.handle_send(req, recipient)
        return self.handle_retrieve_latest(recipient)

    def describe(self) -> Response:
        body = f"{SERVER_NAME}\nHM-Base: {self.config.hm_base}\n".encode()
        return Response(
            200,
            [
                ("Content-Type", "text/plain; charset=utf-8"),
                ("HM-Base", self.config.hm_base),
                ("Link", f'<{self.base_url}>; rel="hm-base"'),
            ],
            body,
        )

    # -- handlers ----------------------------------------------------------

    def handle_send(self, req: Request, recipient: str) -> Response:
        try:
            validate_recipient(recipient)
        except ValueError as exc:
            return _text(400, str(exc))
        if len(req.body) > self.config.max_entity_bytes:
            return _text(413, f"entity exceeds {self.config.max_entity_bytes} bytes")
        try:
            payload = codec.decode_payload(
                req.header("Content-Type"), req.body, max_bytes=self.config.max_entity_bytes
            )
        except UnsupportedMediaType as exc:
            return _text(415, str(exc))
        except EntityTooLarge as exc:
            return _text(413, str(exc))
        except CodecError as exc:
            return _text(400, f"invalid HTTP message entity: {exc}")
        sender = req.header("HM-Sender")
        if sender is None:
            sender = UNSPECIFIED_SENDER
        elif not is_absolute_uri(sender.strip()):
            return _text(400, f"HM-Sender is not an absolute URI: {sender!r}")
        msg_id = self.store.append(
            recipient,
            NewMessage(
                sender_uri=sender.strip(),
                sender_host=req.peer,
                media_type=payload.media_type,
                msgtype=payload.msgtype,
                body=req.body,
            ),
        )
        return Response(201, [("Location", self.message_uri(msg_id))])

    def handle_retrieve_latest(self, recipient: str) -> Response:
        msg = self.store.latest(recipient)
        if msg is None:
            return _text(404, f"no messages for {recipient}")
        return self._message_response(msg)

    def handle_retrieve_by_id(self, raw_id: str) -> Response:
        try:
            msg_id = str(uuid.UUID(raw_id))
        except ValueError:
            return _text(404, "unknown message id")
        msg = self.store.get_by_id(msg_id)
        if msg is None:
            return _text(404, "unknown message id")
        return self._message_response(msg)

    def _message_response(self, msg: StoredMessage) -> Response:
        via = ViaInfo(msg.sender_host, msg.sender_uri, self.public_base_uri)
        headers = [
            ("Link", format_link_header(self.links_for(msg.id))),
            ("Via", format_via(via)),
            ("Memento-Datetime", format_http_date(msg.received_at)),
            ("Content-Type", format_content_type(msg.media_type, msg.msgtype)),
        ]
        if msg.deleted:
            headers.append(("HM-Deleted", "true"))
        return Response(200, headers, msg.body)


class MailboxServer:
    """asyncio HTTP/1.1 front end for :class:`MailboxApp`."""

    def __init__(self, config: ServerConfig, store: Optional[MessageStore] = None):
        self.config = config
        self._owns_store = store is None
        self.store = store if store is not None else open_store(config.store)
        self.app = MailboxApp(config, self.store)
        self._server: Optional[asyncio.base_events.Server] = None
        self._handlers: set[asyncio.Task] = set()
        self.port: Optional[int] = None

    async def start(self) -> None:
        host, port = self.config.host_port
        self._server = await asyncio.start_server(self._connection, host, port, backlog=4096, limit=1 << 20)
        self.port = self._server.sockets[0].getsockname()[1]
        if self.config.public_base_uri is None:
            self.app.public_base_uri = f"http://{host}:{self.port}/"
        log.info("HTTP Mailbox listening on %s:%s (HM-Base %s)", host, self.port, self.config.hm_base)

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for task in list(self._handlers):
            task.cancel()
        await asyncio.gather(*self._handlers, return_exceptions=True)

    @property
    def url(self) -> str:
        return self.app.public_base_uri

    @property
    def local_url(self) -> str:
        """Where the socket actually listens, regardless of the public URI."""
        host = self.config.host_port[0]
        if ":" in host:
            host = f"[{host}]"
        return f"http://{host}:{self.port}/"

    async def _connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        peer_host = peer[0] if peer else "unknown"
        task = asyncio.current_task()
        self._handlers.add(task)
        try:
            while await self._one_request(reader, writer, peer_host):
                pass
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()
            try:
                with contextlib.suppress(Exception):
                    await writer.wait_closed()
            finally:
                self._handlers.discard(task)

    async def _one_request(self, reader, writer, peer_host: str) -> bool:
        try:
            raw_head = await reader.readuntil(b"\r\n\r\n")
        except asyncio.IncompleteReadError:
            return False
        except asyncio.LimitOverrunError:
            await self._send(writer, _text(431, "request header block too large"))
            return False
        try:
            head = codec.parse_head(raw_head[:-4])
            if head.kind is not codec.Kind.REQUEST:
                raise codec.MalformedStartLine("expected a request")
            length = int(head.header("Content-Length") or 0)
            if length < 0:
                raise ValueError
        except (CodecError, ValueError):
            await self._send(writer, _text(400, "malformed request"))
            return False
        if head.header("Transfer-Encoding") is not None:
            await self._send(writer, _text(411, "Content-Length required"))
            return False

        keep_alive = _keep_alive(head)
        early = self.app.precheck(head.method, head.target, length)
        if early is not None:
            if length > _MAX_DRAIN:
                await self._send(writer, early, close=True)
                return False
            remaining = length
            while remaining:
                chunk = await reader.read(min(remaining, 1 << 20))
                if not chunk:
                    return False
                remaining -= len(chunk)
            await self._send(writer, early, close=not keep_alive)
            return keep_alive

        body = await reader.readexactly(length) if length else b""
        req = Request(head.method, head.target, head.headers, body, peer_host, head.version)
        resp = self.app.handle(req)
        await self._send(writer, resp, close=not keep_alive)
        return keep_alive

    async def _send(self, writer: asyncio.StreamWriter, resp: Response, close: bool = True) -> None:
        if resp.header("Server") is None:
            resp = self.app._finish(resp)
        if close:
            resp.headers.append(("Connection", "close"))
        writer.write(resp.to_bytes())
        await writer.drain()

    @contextlib.contextmanager
    def run_in_thread(self) -> Iterator["MailboxServer"]:
        """Serve from a daemon thread for the duration of the ``with`` block."""
        loop = asyncio.new_event_loop()
        started = threading.Event()
        errors: list[BaseException] = []

        def runner():
            asyncio.set_event_loop(loop)
            try:
                loop.run_until_complete(self.start())
            except BaseException as exc:  # surfaced to the caller below
                errors.append(exc)
                started.set()
                return
            started.set()
            loop.run_forever()
            loop.run_until_complete(self.close())
            loop.close()

        thread = threading.Thread(target=runner, name="hm-server", daemon=True)
        thread.start()
        started.wait()
        if errors:
            raise errors[0]
        try:
            yield self
        finally:
            loop.call_soon_threadsafe(loop.stop)
            thread.join(timeout=10)
            if self._owns_store:
                self.store.close()


def _keep_alive(head: codec.Head) -> bool:
    conn = (head.header("Connection") or "").lower()
    if head.version == "HTTP/1.0":
        return "keep-alive" in conn
    return "close" not in conn


def serve(config: ServerConfig) -> None:
    """Run a server in the foreground until interrupted."""
    server = MailboxServer(config)
    try:
        asyncio.run(server.serve_forever())
    except KeyboardInterrupt:
        pass
    finally:
        server.store.close()
