"""Sender/recipient side of the mailbox.

Wraps HTTP messages into Send Requests, fetches and unwraps stored
messages, and walks a recipient's chain through its ``Link`` headers.
There is no polling loop; callers decide when to retrieve.
"""

from __future__ import annotations

import http.client
import threading
from dataclasses import dataclass
from datetime import datetime
from typing import Iterator, Optional
from urllib.parse import urlsplit

from . import codec
from .codec import ChainLinks, CodecError, MessagePayload, ViaInfo
from .server import UNSPECIFIED_SENDER, recipient_to_path


class MailboxError(Exception):
    pass


class SendRejected(MailboxError):
    def __init__(self, status: int, reason: str):
        super().__init__(f"send rejected with {status}: {reason}")
        self.status = status
        self.reason = reason


class TransportFailure(MailboxError):
    pass


class NotFound(MailboxError):
    pass


class ProtocolViolation(MailboxError):
    pass


class ChainInconsistency(MailboxError):
    pass


class MissingSender(MailboxError):
    pass


@dataclass(frozen=True)
class MailboxEndpoint:
    service_uri: str
    hm_base: str = "/hm/"

    def __post_init__(self):
        if not codec.is_absolute_uri(self.service_uri) or not urlsplit(self.service_uri).netloc:
            raise ValueError(f"service URI must be absolute: {self.service_uri!r}")
        if not (self.hm_base.startswith("/") and self.hm_base.endswith("/")):
            raise ValueError(f"hm_base must begin and end with '/': {self.hm_base!r}")

    def recipient_uri(self, recipient: str) -> str:
        return self.service_uri.rstrip("/") + self.hm_base + recipient_to_path(recipient)


@dataclass(frozen=True)
class RetrievedMessage:
    payload: MessagePayload
    via: ViaInfo
    links: ChainLinks
    memento_datetime: datetime
    message_uri: str
    deleted: bool = False

    @property
    def messages(self):
        return self.payload.messages

    @property
    def body(self) -> bytes:
        return self.payload.raw


@dataclass
class _RawResponse:
    status: int
    reason: str
    headers: list[tuple[str, str]]
    body: bytes

    def header(self, name: str) -> Optional[str]:
        return codec.get_header(self.headers, name)


class MailboxClient:
    """Talks to one mailbox service; keeps one keep-alive connection per thread and host."""

    def __init__(self, endpoint: MailboxEndpoint, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self._local = threading.local()
        self.requests_made = 0

    @classmethod
    def discover(cls, service_uri: str, timeout: float = 30.0) -> "MailboxClient":
        """Read HM-Base from the service descriptor at the root URL."""
        client = cls(MailboxEndpoint(service_uri), timeout)
        resp = client._request("GET", service_uri.rstrip("/") + "/")
        base = resp.header("HM-Base")
        if resp.status != 200 or not base:
            raise ProtocolViolation(f"no HM-Base advertised at {service_uri}")
        client.endpoint = MailboxEndpoint(service_uri, base)
        return client

    def close(self) -> None:
        for conn in getattr(self._local, "conns", {}).values():
            conn.close()
        self._local.conns = {}

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- transport ---------------------------------------------------------

    def _conn(self, scheme: str, netloc: str) -> http.client.HTTPConnection:
        conns = getattr(self._local, "conns", None)
        if conns is None:
            conns = self._local.conns = {}
        key = (scheme, netloc)
        if key not in conns:
            cls = http.client.HTTPSConnection if scheme == "https" else http.client.HTTPConnection
            conns[key] = cls(netloc, timeout=self.timeout)
        return conns[key]

    def _request(self, method: str, uri: str, body: bytes = b"", headers=None) -> _RawResponse:
        parts = urlsplit(uri)
        # raw path after the authority, so nested URIs stay untouched
        target = uri[len(f"{parts.scheme}://{parts.netloc}"):] or "/"
        hdrs = dict(headers or {})
        if body or method == "POST":
            hdrs["Content-Length"] = str(len(body))
        for attempt in (1, 2):
            conn = self._conn(parts.scheme, parts.netloc)
            reused = conn.sock is not None
            try:
                conn.request(method, target, body=body or None, headers=hdrs)
                resp = conn.getresponse()
                data = resp.read()
            except (http.client.RemoteDisconnected, BrokenPipeError, ConnectionResetError) as exc:
                conn.close()
                if attempt == 1 and reused:
                    # the server dropped an idle keep-alive connection
                    continue
                raise TransportFailure(f"{method} {uri}: {exc}") from exc
            except (OSError, http.client.HTTPException) as exc:
                conn.close()
                raise TransportFailure(f"{method} {uri}: {exc}") from exc
            self.requests_made += 1
            if resp.will_close:
                conn.close()
            return _RawResponse(resp.status, resp.reason, resp.getheaders(), data)
        raise AssertionError("unreachable")

    # -- sending -----------------------------------------------------------

    def send(self, recipient: str, payload: MessagePayload, sender: Optional[str] = None) -> str:
        """POST ``payload`` to ``recipient``'s mailbox; return the new message URI."""
        headers = {"Content-Type": payload.content_type}
        if sender is not None:
            if not codec.is_absolute_uri(sender):
                raise ValueError(f"sender must be an absolute URI: {sender!r}")
            headers["HM-Sender"] = sender
        resp = self._request("POST", self.endpoint.recipient_uri(recipient), payload.raw, headers)
        if resp.status != 201:
            raise SendRejected(resp.status, resp.body.decode("utf-8", "replace").strip() or resp.reason)
        location = resp.header("Location")
        if not location:
            raise ProtocolViolation("201 response without Location")
        return location

    def respond(self, original: RetrievedMessage, payload: MessagePayload, responder: str) -> str:
        """Send a response back to whoever the original message was sent on behalf of."""
        if payload.kind is not codec.Kind.RESPONSE:
            raise ValueError("respond() needs a payload of HTTP responses")
        target = original.via.on_behalf_of
        if not target or target == UNSPECIFIED_SENDER:
            raise MissingSender(f"{original.message_uri} does not name its sender")
        return self.send(target, payload, responder)

    # -- retrieval ---------------------------------------------------------

    def retrieve_latest(self, recipient: str) -> Optional[RetrievedMessage]:
        resp = self._request("GET", self.endpoint.recipient_uri(recipient))
        if resp.status == 404:
            return None
        return self._unwrap(resp, self.endpoint.recipient_uri(recipient))

    def retrieve_uri(self, message_uri: str) -> RetrievedMessage:
        resp = self._request("GET", message_uri)
        if resp.status == 404:
            raise NotFound(message_uri)
        return self._unwrap(resp, message_uri)

    def _unwrap(self, resp: _RawResponse, uri: str) -> RetrievedMessage:
        if resp.status != 200:
            raise ProtocolViolation(f"GET {uri} answered {resp.status} {resp.reason}")
        missing = [h for h in ("Via", "Link", "Memento-Datetime", "Content-Type") if resp.header(h) is None]
        if missing:
            raise ProtocolViolation(f"GET {uri}: response lacks {', '.join(missing)}")
        try:
            payload = codec.decode_payload(resp.header("Content-Type"), resp.body, max_bytes=max(len(resp.body), 1))
            via = codec.parse_via(resp.header("Via"))
            links = codec.parse_link_header(resp.header("Link"))
            when = codec.parse_http_date(resp.header("Memento-Datetime"))
        except CodecError as exc:
            raise ProtocolViolation(f"GET {uri}: {exc}") from exc
        return RetrievedMessage(
            payload=payload,
            via=via,
            links=links,
            memento_datetime=when,
            message_uri=links.self,
            deleted=(resp.header("HM-Deleted") or "").lower() == "true",
        )

    def iterate_chain(self, recipient: str, forward: bool = False) -> Iterator[RetrievedMessage]:
        """Walk a recipient's chain one message per request.

        Backward starts at the latest message and follows ``previous``.
        Forward fetches the latest once, jumps to ``first`` and follows
        ``next`` until it reaches the message it started from, so both
        directions issue one request per message in the chain.
        """
        latest = self.retrieve_latest(recipient)
        if latest is None:
            return
        if not forward:
            yield from self._walk(latest, backward=True)
            return
        if latest.links.at_start:
            yield latest
            return
        first = self.retrieve_uri(latest.links.first)
        for msg in self._walk(first, backward=False, stop_at=latest.message_uri):
            yield msg
        yield latest

    def _walk(self, start: RetrievedMessage, backward: bool, stop_at: Optional[str] = None):
        seen = set()
        msg = start
        while True:
            if msg.message_uri in seen:
                raise ChainInconsistency(f"link cycle at {msg.message_uri}")
            seen.add(msg.message_uri)
            yield msg
            if backward:
                if msg.links.at_start:
                    return
                nxt = msg.links.previous
            else:
                if msg.links.at_end:
                    return
                nxt = msg.links.next
            if nxt == stop_at:
                return
            msg = self.retrieve_uri(nxt)
