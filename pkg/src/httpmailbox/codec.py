"""Wire formats carried through the mailbox.

Covers the ``message/http`` (single) and ``application/http`` (pipeline)
entity formats, plus the mailbox-specific ``Via`` and ``Link`` header
grammars and HTTP-date handling.

Parsing is lenient about line endings (bare LF accepted, obs-fold
continuation lines unfolded); serialization always emits CRLF.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from email.utils import format_datetime, parsedate_to_datetime
from typing import Iterable, Optional

DEFAULT_MAX_ENTITY = 10_000_000

CRLF = b"\r\n"

_TOKEN_RE = re.compile(r"^[!#$%&'*+\-.^_`|~0-9A-Za-z]+$")
_VERSION_RE = re.compile(r"^HTTP/(\d)\.(\d)$")
_SCHEME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+\-.]*:\S+$")


class CodecError(ValueError):
    """Base class for every parse/serialize failure in this module."""


class MalformedStartLine(CodecError):
    pass


class HeaderSyntax(CodecError):
    pass


class BodyLengthMismatch(CodecError):
    pass


class KindMismatch(CodecError):
    pass


class EmptyPipeline(CodecError):
    pass


class UnsupportedMediaType(CodecError):
    pass


class EntityTooLarge(CodecError):
    pass


class InvariantViolation(CodecError):
    pass


class ViaSyntax(CodecError):
    pass


class LinkSyntax(CodecError):
    pass


class Kind(enum.Enum):
    REQUEST = "request"
    RESPONSE = "response"


class MediaType(enum.Enum):
    MESSAGE_HTTP = "message/http"
    APPLICATION_HTTP = "application/http"


def is_absolute_uri(value: str) -> bool:
    """True for ``scheme:rest`` with no whitespace (RFC 3986 absolute-URI)."""
    return bool(value) and _SCHEME_RE.match(value) is not None


# -- HTTP dates ---------------------------------------------------------------


def format_http_date(dt: datetime) -> str:
    """RFC 1123 form, e.g. ``Thu, 20 Dec 2012 02:22:56 GMT``."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return format_datetime(dt.astimezone(timezone.utc), usegmt=True)


def parse_http_date(value: str) -> datetime:
    try:
        dt = parsedate_to_datetime(value)
    except (TypeError, ValueError) as exc:
        raise HeaderSyntax(f"bad HTTP date: {value!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def utcnow_seconds() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


# -- inner HTTP messages ------------------------------------------------------


@dataclass(frozen=True)
class InnerHttpMessage:
    """One HTTP request or response, as carried inside a mailbox entity."""

    kind: Kind
    method: Optional[str] = None
    target: Optional[str] = None
    status: Optional[int] = None
    reason: Optional[str] = None
    version: str = "HTTP/1.1"
    headers: tuple[tuple[str, str], ...] = ()
    body: bytes = b""

    @classmethod
    def request(
        cls,
        method: str,
        target: str,
        headers: Iterable[tuple[str, str]] = (),
        body: bytes = b"",
        version: str = "HTTP/1.1",
        content_length: bool = True,
    ) -> "InnerHttpMessage":
        """Build a request; adds Content-Length for a non-empty body unless told not to."""
        hdrs = _with_length(tuple(headers), body, content_length)
        return cls(Kind.REQUEST, method=method, target=target, version=version, headers=hdrs, body=body)

    @classmethod
    def response(
        cls,
        status: int,
        reason: str = "",
        headers: Iterable[tuple[str, str]] = (),
        body: bytes = b"",
        version: str = "HTTP/1.1",
        content_length: bool = True,
    ) -> "InnerHttpMessage":
        hdrs = _with_length(tuple(headers), body, content_length)
        return cls(Kind.RESPONSE, status=status, reason=reason, version=version, headers=hdrs, body=body)

    def header(self, name: str) -> Optional[str]:
        """First value of ``name`` (case-insensitive), or None."""
        return get_header(self.headers, name)

    def validate(self) -> None:
        if self.kind is Kind.REQUEST:
            if not self.method or not _TOKEN_RE.match(self.method):
                raise InvariantViolation(f"bad request method {self.method!r}")
            if not self.target or any(c.isspace() for c in self.target):
                raise InvariantViolation(f"bad request target {self.target!r}")
            if self.status is not None or self.reason is not None:
                raise InvariantViolation("request carries status fields")
        else:
            if self.status is None or not 100 <= self.status <= 599:
                raise InvariantViolation(f"bad status code {self.status!r}")
            if self.method is not None or self.target is not None:
                raise InvariantViolation("response carries request fields")
            if self.reason and ("\r" in self.reason or "\n" in self.reason):
                raise InvariantViolation("reason phrase contains a line break")
        if not _VERSION_RE.match(self.version):
            raise InvariantViolation(f"bad HTTP version {self.version!r}")
        for name, value in self.headers:
            if not _TOKEN_RE.match(name):
                raise InvariantViolation(f"bad header name {name!r}")
            if "\r" in value or "\n" in value:
                raise InvariantViolation(f"header {name} contains a line break")
        declared = _content_length(self.headers, InvariantViolation)
        if declared is not None and declared != len(self.body):
            raise InvariantViolation(
                f"Content-Length {declared} disagrees with body of {len(self.body)} bytes"
            )


def _with_length(headers, body, add):
    if add and body and get_header(headers, "Content-Length") is None:
        return headers + (("Content-Length", str(len(body))),)
    return headers


def get_header(headers: Iterable[tuple[str, str]], name: str) -> Optional[str]:
    lname = name.lower()
    for k, v in headers:
        if k.lower() == lname:
            return v
    return None


def _content_length(headers, error=BodyLengthMismatch) -> Optional[int]:
    values = {v.strip() for k, v in headers if k.lower() == "content-length"}
    if not values:
        return None
    if len(values) > 1:
        raise error(f"conflicting Content-Length values {sorted(values)}")
    (value,) = values
    if not value.isdigit():
        raise error(f"bad Content-Length {value!r}")
    return int(value)


def serialize_inner_message(msg: InnerHttpMessage) -> bytes:
    msg.validate()
    if msg.kind is Kind.REQUEST:
        start = f"{msg.method} {msg.target} {msg.version}"
    else:
        start = f"{msg.version} {msg.status} {msg.reason or ''}"
    headers = list(msg.headers)
    if msg.body and get_header(headers, "Content-Length") is None:
        headers.append(("Content-Length", str(len(msg.body))))
    lines = [start] + [f"{k}: {v}" for k, v in headers]
    head = ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1")
    return head + msg.body


# -- parsing ------------------------------------------------------------------


@dataclass
class Head:
    """Parsed start line plus headers of any HTTP message (inner or outer)."""

    kind: Kind
    method: Optional[str]
    target: Optional[str]
    status: Optional[int]
    reason: Optional[str]
    version: str
    headers: list[tuple[str, str]] = field(default_factory=list)

    def header(self, name: str) -> Optional[str]:
        return get_header(self.headers, name)


def _find_head_end(data: bytes, start: int) -> tuple[int, int]:
    """Return (end of header block, start of body) for the message at ``start``."""
    crlf = data.find(b"\r\n\r\n", start)
    lf = data.find(b"\n\n", start)
    candidates = [(crlf, crlf + 4), (lf, lf + 2)]
    candidates = [c for c in candidates if c[0] >= 0]
    if not candidates:
        raise HeaderSyntax("header block is not terminated by an empty line")
    return min(candidates)


def parse_head(block: bytes) -> Head:
    """Parse a header block (start line + header lines, no terminating blank line)."""
    text = block.decode("latin-1")
    lines = text.split("\n")
    lines = [ln[:-1] if ln.endswith("\r") else ln for ln in lines]
    if not lines or not lines[0]:
        raise MalformedStartLine("empty start line")
    start = lines[0]
    parts = start.split(" ", 2)
    if start.startswith("HTTP/"):
        if len(parts) < 2 or not _VERSION_RE.match(parts[0]):
            raise MalformedStartLine(f"bad status line {start!r}")
        code = parts[1]
        if len(code) != 3 or not code.isdigit() or not 100 <= int(code) <= 599:
            raise MalformedStartLine(f"bad status code in {start!r}")
        head = Head(Kind.RESPONSE, None, None, int(code), parts[2] if len(parts) > 2 else "", parts[0])
    else:
        if len(parts) != 3 or not _TOKEN_RE.match(parts[0]) or not parts[1] or not _VERSION_RE.match(parts[2]):
            raise MalformedStartLine(f"bad request line {start!r}")
        head = Head(Kind.REQUEST, parts[0], parts[1], None, None, parts[2])
    for line in lines[1:]:
        if line[:1] in (" ", "\t"):
            # obs-fold: continuation of the previous header value
            if not head.headers:
                raise HeaderSyntax("continuation line before any header")
            name, value = head.headers[-1]
            head.headers[-1] = (name, f"{value} {line.strip()}".strip())
            continue
        name, sep, value = line.partition(":")
        if not sep or not _TOKEN_RE.match(name):
            raise HeaderSyntax(f"bad header line {line!r}")
        head.headers.append((name, value.strip(" \t")))
    return head


def _parse_one(data: bytes, start: int, *, pipelined: bool) -> tuple[InnerHttpMessage, int]:
    head_end, body_start = _find_head_end(data, start)
    head = parse_head(data[start:head_end])
    te = head.header("Transfer-Encoding")
    if te is not None:
        raise HeaderSyntax(f"transfer coding {te!r} is not supported inside a payload")
    length = _content_length(head.headers)
    if length is None:
        if pipelined:
            end = body_start
        else:
            end = len(data)
    else:
        end = body_start + length
        if end > len(data):
            raise BodyLengthMismatch(
                f"Content-Length {length} exceeds the {len(data) - body_start} remaining bytes"
            )
    msg = InnerHttpMessage(
        kind=head.kind,
        method=head.method,
        target=head.target,
        status=head.status,
        reason=head.reason,
        version=head.version,
        headers=tuple(head.headers),
        body=bytes(data[body_start:end]),
    )
    return msg, end


def _check_kind(msg: InnerHttpMessage, expected: Optional[Kind]) -> None:
    if expected is not None and msg.kind is not expected:
        raise KindMismatch(f"expected a {expected.value}, got a {msg.kind.value}")


def parse_inner_message(
    data: bytes, expected_kind: Optional[Kind] = None, max_bytes: int = DEFAULT_MAX_ENTITY
) -> InnerHttpMessage:
    """Parse exactly one HTTP message; ``expected_kind=None`` accepts either kind."""
    if not data:
        raise MalformedStartLine("empty message")
    if len(data) > max_bytes:
        raise EntityTooLarge(f"{len(data)} bytes exceeds limit of {max_bytes}")
    msg, end = _parse_one(data, 0, pipelined=False)
    if end != len(data):
        raise BodyLengthMismatch(f"{len(data) - end} trailing bytes after Content-Length")
    _check_kind(msg, expected_kind)
    return msg


@dataclass(frozen=True)
class MessagePayload:
    """A mailbox entity: one or more inner messages plus their exact bytes."""

    media_type: MediaType
    msgtype: Optional[Kind]
    messages: tuple[InnerHttpMessage, ...]
    raw: bytes

    @classmethod
    def single(cls, msg: InnerHttpMessage, tag_msgtype: bool = True) -> "MessagePayload":
        return cls(MediaType.MESSAGE_HTTP, msg.kind if tag_msgtype else None, (msg,), serialize_inner_message(msg))

    @classmethod
    def pipeline(cls, msgs: Iterable[InnerHttpMessage], tag_msgtype: bool = True) -> "MessagePayload":
        msgs = tuple(msgs)
        if not msgs:
            raise EmptyPipeline("a pipeline needs at least one message")
        kinds = {m.kind for m in msgs}
        if len(kinds) != 1:
            raise KindMismatch("pipelined messages must all be requests or all responses")
        raw = b"".join(serialize_inner_message(m) for m in msgs)
        return cls(MediaType.APPLICATION_HTTP, msgs[0].kind if tag_msgtype else None, msgs, raw)

    @property
    def kind(self) -> Kind:
        return self.messages[0].kind

    @property
    def content_type(self) -> str:
        return format_content_type(self.media_type, self.msgtype)


def parse_pipeline(
    data: bytes, kind: Optional[Kind] = None, max_bytes: int = DEFAULT_MAX_ENTITY
) -> MessagePayload:
    """Split concatenated messages framed by Content-Length.

    A message without Content-Length is taken to have an empty body; bytes
    that follow it and do not start a new message are a framing error.
    """
    if not data:
        raise EmptyPipeline("empty pipeline")
    if len(data) > max_bytes:
        raise EntityTooLarge(f"{len(data)} bytes exceeds limit of {max_bytes}")
    msgs = []
    pos = 0
    while pos < len(data):
        try:
            msg, pos_next = _parse_one(data, pos, pipelined=True)
        except (MalformedStartLine, HeaderSyntax) as exc:
            if msgs and _content_length(msgs[-1].headers) is None:
                raise BodyLengthMismatch(
                    "message without Content-Length is followed by unframed bytes"
                ) from exc
            raise
        msgs.append(msg)
        pos = pos_next
    if kind is None:
        kind = msgs[0].kind
    for m in msgs:
        _check_kind(m, kind)
    return MessagePayload(MediaType.APPLICATION_HTTP, kind, tuple(msgs), bytes(data))


def parse_content_type(value: str) -> tuple[MediaType, Optional[Kind]]:
    """Recognize the two mailbox media types and their ``msgtype`` parameter.

    Both ``msgtype=request`` and the colon spelling ``msgtype: request`` are
    accepted. Returns ``(media_type, None)`` when msgtype is absent.
    """
    if value is None:
        raise UnsupportedMediaType("missing Content-Type")
    parts = value.split(";")
    mtype = parts[0].strip().lower()
    try:
        media = MediaType(mtype)
    except ValueError:
        raise UnsupportedMediaType(f"unsupported media type {mtype!r}") from None
    msgtype = None
    for param in parts[1:]:
        param = param.strip()
        if not param:
            continue
        m = re.match(r'^([!#$%&\'*+\-.^_`|~0-9A-Za-z]+)\s*[=:]\s*"?([^"]*)"?$', param)
        if not m:
            raise UnsupportedMediaType(f"bad media type parameter {param!r}")
        if m.group(1).lower() == "msgtype":
            try:
                msgtype = Kind(m.group(2).strip().lower())
            except ValueError:
                raise UnsupportedMediaType(f"unknown msgtype {m.group(2)!r}") from None
    return media, msgtype


def format_content_type(media: MediaType, msgtype: Optional[Kind]) -> str:
    if msgtype is None:
        return media.value
    return f"{media.value}; msgtype={msgtype.value}"


def decode_payload(content_type: str, data: bytes, max_bytes: int = DEFAULT_MAX_ENTITY) -> MessagePayload:
    """Validate an entity against its Content-Type and decode it."""
    media, msgtype = parse_content_type(content_type)
    if media is MediaType.MESSAGE_HTTP:
        msg = parse_inner_message(data, msgtype, max_bytes=max_bytes)
        return MessagePayload(media, msgtype, (msg,), bytes(data))
    payload = parse_pipeline(data, msgtype, max_bytes=max_bytes)
    return MessagePayload(media, msgtype, payload.messages, payload.raw)


# -- Via ----------------------------------------------------------------------


@dataclass(frozen=True)
class ViaInfo:
    sender_host: str
    on_behalf_of: str
    delivered_by: str

    def validate(self) -> None:
        if not self.sender_host or any(c.isspace() for c in self.sender_host):
            raise ViaSyntax(f"bad sender host {self.sender_host!r}")
        for uri in (self.on_behalf_of, self.delivered_by):
            if not is_absolute_uri(uri):
                raise ViaSyntax(f"not an absolute URI: {uri!r}")


_VIA_RE = re.compile(
    r"^sent\s+by\s+(?P<host>\S+)\s+on\s+behalf\s+of\s+(?P<sender>\S+?),?\s+delivered\s+by\s+(?P<mailbox>\S+)$",
    re.IGNORECASE,
)


def format_via(v: ViaInfo) -> str:
    v.validate()
    return f"sent by {v.sender_host} on behalf of {v.on_behalf_of} delivered by {v.delivered_by}"


def parse_via(text: str) -> ViaInfo:
    m = _VIA_RE.match(" ".join(text.split()))
    if not m:
        raise ViaSyntax(f"unrecognized Via value {text!r}")
    v = ViaInfo(m.group("host"), m.group("sender"), m.group("mailbox"))
    v.validate()
    return v


# -- Link ---------------------------------------------------------------------

# Entries are emitted in the order their earliest rel appears here.
_REL_ORDER = ("current", "first", "last", "self", "previous", "next")


@dataclass(frozen=True)
class ChainLinks:
    """Navigation URIs for one message in a recipient's chain."""

    current: str
    self: str
    first: str
    last: str
    previous: Optional[str] = None
    next: Optional[str] = None

    def validate(self) -> None:
        for name in ("current", "self", "first", "last"):
            if not getattr(self, name):
                raise LinkSyntax(f"missing rel={name}")
        if (self.first == self.self) != (self.previous is None):
            raise LinkSyntax("first==self must coincide with an absent previous link")
        if (self.last == self.self) != (self.next is None):
            raise LinkSyntax("last==self must coincide with an absent next link")

    @property
    def at_start(self) -> bool:
        return self.previous is None or self.self == self.first

    @property
    def at_end(self) -> bool:
        return self.next is None or self.self == self.last


def format_link_header(links: ChainLinks) -> str:
    links.validate()
    grouped: dict[str, list[str]] = {}
    for rel in _REL_ORDER:
        uri = getattr(links, rel)
        if uri is not None:
            grouped.setdefault(uri, []).append(rel)
    return ", ".join(f'<{uri}>; rel="{" ".join(rels)}"' for uri, rels in grouped.items())


_LINK_ENTRY_RE = re.compile(r"\s*<([^>]*)>\s*((?:;\s*[^;,]+?\s*=\s*(?:\"[^\"]*\"|[^;,\s]+)\s*)*)(?:,|$)")
_LINK_PARAM_RE = re.compile(r";\s*([^;=\s]+)\s*=\s*(\"[^\"]*\"|[^;,\s]+)")


def parse_link_relations(text: str) -> dict[str, str]:
    """Map every rel value in a Link header to its target URI."""
    rels: dict[str, str] = {}
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _LINK_ENTRY_RE.match(text, pos)
        if not m or m.end() == pos:
            raise LinkSyntax(f"bad Link header near {text[pos:pos + 40]!r}")
        uri = m.group(1).strip()
        for pname, pval in _LINK_PARAM_RE.findall(m.group(2)):
            if pname.lower() == "rel":
                for rel in pval.strip('"').split():
                    rels[rel.lower()] = uri
        pos = m.end()
        while pos < len(text) and text[pos] in " \t":
            pos += 1
    return rels


def parse_link_header(text: str) -> ChainLinks:
    rels = parse_link_relations(text)
    try:
        links = ChainLinks(
            current=rels["current"],
            self=rels["self"],
            first=rels["first"],
            last=rels["last"],
            previous=rels.get("previous") or rels.get("prev"),
            next=rels.get("next"),
        )
    except KeyError as exc:
        raise LinkSyntax(f"Link header lacks rel={exc.args[0]}") from None
    links.validate()
    return links
