"""Per-recipient message chains.

Each recipient identifier names an append-only chain. Messages get a UUID
and a per-chain sequence number; deletion only sets a flag, so a deleted
message keeps its place in the chain and stays fetchable by id.

Two backends share the :class:`MessageStore` interface: :class:`MemoryStore`
and :class:`FileLogStore`, an append-only log whose index is rebuilt on open.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import threading
import uuid
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import NamedTuple, Optional

from .codec import Kind, MediaType

log = logging.getLogger(__name__)

_LEN = struct.Struct(">Q")
_META_LEN = struct.Struct(">I")


class StorageFailure(RuntimeError):
    pass


class UnknownId(KeyError):
    pass


def validate_recipient(recipient: str) -> str:
    if not recipient:
        raise ValueError("recipient identifier is empty")
    if any(c.isspace() or ord(c) < 0x20 or ord(c) == 0x7F for c in recipient):
        raise ValueError(f"recipient identifier contains whitespace or control characters: {recipient!r}")
    return recipient


@dataclass(frozen=True)
class NewMessage:
    """Everything the caller supplies for an append; the store adds id, seq and time."""

    sender_uri: str
    sender_host: str
    media_type: MediaType
    msgtype: Optional[Kind]
    body: bytes
    received_at: Optional[datetime] = None


@dataclass(frozen=True)
class StoredMessage:
    id: str
    recipient: str
    seq: int
    sender_uri: str
    sender_host: str
    received_at: datetime
    media_type: MediaType
    msgtype: Optional[Kind]
    body: bytes
    deleted: bool = False


class ChainNeighbors(NamedTuple):
    """Ids around one message in its chain; ``prev``/``next`` are None at the ends."""

    recipient: str
    self: str
    first: str
    last: str
    prev: Optional[str]
    next: Optional[str]


class MessageStore:
    """Shared chain bookkeeping; subclasses persist and load message bodies."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._chains: dict[str, list[str]] = {}
        self._meta: dict[str, StoredMessage] = {}

    # subclass hooks
    def _persist_append(self, msg: StoredMessage) -> StoredMessage:
        return msg

    def _persist_delete(self, msg_id: str) -> None:
        pass

    def _load_body(self, msg: StoredMessage) -> StoredMessage:
        return msg

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def append(self, recipient: str, new: NewMessage) -> str:
        validate_recipient(recipient)
        received = new.received_at or datetime.now(timezone.utc)
        received = received.astimezone(timezone.utc).replace(microsecond=0)
        with self._lock:
            chain = self._chains.get(recipient, [])
            msg = StoredMessage(
                id=str(uuid.uuid4()),
                recipient=recipient,
                seq=len(chain) + 1,
                sender_uri=new.sender_uri,
                sender_host=new.sender_host,
                received_at=received,
                media_type=new.media_type,
                msgtype=new.msgtype,
                body=bytes(new.body),
            )
            indexed = self._persist_append(msg)
            self._meta[msg.id] = indexed
            self._chains.setdefault(recipient, chain).append(msg.id)
        return msg.id

    def get_by_id(self, msg_id: str) -> Optional[StoredMessage]:
        with self._lock:
            msg = self._meta.get(msg_id)
        return None if msg is None else self._load_body(msg)

    def latest(self, recipient: str) -> Optional[StoredMessage]:
        with self._lock:
            for msg_id in reversed(self._chains.get(recipient, ())):
                msg = self._meta[msg_id]
                if not msg.deleted:
                    break
            else:
                return None
        return self._load_body(msg)

    def neighbors(self, msg_id: str) -> ChainNeighbors:
        with self._lock:
            msg = self._meta.get(msg_id)
            if msg is None:
                raise UnknownId(msg_id)
            chain = self._chains[msg.recipient]
            i = msg.seq - 1
            return ChainNeighbors(
                recipient=msg.recipient,
                self=msg_id,
                first=chain[0],
                last=chain[-1],
                prev=chain[i - 1] if i > 0 else None,
                next=chain[i + 1] if i + 1 < len(chain) else None,
            )

    def soft_delete(self, msg_id: str) -> bool:
        with self._lock:
            msg = self._meta.get(msg_id)
            if msg is None or msg.deleted:
                return False
            self._persist_delete(msg_id)
            self._meta[msg_id] = replace(msg, deleted=True)
            return True

    def chain_length(self, recipient: str) -> int:
        with self._lock:
            return len(self._chains.get(recipient, ()))

    def recipients(self) -> list[str]:
        with self._lock:
            return list(self._chains)


class MemoryStore(MessageStore):
    """Keeps everything in process memory; contents vanish with the process."""


class FileLogStore(MessageStore):
    """Append-only log file with an in-memory index rebuilt on open.

    Record framing: 8-byte big-endian payload length, then the payload. A
    payload is a 4-byte big-endian length of a JSON metadata object, the
    JSON itself, and the raw message body. Deletions are separate records
    of kind ``"delete"`` carrying no body.

    With ``fsync=False`` an append is durable once the write returns (it
    survives the process being killed but not a host crash).
    """

    def __init__(self, path, fsync: bool = False) -> None:
        super().__init__()
        self.path = Path(path)
        self.fsync = fsync
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT, 0o644)
        self._offsets: dict[str, tuple[int, int]] = {}
        self.recovered_bytes_dropped = 0
        self._end = self._recover()

    def close(self) -> None:
        with self._lock:
            if self._fd >= 0:
                os.close(self._fd)
                self._fd = -1

    def _recover(self) -> int:
        size = os.fstat(self._fd).st_size
        pos = 0
        while pos < size:
            header = os.pread(self._fd, _LEN.size, pos)
            if len(header) < _LEN.size:
                break
            (length,) = _LEN.unpack(header)
            start = pos + _LEN.size
            if start + length > size:
                break
            meta = self._read_meta(start, length)
            if meta is None:
                break
            self._apply(meta, start, length)
            pos = start + length
        if pos < size:
            log.warning("dropping %d bytes of incomplete record at end of %s", size - pos, self.path)
            self.recovered_bytes_dropped = size - pos
            os.ftruncate(self._fd, pos)
            os.fsync(self._fd)
        return pos

    def _read_meta(self, start: int, length: int) -> Optional[dict]:
        if length < _META_LEN.size:
            return None
        (mlen,) = _META_LEN.unpack(os.pread(self._fd, _META_LEN.size, start))
        if _META_LEN.size + mlen > length:
            return None
        try:
            meta = json.loads(os.pread(self._fd, mlen, start + _META_LEN.size))
        except ValueError:
            return None
        meta["_body_offset"] = start + _META_LEN.size + mlen
        meta["_body_length"] = length - _META_LEN.size - mlen
        return meta

    def _apply(self, meta: dict, start: int, length: int) -> None:
        if meta.get("kind") == "delete":
            msg = self._meta.get(meta["id"])
            if msg is not None:
                self._meta[meta["id"]] = replace(msg, deleted=True)
            return
        msg = StoredMessage(
            id=meta["id"],
            recipient=meta["recipient"],
            seq=meta["seq"],
            sender_uri=meta["sender_uri"],
            sender_host=meta["sender_host"],
            received_at=datetime.fromisoformat(meta["received_at"]),
            media_type=MediaType(meta["media_type"]),
            msgtype=Kind(meta["msgtype"]) if meta["msgtype"] else None,
            body=b"",
        )
        self._offsets[msg.id] = (meta["_body_offset"], meta["_body_length"])
        self._meta[msg.id] = msg
        self._chains.setdefault(msg.recipient, []).append(msg.id)

    def _write_record(self, meta: dict, body: bytes = b"") -> int:
        mbytes = json.dumps(meta, separators=(",", ":")).encode()
        payload_len = _META_LEN.size + len(mbytes) + len(body)
        record = _LEN.pack(payload_len) + _META_LEN.pack(len(mbytes)) + mbytes + body
        try:
            written = os.pwrite(self._fd, record, self._end)
            if written != len(record):
                raise OSError(f"short write ({written} of {len(record)} bytes)")
            if self.fsync:
                os.fsync(self._fd)
        except OSError as exc:
            # leave nothing half-visible: cut the file back to the last good record
            try:
                os.ftruncate(self._fd, self._end)
            except OSError:
                pass
            raise StorageFailure(str(exc)) from exc
        body_offset = self._end + _LEN.size + _META_LEN.size + len(mbytes)
        self._end += len(record)
        return body_offset

    def _persist_append(self, msg: StoredMessage) -> StoredMessage:
        meta = {
            "kind": "message",
            "id": msg.id,
            "recipient": msg.recipient,
            "seq": msg.seq,
            "sender_uri": msg.sender_uri,
            "sender_host": msg.sender_host,
            "received_at": msg.received_at.isoformat(),
            "media_type": msg.media_type.value,
            "msgtype": msg.msgtype.value if msg.msgtype else None,
        }
        offset = self._write_record(meta, msg.body)
        self._offsets[msg.id] = (offset, len(msg.body))
        return replace(msg, body=b"")

    def _persist_delete(self, msg_id: str) -> None:
        self._write_record({"kind": "delete", "id": msg_id})

    def _load_body(self, msg: StoredMessage) -> StoredMessage:
        offset, length = self._offsets[msg.id]
        try:
            body = os.pread(self._fd, length, offset)
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc
        if len(body) != length:
            raise StorageFailure(f"short read for message {msg.id}")
        return replace(msg, body=body)


def open_store(spec: str) -> MessageStore:
    """Build a store from ``"memory"`` or ``"file:<path>"``."""
    if spec == "memory":
        return MemoryStore()
    if spec.startswith("file:"):
        return FileLogStore(spec[len("file:"):])
    raise ValueError(f"unknown store backend {spec!r}; use 'memory' or 'file:<path>'")
