"""Asynchronous store-and-forward relay for complete HTTP messages."""

from .client import (
    ChainInconsistency,
    MailboxClient,
    MailboxEndpoint,
    MissingSender,
    NotFound,
    ProtocolViolation,
    RetrievedMessage,
    SendRejected,
    TransportFailure,
)
from .codec import (
    ChainLinks,
    InnerHttpMessage,
    Kind,
    MediaType,
    MessagePayload,
    ViaInfo,
    parse_inner_message,
    parse_pipeline,
    serialize_inner_message,
)
from .server import MailboxApp, MailboxServer, ServerConfig
from .store import FileLogStore, MemoryStore, open_store

__version__ = "0.1.0"
