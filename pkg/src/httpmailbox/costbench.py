"""Network-cost model and an ApacheBench-style stress driver.

Cost model: the number of HTTP cycles (request + response) needed to get
M messages to R recipients, directly versus through the mailbox, with and
without pipelining M messages into N entities.

The stress driver keeps a fixed number of requests in flight against a
running mailbox and reports mean time per request (MTPR) the way
ApacheBench's "across all concurrent requests" line does: wall-clock time
divided by the number of requests. That figure falls as concurrency rises
whenever the server overlaps work. The per-client figure (multiplied by
concurrency) is reported alongside as ``mtpr_concurrent_ms``.
"""

from __future__ import annotations

import asyncio
import csv
import io
import resource
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional
from urllib.parse import urlsplit

import mpmath

from . import codec
from .client import MailboxEndpoint

# -- cost model ---------------------------------------------------------------


@dataclass(frozen=True)
class CostParams:
    messages: int
    recipients: int
    pipelines: Optional[int] = None

    def __post_init__(self):
        if self.messages < 1 or self.recipients < 1:
            raise ValueError("need at least one message and one recipient")
        n = self.pipelines
        if n is not None and not 1 <= n <= self.messages:
            raise ValueError(f"pipelines must be in [1, {self.messages}], got {n}")

    @property
    def n_pipelines(self) -> int:
        return self.messages if self.pipelines is None else self.pipelines


def cycles_http(p: CostParams) -> int:
    """Direct delivery: every message to every recipient is its own cycle."""
    return p.messages * p.recipients


def cycles_mailbox(p: CostParams) -> int:
    """One send per message plus one retrieval per message per recipient."""
    return p.messages * (p.recipients + 1)


def cycles_mailbox_pipelined(p: CostParams) -> int:
    return p.n_pipelines * (p.recipients + 1)


# -- payloads -----------------------------------------------------------------

_pi_digits = ""


def make_payload(nbytes: int) -> bytes:
    """The first ``nbytes`` decimal digits of pi as ASCII (``b"3141..."``)."""
    global _pi_digits
    if nbytes < 1:
        raise ValueError("payload must be at least one byte")
    guard = 20
    while len(_pi_digits) < nbytes:
        with mpmath.workdps(nbytes + guard + 10):
            text = mpmath.nstr(mpmath.pi, nbytes + guard, strip_zeros=False).replace(".", "")
        tail = text[nbytes:]
        # nstr rounds; a run of 9s or 0s in the guard digits could hide a carry
        if tail.strip("9") and tail.strip("0"):
            _pi_digits = text[:nbytes]
        else:
            guard *= 2
    return _pi_digits[:nbytes].encode("ascii")


# -- stress driver ------------------------------------------------------------

SEND = "send"
RETRIEVE = "retrieve"

BENCH_SENDER = "http://bench.invalid/client"


class TargetUnreachable(ConnectionError):
    def __init__(self, message: str, report: "BenchReport"):
        super().__init__(message)
        self.report = report


@dataclass
class BenchConfig:
    target: MailboxEndpoint
    mode: str = SEND
    concurrency: int = 1
    total_requests: Optional[int] = None
    payload_bytes: int = 100_000
    recipient: str = "bench"
    seed: bool = True
    keepalive: bool = True
    timeout: float = 60.0

    def __post_init__(self):
        if self.mode not in (SEND, RETRIEVE):
            raise ValueError(f"mode must be {SEND!r} or {RETRIEVE!r}")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.total_requests is None:
            self.total_requests = 10 * self.concurrency
        if self.total_requests < self.concurrency:
            raise ValueError("total_requests must be >= concurrency")


@dataclass
class BenchReport:
    mode: str
    concurrency: int
    payload_bytes: int
    total_requests: int
    wall_s: float
    mtpr_ms: float
    mtpr_concurrent_ms: float
    p50_ms: float
    p90_ms: float
    p99_ms: float
    ok_count: int
    expected_error_count: int
    unexpected_non2xx_count: int
    throughput_rps: float
    valid: bool = True
    statuses: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def unexpected_rate(self) -> float:
        return self.unexpected_non2xx_count / self.total_requests if self.total_requests else 0.0


def inner_request(cfg: BenchConfig) -> bytes:
    body = make_payload(cfg.payload_bytes)
    msg = codec.InnerHttpMessage.request(
        "PUT", "/bench/payload", [("Host", "bench.invalid"), ("Content-Type", "text/plain")], body
    )
    return codec.serialize_inner_message(msg)


def request_bytes(cfg: BenchConfig, mode: Optional[str] = None) -> bytes:
    """The exact bytes each benchmark request puts on the wire."""
    mode = mode or cfg.mode
    netloc = urlsplit(cfg.target.recipient_uri(cfg.recipient)).netloc
    path = cfg.target.recipient_uri(cfg.recipient)[len(cfg.target.service_uri.rstrip("/")):]
    conn = "keep-alive" if cfg.keepalive else "close"
    if mode == SEND:
        entity = inner_request(cfg)
        head = (
            f"POST {path} HTTP/1.1\r\nHost: {netloc}\r\nHM-Sender: {BENCH_SENDER}\r\n"
            f"Content-Type: message/http; msgtype=request\r\nContent-Length: {len(entity)}\r\n"
            f"Connection: {conn}\r\n\r\n"
        )
        return head.encode("latin-1") + entity
    return f"GET {path} HTTP/1.1\r\nHost: {netloc}\r\nConnection: {conn}\r\n\r\n".encode("latin-1")


def classify(mode: str, status: Optional[int]) -> str:
    """Bucket one outcome as ``ok``, ``expected`` (404 on an empty mailbox) or ``unexpected``."""
    if mode == SEND and status == 201:
        return "ok"
    if mode == RETRIEVE and status == 200:
        return "ok"
    if mode == RETRIEVE and status == 404:
        return "expected"
    return "unexpected"


async def _read_response(reader: asyncio.StreamReader) -> tuple[int, bool]:
    raw = await reader.readuntil(b"\r\n\r\n")
    head = codec.parse_head(raw[:-4])
    length = int(head.header("Content-Length") or 0)
    if length:
        await reader.readexactly(length)
    close = "close" in (head.header("Connection") or "").lower()
    return head.status, close


def _raise_fd_limit(needed: int) -> None:
    soft, hard = resource.getrlimit(resource.RLIMIT_NOFILE)
    if soft != resource.RLIM_INFINITY and soft < needed:
        target = needed if hard == resource.RLIM_INFINITY else min(needed, hard)
        resource.setrlimit(resource.RLIMIT_NOFILE, (target, hard))


async def _run(cfg: BenchConfig) -> BenchReport:
    parts = urlsplit(cfg.target.service_uri)
    host, port = parts.hostname, parts.port or 80
    payload = request_bytes(cfg)
    total = cfg.total_requests

    try:
        r, w = await asyncio.wait_for(asyncio.open_connection(host, port), cfg.timeout)
        if cfg.mode == RETRIEVE and cfg.seed:
            w.write(request_bytes(cfg, SEND))
            await w.drain()
            status, _ = await _read_response(r)
            if status != 201:
                raise ConnectionError(f"seeding the mailbox failed with {status}")
        w.close()
    except OSError as exc:
        raise TargetUnreachable(f"{host}:{port}: {exc}", _summarize(cfg, [], {}, 0.0, valid=False)) from exc

    issued = 0
    latencies: list[float] = []
    statuses: dict = {}
    aborted: list[BaseException] = []

    async def worker():
        nonlocal issued
        conn = None
        while issued < total and not aborted:
            issued += 1
            t0 = time.perf_counter()
            status = None
            try:
                if conn is None:
                    conn = await asyncio.open_connection(host, port)
                reader, writer = conn
                writer.write(payload)
                await writer.drain()
                status, close = await asyncio.wait_for(_read_response(reader), cfg.timeout)
                if close or not cfg.keepalive:
                    writer.close()
                    conn = None
            except ConnectionRefusedError as exc:
                aborted.append(exc)
            except (OSError, asyncio.IncompleteReadError, asyncio.TimeoutError, codec.CodecError):
                if conn is not None:
                    conn[1].close()
                conn = None
            latencies.append(time.perf_counter() - t0)
            statuses[status] = statuses.get(status, 0) + 1
        if conn is not None:
            conn[1].close()

    t_start = time.perf_counter()
    await asyncio.gather(*(worker() for _ in range(cfg.concurrency)))
    wall = time.perf_counter() - t_start
    report = _summarize(cfg, latencies, statuses, wall, valid=not aborted)
    if aborted:
        raise TargetUnreachable(f"{host}:{port} refused connections mid-run", report)
    return report


def _summarize(cfg: BenchConfig, latencies, statuses, wall: float, valid: bool) -> BenchReport:
    done = len(latencies)
    buckets = {"ok": 0, "expected": 0, "unexpected": 0}
    for status, count in statuses.items():
        buckets[classify(cfg.mode, status)] += count
    if done:
        q = statistics.quantiles(latencies, n=100, method="inclusive") if done > 1 else [latencies[0]] * 99
        p50, p90, p99 = (q[49] * 1e3, q[89] * 1e3, q[98] * 1e3)
    else:
        p50 = p90 = p99 = 0.0
    mtpr = wall / done * 1e3 if done else 0.0
    return BenchReport(
        mode=cfg.mode,
        concurrency=cfg.concurrency,
        payload_bytes=cfg.payload_bytes,
        total_requests=done,
        wall_s=wall,
        mtpr_ms=mtpr,
        mtpr_concurrent_ms=mtpr * cfg.concurrency,
        p50_ms=p50,
        p90_ms=p90,
        p99_ms=p99,
        ok_count=buckets["ok"],
        expected_error_count=buckets["expected"],
        unexpected_non2xx_count=buckets["unexpected"],
        throughput_rps=done / wall if wall else 0.0,
        valid=valid,
        statuses=dict(statuses),
    )


def run_bench(cfg: BenchConfig) -> BenchReport:
    """Drive ``cfg.total_requests`` requests with ``cfg.concurrency`` in flight."""
    _raise_fd_limit(cfg.concurrency + 256)
    return asyncio.run(_run(cfg))


# -- reporting ----------------------------------------------------------------

_CSV_FIELDS = [f.name for f in fields(BenchReport) if f.name != "statuses"]


def report_table(reports: list[BenchReport]) -> str:
    if not reports:
        raise ValueError("no reports to tabulate")
    header = ("mode", "concurrency", "payload", "requests", "ok", "expected", "unexpected",
              "MTPR ms", "p99 ms", "error %")
    rows = [
        (
            r.mode,
            str(r.concurrency),
            str(r.payload_bytes),
            str(r.total_requests),
            str(r.ok_count),
            str(r.expected_error_count),
            str(r.unexpected_non2xx_count),
            f"{r.mtpr_ms:.3f}",
            f"{r.p99_ms:.3f}",
            f"{100 * r.unexpected_rate:.4f}",
        )
        for r in reports
    ]
    widths = [max(len(row[i]) for row in [header, *rows]) for i in range(len(header))]
    lines = ["# MTPR = wall time / requests (mean across all concurrent requests)"]
    for row in [header, *rows]:
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def reports_to_csv(reports: list[BenchReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_CSV_FIELDS)
    writer.writeheader()
    for r in reports:
        row = asdict(r)
        row.pop("statuses")
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def reports_from_csv(text: str) -> list[BenchReport]:
    types = {f.name: f.type for f in fields(BenchReport)}
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        kwargs = {}
        for name, value in row.items():
            t = types[name]
            if t == "int":
                kwargs[name] = int(value)
            elif t == "float":
                kwargs[name] = float(value)
            elif t == "bool":
                kwargs[name] = value == "True"
            else:
                kwargs[name] = value
        out.append(BenchReport(**kwargs))
    return out
