"""``hm`` command line: serve, send, get, chain, bench.

Every ``serve`` flag can also come from an environment variable
(``HM_BIND``, ``HM_BASE``, ``HM_PUBLIC_URI``, ``HM_STORE``,
``HM_MAX_ENTITY``, ``HM_NO_CORS``); a flag given on the command line wins.
Client commands read the service URL from ``--url`` or ``HM_URL``.
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import os
import sys

from . import codec, costbench
from .client import MailboxClient, MailboxEndpoint, MailboxError, SendRejected
from .server import MailboxServer, ServerConfig

DEFAULT_URL = "http://127.0.0.1:8080/"


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "").lower() in ("1", "true", "yes", "on")


def build_parser() -> argparse.ArgumentParser:
    env = os.environ.get
    p = argparse.ArgumentParser(prog="hm", description="HTTP Mailbox service and client")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run a mailbox server")
    s.add_argument("--bind", default=env("HM_BIND", "127.0.0.1:8080"), help="host:port (port 0 picks one)")
    s.add_argument("--base", default=env("HM_BASE", "/hm/"), help="HM-Base path prefix")
    s.add_argument("--public-uri", default=env("HM_PUBLIC_URI"), help="absolute URI clients reach us at")
    s.add_argument("--store", default=env("HM_STORE", "memory"), help="memory | file:<path>")
    s.add_argument("--max-entity", type=int, default=int(env("HM_MAX_ENTITY", codec.DEFAULT_MAX_ENTITY)))
    s.add_argument("--no-cors", action="store_true", default=_env_flag("HM_NO_CORS"))

    def client_args(sp):
        sp.add_argument("--url", default=env("HM_URL", DEFAULT_URL), help="mailbox service URI")
        sp.add_argument("--base", default=None, help="HM-Base (discovered from the service if omitted)")

    c = sub.add_parser("send", help="send an HTTP message entity")
    client_args(c)
    c.add_argument("--to", required=True, help="recipient identifier")
    c.add_argument("--sender", default=None, help="HM-Sender URI")
    c.add_argument("--file", required=True, help="file holding the raw HTTP message(s); '-' for stdin")
    c.add_argument("--pipeline", action="store_true", help="send as application/http")

    g = sub.add_parser("get", help="retrieve one message")
    client_args(g)
    which = g.add_mutually_exclusive_group(required=True)
    which.add_argument("--recipient")
    which.add_argument("--uri")

    ch = sub.add_parser("chain", help="walk a recipient's message chain")
    client_args(ch)
    ch.add_argument("--recipient", required=True)
    ch.add_argument("--forward", action="store_true", help="oldest first")

    b = sub.add_parser("bench", help="stress a running mailbox")
    b.add_argument("--mode", choices=["send", "get"], default="send")
    b.add_argument("--url", default=env("HM_URL", DEFAULT_URL))
    b.add_argument("--base", default="/hm/")
    b.add_argument("--concurrency", type=int, default=1)
    b.add_argument("--requests", type=int, default=None, help="default: 10 x concurrency")
    b.add_argument("--size", type=int, default=100_000, help="payload bytes")
    b.add_argument("--recipient", default="bench")
    b.add_argument("--no-seed", action="store_true", help="get mode: do not pre-seed the mailbox")
    b.add_argument("--csv", default=None, help="also write the report as CSV")
    return p


def _client(args) -> MailboxClient:
    if args.base:
        return MailboxClient(MailboxEndpoint(args.url, args.base))
    return MailboxClient.discover(args.url)


def _describe(msg, out=None) -> None:
    out = out or sys.stderr
    print(f"uri: {msg.message_uri}", file=out)
    print(f"memento-datetime: {codec.format_http_date(msg.memento_datetime)}", file=out)
    print(f"via: {codec.format_via(msg.via)}", file=out)
    print(f"link: {codec.format_link_header(msg.links)}", file=out)
    print(f"content-type: {msg.payload.content_type}", file=out)
    if msg.deleted:
        print("deleted: true", file=out)


def cmd_serve(args) -> int:
    config = ServerConfig(
        hm_base=args.base,
        public_base_uri=args.public_uri,
        max_entity_bytes=args.max_entity,
        bind=args.bind,
        store=args.store,
        cors_enabled=not args.no_cors,
    )
    server = MailboxServer(config)

    async def main():
        await server.start()
        print(f"listening on {server.local_url}", flush=True)
        await server.serve_forever()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    finally:
        server.store.close()
    return 0


def cmd_send(args) -> int:
    data = sys.stdin.buffer.read() if args.file == "-" else open(args.file, "rb").read()
    if args.pipeline:
        payload = codec.parse_pipeline(data)
    else:
        msg = codec.parse_inner_message(data)
        payload = codec.MessagePayload(codec.MediaType.MESSAGE_HTTP, msg.kind, (msg,), data)
    with _client(args) as client:
        uri = client.send(args.to, payload, args.sender)
    print(uri)
    return 0


def cmd_get(args) -> int:
    with _client(args) as client:
        msg = client.retrieve_latest(args.recipient) if args.recipient else client.retrieve_uri(args.uri)
    if msg is None:
        print("no messages", file=sys.stderr)
        return 1
    _describe(msg)
    sys.stdout.buffer.write(msg.body)
    return 0


def cmd_chain(args) -> int:
    count = 0
    with _client(args) as client:
        for msg in client.iterate_chain(args.recipient, forward=args.forward):
            count += 1
            _describe(msg)
            sys.stdout.buffer.write(msg.body)
            sys.stdout.buffer.flush()
    print(f"{count} message(s)", file=sys.stderr)
    return 0 if count else 1


def cmd_bench(args) -> int:
    cfg = costbench.BenchConfig(
        target=MailboxEndpoint(args.url, args.base),
        mode=costbench.SEND if args.mode == "send" else costbench.RETRIEVE,
        concurrency=args.concurrency,
        total_requests=args.requests,
        payload_bytes=args.size,
        recipient=args.recipient,
        seed=not args.no_seed,
    )
    try:
        report = costbench.run_bench(cfg)
    except costbench.TargetUnreachable as exc:
        print(f"target unreachable: {exc}", file=sys.stderr)
        report = exc.report
    sys.stdout.write(costbench.report_table([report]))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(costbench.reports_to_csv([report]))
    return 0 if report.valid else 2


COMMANDS = {
    "serve": cmd_serve,
    "send": cmd_send,
    "get": cmd_get,
    "chain": cmd_chain,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SendRejected as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (MailboxError, codec.CodecError, OSError, ValueError) as exc:
        print(f"hm: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
