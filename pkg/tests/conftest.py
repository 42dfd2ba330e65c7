import contextlib
import subprocess
import sys
import time

import pytest

from httpmailbox.client import MailboxClient, MailboxEndpoint
from httpmailbox.server import MailboxApp, MailboxServer, ServerConfig
from httpmailbox.store import MemoryStore

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def app():
    return MailboxApp(ServerConfig(public_base_uri="http://example.net/"), MemoryStore())


@pytest.fixture
def live_server():
    server = MailboxServer(ServerConfig(bind="127.0.0.1:0"), MemoryStore())
    with server.run_in_thread():
        yield server


@pytest.fixture
def client(live_server):
    with MailboxClient(MailboxEndpoint(live_server.url)) as c:
        yield c


@contextlib.contextmanager
def spawn_server(*args, timeout=20.0):
    """Run ``hm serve`` in a child process; yields (process, base URL)."""
    proc = subprocess.Popen(
        [sys.executable, "-m", "httpmailbox", "serve", "--bind", "127.0.0.1:0", *args],
        stdout=subprocess.PIPE,
        text=True,
    )
    try:
        deadline = time.monotonic() + timeout
        line = proc.stdout.readline()
        if not line.startswith("listening on ") or time.monotonic() > deadline:
            raise RuntimeError(f"server failed to start: {line!r}")
        yield proc, line.split()[-1]
    finally:
        if proc.poll() is None:
            proc.kill()
        proc.wait()
        proc.stdout.close()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
