import os
import random
import uuid
from datetime import datetime, timezone

import pytest
from hypothesis import settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, rule

from httpmailbox.codec import Kind, MediaType
from httpmailbox.store import FileLogStore, MemoryStore, NewMessage, StorageFailure, UnknownId, open_store


def new(body=b"x", sender="http://example.org/alice"):
    return NewMessage(sender, "127.0.0.1", MediaType.MESSAGE_HTTP, Kind.REQUEST, body)


@pytest.fixture(params=["memory", "file"])
def store(request, tmp_path):
    s = MemoryStore() if request.param == "memory" else FileLogStore(tmp_path / "log")
    yield s
    s.close()


def test_first_append(store):
    mid = store.append("R", new())
    msg = store.get_by_id(mid)
    assert msg.seq == 1 and not msg.deleted
    assert str(uuid.UUID(mid)) == mid
    n = store.neighbors(mid)
    assert (n.first, n.last, n.prev, n.next) == (mid, mid, None, None)


def test_sequential_appends(store):
    ids = [store.append("R", new(bytes([i]))) for i in range(3)]
    assert [store.get_by_id(i).seq for i in ids] == [1, 2, 3]
    assert store.latest("R").id == ids[2]


def test_independent_chains(store):
    a = store.append("http://example.com/tasks", new(b"patch"))
    b = store.append("http://example.org/alice", new(b"done", "http://example.com/tasks"))
    assert store.latest("http://example.com/tasks").id == a
    assert store.latest("http://example.org/alice").id == b
    assert store.get_by_id(b).seq == 1
    assert store.chain_length("http://example.com/tasks") == 1


def test_latest_skips_deleted(store):
    assert store.latest("R") is None
    m1 = store.append("R", new(b"1"))
    m2 = store.append("R", new(b"2"))
    assert store.latest("R").id == m2
    assert store.soft_delete(m2) is True
    assert store.latest("R").id == m1
    assert store.soft_delete(m2) is False
    assert store.soft_delete(m1) is True
    assert store.latest("R") is None
    assert store.chain_length("R") == 2


def test_get_by_id(store):
    assert store.get_by_id(str(uuid.uuid4())) is None
    body = bytes(range(256)) * 3
    mid = store.append("R", new(body))
    got = store.get_by_id(mid)
    assert got.body == body and got.recipient == "R" and got.sender_uri == "http://example.org/alice"
    store.soft_delete(mid)
    got = store.get_by_id(mid)
    assert got.deleted and got.body == body


def test_neighbors_middle_and_unknown(store):
    ids = [store.append("R", new()) for _ in range(3)]
    n = store.neighbors(ids[1])
    assert (n.first, n.last, n.prev, n.next, n.self) == (ids[0], ids[2], ids[0], ids[2], ids[1])
    store.soft_delete(ids[1])
    assert store.neighbors(ids[2]).prev == ids[1]
    with pytest.raises(UnknownId):
        store.neighbors(str(uuid.uuid4()))


def test_delete_unknown(store):
    assert store.soft_delete(str(uuid.uuid4())) is False


def test_received_at_is_whole_seconds(store):
    mid = store.append("R", new())
    t = store.get_by_id(mid).received_at
    assert t.microsecond == 0 and t.tzinfo is not None
    fixed = datetime(2012, 12, 20, 2, 22, 56, 999, tzinfo=timezone.utc)
    mid = store.append("R", NewMessage("u:x", "h", MediaType.MESSAGE_HTTP, None, b"", fixed))
    assert store.get_by_id(mid).received_at == fixed.replace(microsecond=0)


@pytest.mark.parametrize("bad", ["", "a b", "tab\there", "nl\n"])
def test_bad_recipient(store, bad):
    with pytest.raises(ValueError):
        store.append(bad, new())


def test_latest_matches_brute_force_on_long_chain(store):
    rng = random.Random(7)
    ids = []
    deleted = set()
    for i in range(1000):
        ids.append(store.append("R", new(str(i).encode())))
        if rng.random() < 0.3:
            victim = rng.choice(ids)
            store.soft_delete(victim)
            deleted.add(victim)
    expected = next((i for i in reversed(ids) if i not in deleted), None)
    assert store.latest("R").id == expected
    # walking prev from last reaches first in chain_length steps, seq strictly decreasing
    cur, seqs = ids[-1], []
    while cur is not None:
        seqs.append(store.get_by_id(cur).seq)
        cur = store.neighbors(cur).prev
    assert seqs == list(range(1000, 0, -1))


class ChainModel(RuleBasedStateMachine):
    """Replays random appends/deletes against a plain list model."""

    backend = "memory"

    def __init__(self):
        super().__init__()
        if self.backend == "memory":
            self.store = MemoryStore()
        else:
            import tempfile

            self.tmp = tempfile.TemporaryDirectory()
            self.store = FileLogStore(os.path.join(self.tmp.name, "log"))
        self.model: dict[str, list[list]] = {}

    @rule(recipient=st.sampled_from(["a", "b", "http://example.com/x"]), body=st.binary(max_size=64))
    def append(self, recipient, body):
        mid = self.store.append(recipient, new(body))
        self.model.setdefault(recipient, []).append([mid, body, False])

    @rule(data=st.data())
    def delete(self, data):
        entries = [e for chain in self.model.values() for e in chain]
        if not entries:
            return
        e = data.draw(st.sampled_from(entries))
        assert self.store.soft_delete(e[0]) is (not e[2])
        e[2] = True

    @rule()
    def reopen(self):
        if self.backend == "file":
            path = self.store.path
            self.store.close()
            self.store = FileLogStore(path)

    @invariant()
    def matches_model(self):
        for recipient, chain in self.model.items():
            assert self.store.chain_length(recipient) == len(chain)
            live = [e for e in chain if not e[2]]
            got = self.store.latest(recipient)
            assert (got.id if got else None) == (live[-1][0] if live else None)
            for i, (mid, body, deleted) in enumerate(chain):
                msg = self.store.get_by_id(mid)
                assert (msg.seq, msg.body, msg.deleted) == (i + 1, body, deleted)
                n = self.store.neighbors(mid)
                assert n.prev == (chain[i - 1][0] if i else None)
                assert n.next == (chain[i + 1][0] if i + 1 < len(chain) else None)

    def teardown(self):
        self.store.close()
        if self.backend == "file":
            self.tmp.cleanup()


class FileChainModel(ChainModel):
    backend = "file"


TestMemoryChain = ChainModel.TestCase
TestMemoryChain.settings = settings(max_examples=40, stateful_step_count=30, deadline=None)
TestFileChain = FileChainModel.TestCase
TestFileChain.settings = settings(max_examples=40, stateful_step_count=30, deadline=None)


# -- file log specifics ----------------------------------------------------------


def test_file_log_reopen(tmp_path):
    path = tmp_path / "log"
    with FileLogStore(path) as s:
        ids = [s.append("R", new(os.urandom(100))) for _ in range(5)]
        bodies = [s.get_by_id(i).body for i in ids]
        s.soft_delete(ids[1])
    with FileLogStore(path) as s:
        assert [s.get_by_id(i).body for i in ids] == bodies
        assert s.get_by_id(ids[1]).deleted
        assert s.latest("R").id == ids[-1]
        assert s.recovered_bytes_dropped == 0
        new_id = s.append("R", new(b"after"))
        assert s.get_by_id(new_id).seq == 6


@pytest.mark.parametrize("cut", [1, 7, 8, 20, 60])
def test_truncated_tail_is_dropped(tmp_path, cut):
    path = tmp_path / "log"
    with FileLogStore(path) as s:
        keep = [s.append("R", new(b"keep%d" % i)) for i in range(3)]
        size_before = os.path.getsize(path)
        lost = s.append("R", new(b"y" * 40))
    full = os.path.getsize(path)
    with open(path, "r+b") as fh:
        fh.truncate(full - cut)
    with FileLogStore(path) as s:
        assert s.get_by_id(lost) is None
        assert [s.get_by_id(i).body for i in keep] == [b"keep0", b"keep1", b"keep2"]
        assert s.recovered_bytes_dropped == full - cut - size_before
    assert os.path.getsize(path) == size_before


def test_garbage_tail_is_dropped(tmp_path):
    path = tmp_path / "log"
    with FileLogStore(path) as s:
        mid = s.append("R", new(b"ok"))
    good = os.path.getsize(path)
    with open(path, "ab") as fh:
        fh.write((12).to_bytes(8, "big") + b"\x00\x00\x00\x08not json")
    with FileLogStore(path) as s:
        assert s.get_by_id(mid).body == b"ok"
        assert s.chain_length("R") == 1
    assert os.path.getsize(path) == good


def test_write_failure_leaves_nothing_visible(tmp_path, monkeypatch):
    s = FileLogStore(tmp_path / "log")
    s.append("R", new(b"fine"))

    def broken(*a):
        raise OSError("disk full")

    monkeypatch.setattr(os, "pwrite", broken)
    with pytest.raises(StorageFailure):
        s.append("R", new(b"lost"))
    monkeypatch.undo()
    assert s.chain_length("R") == 1
    assert s.latest("R").body == b"fine"
    s.close()


def test_open_store(tmp_path):
    assert isinstance(open_store("memory"), MemoryStore)
    fs = open_store(f"file:{tmp_path / 'x' / 'log'}")
    assert isinstance(fs, FileLogStore)
    fs.close()
    with pytest.raises(ValueError):
        open_store("redis://")
