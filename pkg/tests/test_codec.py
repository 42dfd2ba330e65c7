import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from httpmailbox import codec
from httpmailbox.codec import (
    BodyLengthMismatch,
    ChainLinks,
    EmptyPipeline,
    EntityTooLarge,
    HeaderSyntax,
    InnerHttpMessage,
    InvariantViolation,
    Kind,
    KindMismatch,
    LinkSyntax,
    MalformedStartLine,
    MediaType,
    MessagePayload,
    UnsupportedMediaType,
    ViaInfo,
    ViaSyntax,
    format_link_header,
    format_via,
    parse_content_type,
    parse_inner_message,
    parse_link_header,
    parse_pipeline,
    parse_via,
    serialize_inner_message,
)

import generators
from wire_samples import FRIEND_REQUEST_VIA, RETRIEVED_PATCH_LINK, RETRIEVED_PATCH_VIA, TASK_DONE, TASK_PATCH


def test_parse_task_patch():
    msg = parse_inner_message(TASK_PATCH, Kind.REQUEST)
    assert msg.kind is Kind.REQUEST
    assert (msg.method, msg.target, msg.version) == ("PATCH", "/tasks/1", "HTTP/1.1")
    assert msg.headers == (
        ("Host", "example.com"),
        ("Content-Type", "text/task-patch"),
        ("Content-Length", "11"),
    )
    assert msg.body == b"Status=Done"
    assert len(TASK_PATCH) == 108


def test_parse_minimal_response():
    msg = parse_inner_message(b"HTTP/1.1 200 OK\r\nContent-Length: 0\r\n\r\n")
    assert (msg.kind, msg.status, msg.reason, msg.body) == (Kind.RESPONSE, 200, "OK", b"")
    assert msg.method is None and msg.target is None


def test_serialize_task_done_is_93_bytes():
    msg = InnerHttpMessage.response(
        200, "OK", [("Content-Type", "text/plain"), ("Content-Length", "28")], b"(Done) [HIGH] Write a paper."
    )
    out = serialize_inner_message(msg)
    assert out == TASK_DONE
    assert len(out) == 93


def test_serialize_empty_body_has_no_length():
    msg = InnerHttpMessage.request("DELETE", "/tasks/1", [("Host", "example.com")])
    assert serialize_inner_message(msg) == b"DELETE /tasks/1 HTTP/1.1\r\nHost: example.com\r\n\r\n"


def test_serialize_adds_missing_content_length():
    msg = InnerHttpMessage(Kind.REQUEST, method="PUT", target="/x", body=b"abc")
    assert serialize_inner_message(msg).endswith(b"Content-Length: 3\r\n\r\nabc")


def test_bare_lf_accepted():
    msg = parse_inner_message(TASK_PATCH.replace(b"\r\n", b"\n"))
    assert msg.body == b"Status=Done"
    assert msg.header("content-type") == "text/task-patch"


def test_folded_header_is_unfolded():
    msg = parse_inner_message(b"GET / HTTP/1.1\r\nX-Long: one\r\n  two\r\n\ttwo-b\r\n\r\n")
    assert msg.header("X-Long") == "one two two-b"


@pytest.mark.parametrize(
    "data, error",
    [
        (b"PATCH /tasks/1\r\n\r\n", MalformedStartLine),
        (b"HTTP/1.1 2000 OK\r\n\r\n", MalformedStartLine),
        (b"GET / HTTP/1.1\r\nNo colon here\r\n\r\n", HeaderSyntax),
        (b"GET / HTTP/1.1\r\nBad Name: x\r\n\r\n", HeaderSyntax),
        (b"GET / HTTP/1.1\r\nHost: x\r\n", HeaderSyntax),
        (b"PUT / HTTP/1.1\r\nContent-Length: 5\r\n\r\nabc", BodyLengthMismatch),
        (b"PUT / HTTP/1.1\r\nContent-Length: 2\r\n\r\nabc", BodyLengthMismatch),
        (b"PUT / HTTP/1.1\r\nContent-Length: 1\r\nContent-Length: 2\r\n\r\nab", BodyLengthMismatch),
        (b"PUT / HTTP/1.1\r\nTransfer-Encoding: chunked\r\n\r\n3\r\nabc\r\n0\r\n\r\n", HeaderSyntax),
    ],
)
def test_parse_errors(data, error):
    with pytest.raises(error):
        parse_inner_message(data)


def test_kind_mismatch():
    with pytest.raises(KindMismatch):
        parse_inner_message(TASK_PATCH, Kind.RESPONSE)
    with pytest.raises(KindMismatch):
        parse_inner_message(TASK_DONE, Kind.REQUEST)


def test_entity_limit():
    with pytest.raises(EntityTooLarge):
        parse_inner_message(TASK_PATCH, max_bytes=100)
    assert parse_inner_message(TASK_PATCH, max_bytes=108).body == b"Status=Done"


def test_serialize_rejects_invalid():
    with pytest.raises(InvariantViolation):
        serialize_inner_message(InnerHttpMessage(Kind.REQUEST, method="GET", target=None))
    with pytest.raises(InvariantViolation):
        serialize_inner_message(InnerHttpMessage(Kind.RESPONSE, status=99))
    with pytest.raises(InvariantViolation):
        serialize_inner_message(
            InnerHttpMessage(Kind.REQUEST, method="PUT", target="/", headers=(("Content-Length", "4"),), body=b"abc")
        )
    with pytest.raises(InvariantViolation):
        serialize_inner_message(InnerHttpMessage(Kind.REQUEST, method="GET", target="/", headers=(("a b", "x"),)))


@settings(max_examples=300)
@given(generators.messages)
def test_round_trip(msg):
    wire = serialize_inner_message(msg)
    back = parse_inner_message(wire)
    assert back == msg
    assert serialize_inner_message(back) == wire


@settings(max_examples=100)
@given(generators.seeds)
def test_content_length_soundness(seed):
    rng = random.Random(seed)
    msg = InnerHttpMessage(Kind.REQUEST, method="POST", target="/", body=rng.randbytes(rng.randint(1, 500)))
    back = parse_inner_message(serialize_inner_message(msg))
    assert int(back.header("Content-Length")) == len(msg.body)


def test_random_corpus_of_64():
    rng = random.Random(64)
    corpus = [generators.random_request(rng) for _ in range(64)]
    for msg in corpus:
        assert parse_inner_message(serialize_inner_message(msg), Kind.REQUEST) == msg


# -- pipelines -----------------------------------------------------------------


def test_pipeline_of_three_patches():
    msgs = [
        InnerHttpMessage.request("PATCH", f"/tasks/{i}", [("Host", "example.com")], f"Status=Done{i}".encode())
        for i in range(3)
    ]
    data = b"".join(serialize_inner_message(m) for m in msgs)
    payload = parse_pipeline(data, Kind.REQUEST)
    assert payload.media_type is MediaType.APPLICATION_HTTP
    assert payload.messages == tuple(msgs)
    assert payload.raw == data


def test_pipeline_of_one():
    assert len(parse_pipeline(TASK_PATCH).messages) == 1


def test_pipeline_missing_length_is_framing_error():
    first = b"PUT /a HTTP/1.1\r\nHost: x\r\n\r\nsome body"
    second = serialize_inner_message(InnerHttpMessage.request("PUT", "/b", body=b"x"))
    with pytest.raises(BodyLengthMismatch):
        parse_pipeline(first + second)
    with pytest.raises(BodyLengthMismatch):
        parse_pipeline(first)


def test_pipeline_without_bodies_needs_no_length():
    data = b"GET /a HTTP/1.1\r\nHost: x\r\n\r\nGET /b HTTP/1.1\r\nHost: x\r\n\r\n"
    assert [m.target for m in parse_pipeline(data).messages] == ["/a", "/b"]


def test_pipeline_errors():
    with pytest.raises(EmptyPipeline):
        parse_pipeline(b"")
    with pytest.raises(KindMismatch):
        parse_pipeline(TASK_PATCH + TASK_DONE)
    with pytest.raises(KindMismatch):
        parse_pipeline(TASK_PATCH, Kind.RESPONSE)
    with pytest.raises(KindMismatch):
        MessagePayload.pipeline([parse_inner_message(TASK_PATCH), parse_inner_message(TASK_DONE)])


@settings(max_examples=60)
@given(generators.seeds, st.integers(min_value=1, max_value=64))
def test_pipeline_framing(seed, k):
    rng = random.Random(seed)
    msgs = [generators.random_request(rng) for _ in range(k)]
    payload = MessagePayload.pipeline(msgs)
    parsed = parse_pipeline(payload.raw, Kind.REQUEST)
    assert parsed.messages == tuple(msgs)


# -- Content-Type ----------------------------------------------------------------

CONTENT_TYPES = [
    ("message/http; msgtype: request", (MediaType.MESSAGE_HTTP, Kind.REQUEST)),
    ("message/http; msgtype=response", (MediaType.MESSAGE_HTTP, Kind.RESPONSE)),
    ("application/http", (MediaType.APPLICATION_HTTP, None)),
    ('Application/HTTP; msgtype="request"', (MediaType.APPLICATION_HTTP, Kind.REQUEST)),
    ("message/http;msgtype:response", (MediaType.MESSAGE_HTTP, Kind.RESPONSE)),
    ("text/plain", UnsupportedMediaType),
    ("message/http; msgtype=reply", UnsupportedMediaType),
    ("multipart/mixed; boundary=x", UnsupportedMediaType),
]


@pytest.mark.parametrize("value, expected", CONTENT_TYPES)
def test_parse_content_type(value, expected):
    if isinstance(expected, type):
        with pytest.raises(expected):
            parse_content_type(value)
    else:
        assert parse_content_type(value) == expected


@pytest.mark.parametrize("kind", ["request", "response"])
def test_msgtype_spellings_agree(kind):
    assert parse_content_type(f"message/http; msgtype: {kind}") == parse_content_type(f"message/http; msgtype={kind}")


def test_content_type_emission_is_standard():
    assert codec.format_content_type(MediaType.MESSAGE_HTTP, Kind.REQUEST) == "message/http; msgtype=request"
    assert codec.format_content_type(MediaType.APPLICATION_HTTP, None) == "application/http"


def test_decode_payload():
    payload = codec.decode_payload("message/http; msgtype: request", TASK_PATCH)
    assert payload.messages[0].method == "PATCH"
    assert payload.raw == TASK_PATCH
    with pytest.raises(KindMismatch):
        codec.decode_payload("message/http; msgtype: response", TASK_PATCH)
    with pytest.raises(BodyLengthMismatch):
        codec.decode_payload("message/http", TASK_PATCH + TASK_PATCH)
    assert len(codec.decode_payload("application/http", TASK_PATCH + TASK_PATCH).messages) == 2


# -- Via ---------------------------------------------------------------------------


def test_format_via():
    v = ViaInfo("127.0.0.1", "http://example.org/alice", "http://example.net/")
    assert format_via(v) == (
        "sent by 127.0.0.1 on behalf of http://example.org/alice delivered by http://example.net/"
    )


def test_parse_capitalized_via():
    assert parse_via(RETRIEVED_PATCH_VIA) == ViaInfo("127.0.0.1", "http://example.org/alice", "http://example.net/")


def test_parse_folded_via_with_trailing_comma():
    head = codec.parse_head(b"HTTP/1.1 200 OK\r\nVia: " + FRIEND_REQUEST_VIA.encode())
    assert parse_via(head.header("Via")) == ViaInfo(
        "68.225.179.9", "http://arxiv.cs.odu.edu/rems/arxiv-0801-4807v1.xml", "http://hm.cs.odu.edu/hm/"
    )


@pytest.mark.parametrize(
    "text",
    [
        "by 127.0.0.1 on behalf of http://a/ delivered by http://b/",
        "sent by 127.0.0.1 on behalf of alice delivered by http://b/",
        "sent by 127.0.0.1 delivered by http://b/",
        "1.1 proxy.example",
    ],
)
def test_parse_via_errors(text):
    with pytest.raises(ViaSyntax):
        parse_via(text)


def test_format_via_rejects_relative():
    with pytest.raises(ViaSyntax):
        format_via(ViaInfo("h", "/alice", "http://b/"))


def test_via_round_trip_100():
    rng = random.Random(100)
    for _ in range(100):
        v = generators.random_via(rng)
        assert parse_via(format_via(v)) == v
        assert parse_via(format_via(v).replace("sent by", "SENT BY", 1)) == v


# -- Link --------------------------------------------------------------------------


def test_link_header_for_last_of_three():
    links = ChainLinks(
        current="http://example.net/hm/http://example.com/tasks",
        self="http://example.net/hm/id/5ecb44e0",
        first="http://example.net/hm/id/aebed6e9",
        last="http://example.net/hm/id/5ecb44e0",
        previous="http://example.net/hm/id/85addc19",
    )
    assert format_link_header(links) == RETRIEVED_PATCH_LINK
    assert parse_link_header(RETRIEVED_PATCH_LINK) == links


def test_link_header_single_message():
    links = ChainLinks(current="http://m/hm/r", self="http://m/hm/id/1", first="http://m/hm/id/1", last="http://m/hm/id/1")
    text = format_link_header(links)
    assert text == '<http://m/hm/r>; rel="current", <http://m/hm/id/1>; rel="first last self"'
    rels = codec.parse_link_relations(text)
    assert set(rels) == {"current", "first", "last", "self"}


def test_link_parse_is_order_insensitive():
    text = '<http://m/id/2>; rel="self last", <http://m/r>; rel=current, <http://m/id/1>; rel="previous first"'
    links = parse_link_header(text)
    assert (links.self, links.first, links.previous, links.next) == ("http://m/id/2", "http://m/id/1", "http://m/id/1", None)


@pytest.mark.parametrize(
    "text",
    [
        '<http://m/id/1>; rel="self first last"',
        'http://m/id/1; rel="current"',
        '<http://m/r>; rel="current", <http://m/id/2>; rel="self", <http://m/id/1>; rel="first last"',
    ],
)
def test_link_errors(text):
    with pytest.raises(LinkSyntax):
        parse_link_header(text)


@settings(max_examples=300)
@given(generators.chain_links)
def test_link_round_trip(links):
    assert parse_link_header(format_link_header(links)) == links


@settings(max_examples=100)
@given(generators.vias)
def test_via_round_trip(v):
    assert parse_via(format_via(v)) == v


def test_http_date():
    from datetime import datetime, timezone

    dt = datetime(2012, 12, 20, 2, 22, 56, tzinfo=timezone.utc)
    assert codec.format_http_date(dt) == "Thu, 20 Dec 2012 02:22:56 GMT"
    assert codec.parse_http_date("Thu, 20 Dec 2012 02:22:56 GMT") == dt
