"""Fan-out without the sender knowing its audience.

A publisher posts a batch of updates once, as a single pipelined entity, to
a shared group identifier. Each subscriber pulls the batch on its own
schedule. The cost model counts the HTTP request/response cycles spent,
compared with the publisher pushing each update to each subscriber itself.
"""

from httpmailbox import InnerHttpMessage, MailboxClient, MailboxEndpoint, MailboxServer, MessagePayload, ServerConfig
from httpmailbox.costbench import CostParams, cycles_http, cycles_mailbox, cycles_mailbox_pipelined

GROUP = "urn:group:weather"
SUBSCRIBERS = ["ann", "raj", "li", "omar", "zoe"]
UPDATES = [f"{city}: {temp}C" for city, temp in [("Norfolk", 14), ("Oslo", 3), ("Lima", 22), ("Pune", 31)]]

server = MailboxServer(ServerConfig(bind="127.0.0.1:0"))
with server.run_in_thread():
    endpoint = MailboxEndpoint(server.url)
    with MailboxClient(endpoint) as publisher:
        batch = [InnerHttpMessage.request("PUT", f"/weather/{i}", (), u.encode()) for i, u in enumerate(UPDATES)]
        publisher.send(GROUP, MessagePayload.pipeline(batch), sender="http://weather.example/")
        spent = publisher.requests_made

    for name in SUBSCRIBERS:
        with MailboxClient(endpoint) as sub:
            got = sub.retrieve_latest(GROUP)
            spent += sub.requests_made
            print(f"{name:>5} got {len(got.messages)} updates: {', '.join(m.body.decode() for m in got.messages)}")

p = CostParams(messages=len(UPDATES), recipients=len(SUBSCRIBERS), pipelines=1)
print(f"\ncycles actually used: {spent}")
print(f"direct push, one cycle per update per subscriber: {cycles_http(p)}")
print(f"mailbox, one entity per update: {cycles_mailbox(p)}")
print(f"mailbox, one pipelined entity: {cycles_mailbox_pipelined(p)}")
