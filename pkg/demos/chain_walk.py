"""Every recipient's messages form a chain that clients walk through Link headers.

Nothing is removed when it is read, so any number of readers can replay
the chain from the newest message back to the oldest or the other way round.
"""

from httpmailbox import InnerHttpMessage, MailboxClient, MailboxEndpoint, MailboxServer, MessagePayload, ServerConfig
from httpmailbox.codec import format_link_header

server = MailboxServer(ServerConfig(bind="127.0.0.1:0"))
with server.run_in_thread(), MailboxClient(MailboxEndpoint(server.url)) as client:
    for day in ("mon", "tue", "wed", "thu"):
        note = InnerHttpMessage.request("POST", "/diary", (("Host", "diary.example"),), day.encode())
        client.send("diary", MessagePayload.single(note))

    print("newest first:")
    for msg in client.iterate_chain("diary"):
        print(f"  {msg.messages[0].body.decode()}  {msg.message_uri}")

    print("oldest first:")
    start = client.requests_made
    for msg in client.iterate_chain("diary", forward=True):
        print(f"  {msg.messages[0].body.decode()}")
    print(f"  ({client.requests_made - start} GETs for 4 messages)")

    oldest = next(client.iterate_chain("diary", forward=True))
    print("Link header on the oldest message:")
    for part in format_link_header(oldest.links).split(", "):
        print("  ", part)
