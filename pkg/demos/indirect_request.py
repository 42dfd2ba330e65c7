"""Alice edits a task on Bob's server without either side ever reaching the other directly.

Alice drops a PATCH into the mailbox addressed to Bob's task collection.
Bob's server picks it up whenever it likes, applies it, and drops the
response into Alice's mailbox, where she finds it later.
"""

from httpmailbox import InnerHttpMessage, MailboxClient, MailboxEndpoint, MailboxServer, MessagePayload, ServerConfig

TASKS = "http://example.com/tasks"
ALICE = "http://example.org/alice"

server = MailboxServer(ServerConfig(bind="127.0.0.1:0"))
with server.run_in_thread():
    endpoint = MailboxEndpoint(server.url)
    tasks = {1: {"title": "Write a paper.", "priority": "HIGH", "status": "Open"}}

    with MailboxClient(endpoint) as alice:
        patch = InnerHttpMessage.request(
            "PATCH", "/tasks/1", (("Host", "example.com"), ("Content-Type", "text/task-patch")), b"Status=Done"
        )
        where = alice.send(TASKS, MessagePayload.single(patch), sender=ALICE)
        print("Alice's PATCH is stored at", where)

    with MailboxClient(endpoint) as bob:
        incoming = bob.retrieve_latest(TASKS)
        print("Bob's server sees:", incoming.via)
        request = incoming.messages[0]
        print(f"  {request.method} {request.target}  body={request.body!r}")
        task = tasks[int(request.target.rsplit("/", 1)[1])]
        task["status"] = request.body.decode().split("=", 1)[1]
        text = f"({task['status']}) [{task['priority']}] {task['title']}".encode()
        answer = InnerHttpMessage.response(200, "OK", (("Content-Type", "text/plain"),), text)
        bob.respond(incoming, MessagePayload.single(answer), responder=TASKS)

    with MailboxClient(endpoint) as alice:
        reply = alice.retrieve_latest(ALICE)
        print("Alice later finds a reply from", reply.via.on_behalf_of)
        print(" ", reply.messages[0].status, reply.messages[0].body.decode())
