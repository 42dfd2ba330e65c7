"""Load a mailbox at rising concurrency and watch mean time per request fall.

A fresh server process is started for every run so later runs do not pay
for memory the earlier ones filled. Payloads are the leading digits of pi.
Pass a payload size in bytes as the first argument (default 100000).
"""

import subprocess
import sys

from httpmailbox import costbench
from httpmailbox.client import MailboxEndpoint

size = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
reports = []
for mode in (costbench.SEND, costbench.RETRIEVE):
    for concurrency in (1, 10, 100):
        proc = subprocess.Popen([sys.executable, "-m", "httpmailbox", "serve", "--bind", "127.0.0.1:0"],
                                stdout=subprocess.PIPE, text=True)
        try:
            url = proc.stdout.readline().split()[-1]
            cfg = costbench.BenchConfig(MailboxEndpoint(url), mode=mode, concurrency=concurrency, payload_bytes=size)
            reports.append(costbench.run_bench(cfg))
        finally:
            proc.kill()
            proc.wait()

print(costbench.report_table(reports))
