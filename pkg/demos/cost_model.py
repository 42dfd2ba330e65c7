"""How many HTTP cycles does each delivery strategy spend?

M messages go to R recipients. Pushing directly costs M*R cycles. Going
through a mailbox costs one extra send per message, M*(R+1), which is at
worst twice the direct cost (a single recipient) and approaches the direct
cost as the audience grows. Packing the M messages into N pipelines cuts
that by a factor of M/N.
"""

from httpmailbox.costbench import CostParams, cycles_http, cycles_mailbox, cycles_mailbox_pipelined

print(f"{'M':>5} {'R':>5} {'N':>4} {'direct':>8} {'mailbox':>8} {'pipelined':>9} {'mailbox/direct':>15}")
for m, r, n in [(1, 1, 1), (10, 1, 10), (10, 5, 2), (10, 100, 1), (100, 1000, 10), (1000, 1, 1)]:
    p = CostParams(m, r, n)
    ratio = cycles_mailbox(p) / cycles_http(p)
    print(f"{m:>5} {r:>5} {n:>4} {cycles_http(p):>8} {cycles_mailbox(p):>8} "
          f"{cycles_mailbox_pipelined(p):>9} {ratio:>15.3f}")
