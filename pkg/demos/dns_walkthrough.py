"""DNS transaction reconstruction over a synthetic trace.

Generates a trace, loads the demo config with paths pointed at a scratch
directory, runs the ``dns`` stack in a kernel until the trace is consumed,
then looks at what the sensors and the transaction log say.

    python3 demos/dns_walkthrough.py [records] [seed]
"""

import sys
import tempfile
from collections import Counter
from pathlib import Path

from pandora import Kernel
from pandora.stdlib import demo_config, write_trace

records = int(sys.argv[1]) if len(sys.argv) > 1 else 10_000
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 7
work = Path(tempfile.mkdtemp(prefix="pandora-dns-"))

# %% trace
trace = work / "trace.txt"
write_trace(trace, records, seed=seed)
print(f"trace: {records} records in {trace}")
print("  first lines:")
for line in trace.read_text().splitlines()[:3]:
    print("   ", line)

# %% config
config = demo_config().replace('"trace.txt"', f'"{trace}"') \
    .replace('"transactions.log"', f'"{work / "transactions.log"}"')

kernel = Kernel()
print("stored:", ", ".join(kernel.load_config(config)))

# %% run
handle = kernel.start_stack("dns")
kernel.wait_exhausted(handle, timeout=120)
print(f"\n{handle} consumed the trace")

# one pair_matcher per protocol branch, created on first sight of the protocol
sensors = {s.name: s.value for s in kernel.sensors.snapshot("dns.")}
print(f"\n{'sensor':32} value")
for name, value in sorted(sensors.items()):
    print(f"{name:32} {value}")

branches = sorted({n.split("}")[0] + "}" for n in sensors if n.startswith("dns.pairs{")})
total = sum(sensors[f"{b}.{k}"] for b in branches for k in ("matched", "orphans", "pending"))
print(f"\nmatched + orphans + pending over {len(branches)} branches = {total} (records: {records})")

# %% transactions
log = (work / "transactions.log").read_text().splitlines()
print(f"\n{len(log)} transactions logged, e.g.\n   {log[0]}")
latencies = sorted(float(part.split("=")[1]) for line in log for part in line.split() if part.startswith("latency="))
print(f"latency median {latencies[len(latencies) // 2] * 1000:.1f} ms, "
      f"p99 {latencies[int(len(latencies) * 0.99)] * 1000:.1f} ms")
names = Counter(part.split("=")[1] for line in log for part in line.split() if part.startswith("qname="))
print("busiest names:", ", ".join(f"{n} ({c})" for n, c in names.most_common(3)))

kernel.shutdown()
print(f"\nfiles left in {work}")
