"""Synthetic DNS-like trace generator.

    python -m pandora.stdlib.trace --records 10000 --seed 7 --out trace.txt

Output lines are ``ts src dst proto k=v ...``.  Most traffic is UDP queries
and responses; a share goes over TCP, a share of queries is never answered
or answered too late, some responses are unsolicited, and ICMP noise without
DNS fields is mixed in.
"""

from __future__ import annotations

import argparse
import random
import sys

NAMES = ("example.com", "example.org", "mirror.example.net", "ntp.example.com",
         "mail.example.org", "cdn.example.net", "www.example.com", "api.example.org")


def generate_trace(records: int, seed: int = 0, clients: int = 40, servers: int = 4,
                   late_fraction: float = 0.02, lost_fraction: float = 0.05,
                   unsolicited_fraction: float = 0.01, icmp_fraction: float = 0.03,
                   tcp_fraction: float = 0.1) -> list[str]:
    """Exactly ``records`` lines, sorted by timestamp, fully determined by ``seed``."""
    rng = random.Random(seed)
    client_ips = [f"10.0.{i // 250}.{i % 250 + 1}" for i in range(clients)]
    server_ips = [f"192.168.1.{i + 1}" for i in range(servers)]
    rows: list[tuple[float, int, str]] = []
    t = 0.0
    n = 0
    while len(rows) < records:
        t += rng.expovariate(200.0)
        roll = rng.random()
        if roll < icmp_fraction:
            src, dst = rng.choice(client_ips), rng.choice(server_ips)
            rows.append((t, n, f"{src} {dst} icmp type=8"))
            n += 1
            continue
        proto = "tcp" if rng.random() < tcp_fraction else "udp"
        client = f"{rng.choice(client_ips)}:{rng.randrange(1024, 65536)}"
        server = f"{rng.choice(server_ips)}:53"
        qid = rng.randrange(65536)
        qname = rng.choice(NAMES)
        if roll < icmp_fraction + unsolicited_fraction:
            rows.append((t, n, f"{server} {client} {proto} qid={qid} qname={qname} is_response=true"))
            n += 1
            continue
        rows.append((t, n, f"{client} {server} {proto} qid={qid} qname={qname} is_response=false"))
        n += 1
        fate = rng.random()
        if fate < lost_fraction:
            continue
        if fate < lost_fraction + late_fraction:
            delay = 6.0 + rng.random() * 4.0
        else:
            delay = rng.expovariate(1 / 0.03)
        rows.append((t + delay, n, f"{server} {client} {proto} qid={qid} qname={qname} is_response=true"))
        n += 1
    rows.sort()
    return [f"{ts:.6f} {body}" for ts, _, body in rows[:records]]


def write_trace(path, records: int, seed: int = 0, **kw) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in generate_trace(records, seed, **kw):
            fh.write(line + "\n")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m pandora.stdlib.trace",
                                 description="Generate a synthetic DNS-like text trace.")
    ap.add_argument("--records", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="-", help="output file, '-' for stdout")
    args = ap.parse_args(argv)
    lines = generate_trace(args.records, args.seed)
    if args.out == "-":
        sys.stdout.write("".join(line + "\n" for line in lines))
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.writelines(line + "\n" for line in lines)
    return 0


if __name__ == "__main__":
    sys.exit(main())
