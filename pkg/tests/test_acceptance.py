"""Acceptance criteria, one check per criterion, each printing a PASS/FAIL line.

Run under pytest, or directly (``python3 tests/test_acceptance.py``) for
just the verdict lines.  Seeds are fixed so reruns see the same corpora.
"""

import random
import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from pandora import Event, Kernel, default_registry, instantiate, parse_config, parse_stack, render_stack
from pandora.adl import ComponentNode, StackDefinition
from pandora.bench import bench_sensor_vs_mop, bench_traversal_sweep
from pandora.control import ControlProtocol, parse_response
from pandora.core import Component, Exhausted
from pandora.errors import AdlSyntaxError, DuplicateAliasError
from pandora.kernel import Scope
from pandora.stdlib import demo_config, write_trace
from adl_reference import mutate, random_stack, reference_accepts

# tolerances
ROUND_TRIP_CASES = 500
MUTATION_CASES = 200
GRAMMAR_TIME_S = 10.0
DEMUX_KEYS = 100
DEMUX_MAX_EVENTS = 10_000
MAX_HOP_NS = 200.0
MAX_STDERR_PCT = 1.0
HOP_SPREAD = 0.20
TRAVERSAL_TIME_S = 120.0
MIN_SENSOR_RATIO = 5.0
SENSOR_TIME_S = 60.0
DEMO_RECORDS = 10_000


def verdict(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
    print(line, flush=True)
    return ok


# 1 ---------------------------------------------------------------------------

def check_grammar():
    t0 = time.monotonic()
    rng = random.Random(20031)
    round_trips = 0
    for _ in range(ROUND_TRIP_CASES):
        d = parse_stack(random_stack(rng))
        round_trips += parse_stack(render_stack(d)) == d
    agree = 0
    for _ in range(MUTATION_CASES):
        text = mutate(random_stack(rng), rng)
        try:
            parse_config(text)
            ours = True
        except DuplicateAliasError:
            ours = True
        except AdlSyntaxError:
            ours = False
        agree += ours == reference_accepts(text)
    elapsed = time.monotonic() - t0
    ok = round_trips == ROUND_TRIP_CASES and agree == MUTATION_CASES and elapsed < GRAMMAR_TIME_S
    return ok, (f"round-trip {round_trips}/{ROUND_TRIP_CASES}, mutation verdicts {agree}/{MUTATION_CASES}, "
                f"{elapsed:.1f}s")


# 2 ---------------------------------------------------------------------------

def check_demux():
    from conftest import Record
    from test_core import ByKey
    reg = default_registry()
    reg.register(ByKey)
    reg.register(Record)
    rng = random.Random(7)
    lengths = [DEMUX_MAX_EVENTS, 0, 1] + [rng.randrange(DEMUX_MAX_EVENTS) for _ in range(7)]
    bad = 0
    for n in lengths:
        keys = [f"k{rng.randrange(DEMUX_KEYS)}" for _ in range(n)]
        Record.log = []
        inst = instantiate(parse_stack("%s { @noop @by_key<@record:r> }"), reg)
        oracle, creations, routes = {}, [], []
        for key in keys:
            if key not in oracle:
                oracle[key] = len(oracle)
                creations.append(key)
            routes.append(f"r{{{key}}}")
            inst.inject(Event("e", {"key": key}))
        got_routes = [label for label, _ in Record.log]
        bad += list(inst.body[1].demux) != creations or got_routes != routes
    return bad == 0, f"{len(lengths)} sequences up to {DEMUX_MAX_EVENTS} events over {DEMUX_KEYS} keys, {bad} mismatches"


# 3 ---------------------------------------------------------------------------

class Producer(Component):
    """Produces ``limit`` events; before each one, compares downstream counters
    with the number already forwarded."""

    type_id = "producer"
    limit = 500
    probe = None

    def setup(self):
        self.sent = 0
        self.mismatches = 0

    def produce(self):
        if not Producer.probe(self.sent):
            self.mismatches += 1
        if self.sent == Producer.limit:
            raise Exhausted
        self.sent += 1
        return Event("pkt", {"proto": f"p{self.sent % 7}", "port": self.sent % 3})


def check_synchrony():
    reg = default_registry()
    reg.register(Producer)
    shapes = {
        "chain": ("%s { @producer @noop @count:a @noop @count:b }", lambda s: [s("a"), s("b")]),
        "alternative": ("%s { @producer @switch(@count:p | @noop @count:o | @count:q) @count:m }",
                        lambda s: [s("m"), s("p") + s("o") + s("q")]),
        "demux join": ("%s { @producer @proto_demux<@noop @count:c> @count:j }",
                       lambda s: [s("j"), sum(v for k, v in s.prefix("c{").items())]),
    }
    failures = []
    for name, (text, observe) in shapes.items():
        inst = instantiate(parse_stack(text), reg)

        class View:
            def __call__(self, alias):
                return inst.sensors.lookup(f"s.{alias}.n").read()

            def prefix(self, p):
                return {s.name: s.value for s in inst.sensors.snapshot(f"s.{p}") if s.name.endswith(".n")}

        view = View()
        Producer.probe = lambda sent: all(v == sent for v in observe(view))
        inst.run()
        producer = inst.initial
        if producer.mismatches or producer.sent != Producer.limit or not Producer.probe(Producer.limit):
            failures.append(name)
    return not failures, f"chain, alternative, demux join x {Producer.limit} events; failing: {failures or 'none'}"


# 4 ---------------------------------------------------------------------------

def _aliased(aliases):
    body = [ComponentNode("tick", "src", ())] + \
           [ComponentNode("count" if a.startswith("c") else "noop", a) for a in aliases] + \
           [ComponentNode("count", "total")]
    return StackDefinition("s", None, tuple(body))


def check_reconfiguration():
    rng = random.Random(11)
    pool = [f"c{i}" for i in range(6)] + [f"n{i}" for i in range(6)]
    events = 4000
    problems = []
    with Kernel() as kernel:
        kernel.store_definition(parse_stack(f"%s {{ @tick:src[$count={events}, $period=0.0004] @count:total }}"))
        h = kernel.start_stack("s")
        inst = kernel.instance(h)
        total = kernel.sensors.lookup("s.total.n")
        applies = 0
        while not inst.runner.exhausted.is_set() or applies < 5:
            chosen = rng.sample(pool, rng.randrange(0, 5))
            old = inst.active_definition()
            new = _aliased(chosen)
            new = StackDefinition("s", None, (ComponentNode(
                "tick", "src", old.body[0].options),) + new.body[1:])
            v = total.read()
            plan = kernel.reconfigure(h, new)
            applies += 1
            destroyed = {old.body[int(p)].alias for p in plan.destroy}
            expected = {n.alias for n in old.body} - {n.alias for n in new.body}
            if destroyed != expected:
                problems.append(f"destroyed {sorted(destroyed)} != {sorted(expected)}")
            if kernel.sensors.lookup("s.total.n") is not total or total.read() < v:
                problems.append("total counter did not continue")
            time.sleep(rng.random() * 0.01)
        inst.runner.wait_exhausted(30)
        final = total.read()
    if final != events:
        problems.append(f"total {final} != produced {events}")
    return not problems, f"{applies} applies, total {final}/{events} events; {problems[:3] or 'no problems'}"


# 5 ---------------------------------------------------------------------------

def check_traversal():
    t0 = time.monotonic()
    results = bench_traversal_sweep(range(2, 11), gate=False)
    elapsed = time.monotonic() - t0
    means = {n: r.mean_ns for n, r in results.items()}
    medians = {n: r.median_ns for n, r in results.items()}
    worst_se = max(r.stderr_pct for r in results.values())
    ref = sorted(means.values())[len(means) // 2]
    spread = max(abs(m - ref) / ref for m in means.values())
    ends = abs(means[10] - means[2]) / max(means[10], means[2])
    ok = (max(medians.values()) <= MAX_HOP_NS and worst_se <= MAX_STDERR_PCT and spread <= HOP_SPREAD
          and ends <= HOP_SPREAD and elapsed < TRAVERSAL_TIME_S)
    detail = (f"per-hop {min(means.values()):.1f}-{max(means.values()):.1f} ns, max median "
              f"{max(medians.values()):.1f} ns, worst stderr {worst_se:.2f}%, spread {spread:.1%}, "
              f"N2 vs N10 {ends:.1%}, {elapsed:.0f}s")
    return ok, detail


# 6 ---------------------------------------------------------------------------

def check_introspection():
    t0 = time.monotonic()
    res = bench_sensor_vs_mop()
    elapsed = time.monotonic() - t0
    ratio = res["mop_get"].mean_ns / res["sensor"].mean_ns
    ok = ratio >= MIN_SENSOR_RATIO and elapsed < SENSOR_TIME_S
    return ok, (f"sensor {res['sensor'].mean_ns:.1f} ns, GET {res['mop_get'].mean_ns:.0f} ns, "
                f"ratio {ratio:.0f}x, {elapsed:.0f}s")


# 7 and 8 ---------------------------------------------------------------------

def _demo(workdir, trace, out, extra=None, where=None):
    text = demo_config().replace('"trace.txt"', f'"{trace}"').replace('"transactions.log"', f'"{out}"')
    defn = next(d for d in parse_config(text) if d.name == "dns")
    if extra is not None:
        body = list(defn.body)
        if where == "branch":
            demux = body[1]
            branch = list(demux.demux)
            branch.insert(1, extra)
            body[1] = ComponentNode(demux.type_id, demux.alias, demux.options, demux=tuple(branch))
        else:
            body.insert(where, extra)
        defn = StackDefinition(defn.name, defn.alias, tuple(body))
    return defn


def _run_standalone(defn):
    inst = instantiate(defn, default_registry())
    inst.run()
    snap = {s.name: s.value for s in inst.sensors.snapshot("dns.")}
    inst.destroy()
    return snap


def check_insertion():
    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        trace = d / "trace.txt"
        write_trace(trace, DEMO_RECORDS, seed=5)
        _run_standalone(_demo(d, trace, d / "base.log"))
        base = (d / "base.log").read_bytes()
        variants = 0
        differing = []
        for where in [1, 2, 3, 4, 5, 6, "branch"]:
            for kind in ("count", "file_sink"):
                options = () if kind == "count" else \
                    (parse_stack(f'%x {{ @file_sink[$path="{d}/side{variants}.log"] }}').body[0].options)
                extra = ComponentNode(kind, "extra", options)
                out = d / f"v{variants}.log"
                _run_standalone(_demo(d, trace, out, extra, where))
                if out.read_bytes() != base:
                    differing.append(f"{kind}@{where}")
                variants += 1
    return not differing and len(base) > 0, (f"{variants} insertions of count/file_sink, "
                                             f"{len(differing)} changed the transaction stream")


def check_demo():
    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        trace = d / "trace.txt"
        write_trace(trace, DEMO_RECORDS, seed=9)
        snaps = [_run_standalone(_demo(d, trace, d / "a.log")), _run_standalone(_demo(d, trace, d / "b.log"))]
        with Kernel() as kernel:
            kernel.store_definition(_demo(d, trace, d / "c.log"))
            h = kernel.start_stack("dns")
            kernel.wait_exhausted(h, 60)
            kernel.stop_stack(h)
            snaps.append({s.name: s.value for s in kernel.sensors.snapshot("dns.")})
        outs = [(d / f"{x}.log").read_bytes() for x in "abc"]
    identical = outs[0] == outs[1] == outs[2] and snaps[0] == snaps[1] == snaps[2]
    snap = snaps[0]
    parts = sum(v for k, v in snap.items()
                if k.startswith("dns.pairs{") and k.rsplit(".", 1)[1] in ("matched", "orphans", "pending"))
    txns = sum(v for k, v in snap.items() if k.startswith("dns.pairs{") and k.endswith(".txns"))
    lines = outs[0].count(b"\n")
    ok = identical and parts == DEMO_RECORDS and txns == lines == snap["dns.txns.n"] and lines > 0
    return ok, (f"{DEMO_RECORDS} records, {lines} transactions, matched+orphans+pending={parts}, "
                f"3 runs {'identical' if identical else 'DIFFER'}")


# 9 ---------------------------------------------------------------------------

def check_protocol():
    with tempfile.TemporaryDirectory() as d:
        cfg = Path(d) / "demo.pandora"
        write_trace(Path(d) / "trace.txt", 500, seed=2)
        text = demo_config().replace('"trace.txt"', f'"{d}/trace.txt"') \
            .replace('"transactions.log"', f'"{d}/out.log"')
        cfg.write_text(text)
        probe2 = "%probe { @tick[$count=0, $period=0.05] @noop:mid @count:counter[$threshold=10] }"

        with Kernel() as a:
            a.load_config_file(cfg)
            a.start_stack("dns", "d1")
            a.start_stack("probe")
            a.set_option(Scope.ACTIVE, "d1/0", "device", "eth1")
            a.reconfigure("probe", parse_stack(probe2))
            a.stop_stack("d1")
            api = a.snapshot()

        with Kernel() as b:
            proto = ControlProtocol(b)
            script = [
                "DEFINE " + " ".join(render_stack(x) for x in parse_config(text)),
                "START dns d1",
                "START probe",
                'SET active d1/0 device "eth1"',
                "GET active d1/0 device",
                "GET stored dns/0 device",
                f"RECONF probe {probe2}",
                "STOP d1",
            ]
            replies = [parse_response(proto.execute(line)) for line in script]
            wire = b.snapshot()
    all_ok = all(r.ok for r in replies)
    diverged = all_ok and replies[4].lines == ['"eth1"'] and replies[5].lines == ['"eth0"']
    same = api == wire
    return all_ok and diverged and same, (f"{len(script)} commands {'OK' if all_ok else 'with errors'}, "
                                          f"stored/active {'diverge' if diverged else 'do not diverge'}, "
                                          f"snapshots {'equal' if same else 'differ'}")


CRITERIA = [
    (1, "grammar conformance", check_grammar),
    (2, "demux semantics", check_demux),
    (3, "synchrony", check_synchrony),
    (4, "reconfiguration state preservation", check_reconfiguration),
    (5, "traversal performance", check_traversal),
    (6, "introspection performance", check_introspection),
    (7, "non-functional insertion", check_insertion),
    (8, "end-to-end demo", check_demo),
    (9, "control protocol", check_protocol),
]


SLOW = {5, 6}


@pytest.mark.parametrize("number,title,check", [
    pytest.param(n, t, c, id=f"c{n}", marks=[pytest.mark.slow] if n in SLOW else [])
    for n, t, c in CRITERIA])
def test_criterion(number, title, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        print()
        verdict(number, title, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    results = [verdict(n, title, *check()) for n, title, check in CRITERIA]
    sys.exit(0 if all(results) else 1)
