import json
import os
import re
import shutil
import subprocess
import sys
import threading
import time
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from pandora import Kernel, parse_config, render_stack
from pandora.control import Client, ControlProtocol, ControlServer, parse_endpoint, parse_response
from pandora.kernel import Scope
from pandora.stdlib import demo_config, write_trace
from conftest import write_lines

REPO = Path(__file__).resolve().parent.parent


def ok(response_text):
    r = parse_response(response_text)
    assert r.ok, response_text
    return r.lines


def err(response_text):
    r = parse_response(response_text)
    assert not r.ok, response_text
    return r.code


@pytest.fixture
def proto(kernel):
    return ControlProtocol(kernel)


@pytest.fixture
def demo_text(tmp_path):
    write_trace(tmp_path / "trace.txt", 200, seed=1)
    return (demo_config().replace('"trace.txt"', f'"{tmp_path}/trace.txt"')
            .replace('"transactions.log"', f'"{tmp_path}/transactions.log"'))


def test_list_empty(proto):
    assert proto.execute("LIST") == "OK 0\n"


def test_define_start_list(proto):
    assert ok(proto.execute("DEFINE %t { @tick[$period=0.01] @count:c }")) == ["t"]
    assert ok(proto.execute("DEFS")) == ["t"]
    h, = ok(proto.execute("START t first"))
    assert ok(proto.execute("list")) == [f"{h} t first running"]
    assert ok(proto.execute(f"STOP {h}")) == []
    assert ok(proto.execute("LIST")) == [f"{h} t first stopped"]
    assert err(proto.execute(f"STOP {h}")) == "unknown"


def test_get_demo_device(proto, demo_text):
    proto.kernel.load_config(demo_text)
    ok(proto.execute("START dns"))
    assert ok(proto.execute("GET active dns/0 device")) == ['"eth0"']


def test_stored_active_divergence(proto, demo_text):
    proto.kernel.load_config(demo_text)
    ok(proto.execute("START dns"))
    assert ok(proto.execute('SET active dns/0 device "eth1"')) == ['"eth1"']
    assert ok(proto.execute("GET active dns/0 device")) == ['"eth1"']
    assert ok(proto.execute("GET stored dns/0 device")) == ['"eth0"']
    assert '$device="eth1"' in ok(proto.execute("DUMP active dns"))[0]
    assert '$device="eth0"' in ok(proto.execute("DUMP dns"))[0]


def test_get_active_on_stopped(proto):
    ok(proto.execute("DEFINE %t { @tick[$period=0.01] @count:c }"))
    h, = ok(proto.execute("START t"))
    ok(proto.execute(f"STOP {h}"))
    assert err(proto.execute("GET active t/1 threshold")) == "notrunning"


def test_set_active_threshold_applies_to_next_events(kernel, proto):
    kernel.load_config("%c { @feed @count:counter }")
    h = kernel.start_stack("c")
    assert ok(proto.execute("SET active c/1 threshold 3")) == ["3"]
    feed = kernel.instance(h).resolve(["0"]).component
    from pandora import Event
    for i in range(5):
        kernel.instance(h).runner.submit(lambda: feed.queue.append(Event("e")))
    feed_done = lambda: kernel.sensors.lookup("c.counter.n").read() == 5
    end = time.monotonic() + 5
    while not feed_done() and time.monotonic() < end:
        time.sleep(0.005)
    assert ok(proto.execute("SENSOR GET c.counter.above")) == ["3"]


def test_set_stored_then_start(proto):
    ok(proto.execute("DEFINE %t { @tick[$period=0.01] @count:c }"))
    assert ok(proto.execute("SET stored t/1 threshold 7")) == ["7"]
    ok(proto.execute("START t"))
    assert ok(proto.execute("GET active t/1 threshold")) == ["7"]
    assert "$threshold=7" in ok(proto.execute("DUMP stored t"))[0]


@pytest.mark.parametrize("line,code", [
    ("SET active t/1 threshold notaliteral", "syntax"),
    ("SET active t/1 threshold true", "kind"),
    ("SET active t/1 threshold -1", "rejected"),
    ("SET active t/1 nosuch 1", "unknown"),
    ("SET active t/9 threshold 1", "path"),
    ("GET sideways t/1 threshold", "syntax"),
    ("FROB", "syntax"),
    ("START nosuch", "unknown"),
    ("DEFINE %x { @nosuch }", "invalid"),
    ("DEFINE %x { @count", "syntax"),
])
def test_error_codes(proto, line, code):
    ok(proto.execute("DEFINE %t { @tick[$period=0.01] @count:c }"))
    ok(proto.execute("START t"))
    assert err(proto.execute(line)) == code


def test_reconf_and_invalid_reconf(kernel, proto):
    ok(proto.execute("DEFINE %t { @tick:src[$period=0.002] @count:c }"))
    h, = ok(proto.execute("START t"))
    before = ok(proto.execute(f"DUMP active {h}"))
    for bad in ("%t { @tick:src @nosuch }", "%t { @tick:src @count:c", "%t { } %u { }"):
        assert not parse_response(proto.execute(f"RECONF {h} {bad}")).ok
        assert ok(proto.execute(f"DUMP active {h}")) == before
    counter = kernel.sensors.lookup("t.c.n")
    v0 = counter.read()
    time.sleep(0.05)
    assert counter.read() > v0
    summary, = ok(proto.execute(f'RECONF {h} %t {{ @tick:src[$period=0.002] @filter[$type="tick"] @count:c }}'))
    assert summary.startswith("keep=2 create=1 destroy=0")
    v1 = counter.read()
    time.sleep(0.05)
    assert counter.read() > v1 >= v0


def test_sensor_commands(kernel, proto):
    kernel.load_config("%t { @tick[$count=25] @count:c }")
    h = kernel.start_stack("t")
    kernel.wait_exhausted(h, 5)
    assert ok(proto.execute("SENSOR GET t.c.n")) == ["25"] == [str(kernel.sensors.lookup("t.c.n").read())]
    rows = ok(proto.execute("SENSOR LIST t.c."))
    assert rows == ["t.c.above 0 int passive", "t.c.n 25 int passive"]
    ok(proto.execute(f"STOP {h}"))
    assert ok(proto.execute("SENSOR LIST t.c.n")) == ["t.c.n 25 int passive stale"]
    assert err(proto.execute("SENSOR GET no.such.sensor")) == "unknown"


# random definitions built from stdlib types, for the wire round-trip
names = st.from_regex(r"[a-z][a-z0-9_]{0,5}", fullmatch=True)
strings = st.text(alphabet='ab "\\é._-', max_size=6)


@st.composite
def linear(draw):
    kind = draw(st.sampled_from(["noop", "count", "filter"]))
    alias = draw(st.one_of(st.none(), names))
    opts = ""
    if kind == "count" and draw(st.booleans()):
        opts = f"[$threshold={draw(st.integers(0, 10**6))}]"
    if kind == "filter" and draw(st.booleans()):
        opts = f'[$equals={json.dumps(draw(strings), ensure_ascii=False)}, $negate={draw(st.sampled_from(["true", "false"]))}]'
    return f"@{kind}" + (f":{alias}" if alias else "") + opts


def seq(depth):
    if depth == 0:
        return st.lists(linear(), min_size=1, max_size=3).map(" ".join)
    inner = seq(depth - 1)
    node = st.one_of(
        linear(),
        inner.map(lambda b: f"@proto_demux<{b}>"),
        st.lists(inner, min_size=1, max_size=3).map(lambda bs: "@switch(" + " | ".join(bs) + ")"),
    )
    return st.lists(node, min_size=1, max_size=3).map(" ".join)


@settings(max_examples=150, deadline=None)
@given(names, seq(2))
def test_define_dump_wire_roundtrip(name, body):
    counter = iter(range(10**6))
    body = re.sub(r"(@\w+):\w+", lambda m: f"{m.group(1)}:a{next(counter)}", body)
    text = f"%{name} {{ @tick {body} }}"
    kernel = Kernel()
    proto = ControlProtocol(kernel)
    assert ok(proto.execute(f"DEFINE {text}")) == [name]
    dumped, = ok(proto.execute(f"DUMP {name}"))
    assert dumped == render_stack(parse_config(text)[0])
    assert parse_config(dumped) == parse_config(text)


def scripted_session(proto, config_path):
    lines = [
        f"DEFINE {' '.join(render_stack(d) for d in parse_config(Path(config_path).read_text()))}",
        "START dns d1",
        "START probe",
        'SET active d1/0 device "eth1"',
        "SET stored dns/3 threshold 4",
        "RECONF probe %probe { @tick[$count=0, $period=0.05] @noop:mid @count:counter[$threshold=10] }",
        "STOP d1",
    ]
    for line in lines:
        ok(proto.execute(line))


def api_session(kernel, config_path):
    kernel.load_config_file(config_path)
    kernel.start_stack("dns", "d1")
    kernel.start_stack("probe")
    kernel.set_option(Scope.ACTIVE, "d1/0", "device", "eth1")
    kernel.set_option(Scope.STORED, "dns/3", "threshold", 4)
    kernel.reconfigure("probe", parse_config(
        "%probe { @tick[$count=0, $period=0.05] @noop:mid @count:counter[$threshold=10] }")[0])
    kernel.stop_stack("d1")


def test_protocol_and_api_reach_same_state(tmp_path, demo_text):
    cfg = write_lines(tmp_path / "demo.pandora", [demo_text])
    with Kernel() as a, Kernel() as b:
        api_session(a, cfg)
        scripted_session(ControlProtocol(b), cfg)
        assert a.snapshot() == b.snapshot()
        assert a.snapshot()["instances"][1]["active"].count("@noop:mid") == 1


def test_parse_endpoint():
    import socket
    assert parse_endpoint("unix:/tmp/x.sock") == (socket.AF_UNIX, "/tmp/x.sock")
    assert parse_endpoint("/tmp/x.sock") == (socket.AF_UNIX, "/tmp/x.sock")
    assert parse_endpoint("127.0.0.1:7170") == (socket.AF_INET, ("127.0.0.1", 7170))
    with pytest.raises(ValueError):
        parse_endpoint("localhost")


def test_tcp_and_unix_servers(kernel, tmp_path):
    kernel.load_config("%t { @tick[$period=0.01] @count:c }")
    for endpoint in ("127.0.0.1:0", f"unix:{tmp_path}/ctl.sock"):
        with ControlServer(kernel, endpoint) as server, Client(server.endpoint) as client:
            assert client.request("DEFS").lines == ["t"]
            bad = client.request("GET stored t/5 threshold")
            assert (bad.ok, bad.code) == (False, "path")
            assert client.request("QUIT").ok
    assert not os.path.exists(tmp_path / "ctl.sock")


def test_concurrent_sessions(kernel):
    kernel.load_config("%t { @tick[$period=0.01] @count:c }")
    kernel.start_stack("t")
    results = []

    def session(k):
        with Client(server.endpoint) as c:
            for i in range(30):
                r = c.request(f"SET active t/1 threshold {k * 100 + i}")
                results.append((r.ok, r.lines))
                assert c.request("GET active t/1 threshold").ok

    with ControlServer(kernel, "127.0.0.1:0") as server:
        threads = [threading.Thread(target=session, args=(k,)) for k in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    assert len(results) == 180 and all(r[0] for r in results)
    final = kernel.get_option(Scope.ACTIVE, "t/1", "threshold")
    assert final in {k * 100 + 29 for k in range(6)}


def cli(*args, **kw):
    exe = shutil.which("pandoractl")
    cmd = [exe] if exe else [sys.executable, "-m", "pandora.cli"]
    return subprocess.run(cmd + list(args), capture_output=True, text=True, timeout=60, **kw)


def test_pandoractl_against_server(kernel, demo_text):
    kernel.load_config(demo_text)
    kernel.start_stack("dns")
    with ControlServer(kernel, "127.0.0.1:0") as server:
        ep = ["--endpoint", server.endpoint]
        assert cli(*ep, "set", "--active", "dns/0", "device", "eth1").stdout == '"eth1"\n'
        assert cli(*ep, "get", "--active", "dns/0", "device").stdout == '"eth1"\n'
        assert cli(*ep, "get", "dns/0", "device").stdout == '"eth0"\n'
        listing = json.loads(cli(*ep, "--json", "list").stdout)
        assert listing == {"ok": True, "lines": ["h1 dns - running"]}
        res = cli(*ep, "--json", "get", "--active", "dns/9", "device")
        assert res.returncode == 1 and json.loads(res.stdout)["code"] == "path"
        res = cli(*ep, "define", "-", input="%extra {\n  @tick\n  @count:c  # comment\n}\n")
        assert res.stdout == "extra\n"
        assert cli(*ep, "dump", "extra").stdout == "%extra { @tick @count:c }\n"
        assert cli(*ep, "raw", "SENSOR", "GET", "dns.capture.produced").returncode == 0


def test_pandoractl_unreachable(tmp_path):
    res = cli("--endpoint", f"unix:{tmp_path}/none.sock", "list")
    assert res.returncode == 2 and "cannot reach" in res.stderr


def test_pandorad_end_to_end(tmp_path, demo_text):
    cfg = write_lines(tmp_path / "demo.pandora", [demo_text])
    sock = f"unix:{tmp_path}/d.sock"
    exe = shutil.which("pandorad")
    cmd = [exe] if exe else [sys.executable, "-c", "import sys; from pandora.cli import daemon_main; sys.exit(daemon_main())"]
    proc = subprocess.Popen(cmd + ["--config", str(cfg), "--control", sock, "--start", "dns:live"],
                            stderr=subprocess.PIPE, text=True)
    try:
        end = time.monotonic() + 20
        while not os.path.exists(tmp_path / "d.sock"):
            assert proc.poll() is None and time.monotonic() < end
            time.sleep(0.05)
        assert cli("--endpoint", sock, "list").stdout == "h1 dns live running\n"
        assert cli("--endpoint", sock, "sensor", "get", "live.txns.n").returncode == 0
    finally:
        proc.terminate()
        assert proc.wait(20) == 0
