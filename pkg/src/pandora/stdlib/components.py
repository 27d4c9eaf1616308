"""Representative component library."""

from __future__ import annotations

import collections
import time

from ..core import (
    AlternativeComponent,
    Component,
    DemuxComponent,
    Event,
    Exhausted,
    OptionDecl,
    ScalarKind,
    as_float,
    format_scalar,
    non_negative,
)
from ..errors import InstantiationError

INT, FLOAT, BOOL, STRING = ScalarKind.INT, ScalarKind.FLOAT, ScalarKind.BOOL, ScalarKind.STRING


def parse_field(text: str):
    """Trace field value: integer, float, boolean, else the raw string."""
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    if "." in text:
        try:
            value = float(text)
        except ValueError:
            return text
        if value == value and value not in (float("inf"), float("-inf")):
            return value
    return text


def parse_trace_line(line: str) -> Event:
    """``ts src dst proto k=v ...`` to a ``pkt`` event."""
    fields = line.split()
    if len(fields) < 4:
        raise ValueError(f"trace line needs at least 4 fields: {line!r}")
    attrs = {"ts": float(fields[0]), "src": fields[1], "dst": fields[2], "proto": fields[3]}
    for item in fields[4:]:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValueError(f"bad trace field {item!r}")
        attrs[key] = parse_field(value)
    return Event("pkt", attrs)


class TraceSource(Component):
    """Replays a text trace, one ``pkt`` event per line, at most $rate per second."""

    type_id = "trace_source"
    option_decls = (
        OptionDecl("path", STRING),
        OptionDecl("rate", FLOAT, 0.0, lambda v: non_negative(as_float(v))),
        OptionDecl("device", STRING, ""),
    )

    def setup(self):
        path = self.options["path"]
        if path is None:
            raise InstantiationError(f"{self.path}: $path is required")
        self._fh = open(path, encoding="utf-8")
        self._produced = self.ctx.sensor("produced")
        self._t0 = None
        self._n = 0

    def produce(self):
        rate = self.options["rate"]
        if rate:
            now = time.monotonic()
            if self._t0 is None:
                self._t0 = now
            due = self._t0 + self._n / rate
            if now < due:
                self.ctx.idle(due - now)
                return None
        while True:
            line = self._fh.readline()
            if not line:
                raise Exhausted
            if line.strip() and not line.lstrip().startswith("#"):
                break
        self._n += 1
        self._produced.add(1)
        return parse_trace_line(line)

    def option_changed(self, name, value):
        if name == "rate":
            # restart the pacing clock from the current position
            self._t0 = None
            self._n = 0

    def teardown(self):
        fh = getattr(self, "_fh", None)
        if fh is not None:
            fh.close()


class Tick(Component):
    """Produces ``tick`` events numbered from 0; $count 0 means forever."""

    type_id = "tick"
    option_decls = (
        OptionDecl("count", INT, 0, non_negative),
        OptionDecl("period", FLOAT, 0.0, lambda v: non_negative(as_float(v))),
    )

    def setup(self):
        self._seq = 0
        self._next = None

    def produce(self):
        count = self.options["count"]
        if count and self._seq >= count:
            raise Exhausted
        period = self.options["period"]
        if period:
            now = time.monotonic()
            if self._next is None:
                self._next = now
            if now < self._next:
                self.ctx.idle(self._next - now)
                return None
            self._next += period
        e = Event("tick", {"seq": self._seq})
        self._seq += 1
        return e


class Noop(Component):
    type_id = "noop"

    def process(self, event):
        return event


class Count(Component):
    """Counts events (those carrying $field, when set) and passes them on.

    Sensor ``n`` holds the count; ``above`` counts events seen while ``n`` is
    at or over a positive $threshold.
    """

    type_id = "count"
    option_decls = (
        OptionDecl("field", STRING),
        OptionDecl("threshold", INT, 0, non_negative),
    )

    def setup(self):
        self.n = self.ctx.sensor("n")
        self.above = self.ctx.sensor("above")

    def process(self, event):
        field = self.options["field"]
        if field is None or field in event:
            n = self.n
            n.add(1)
            threshold = self.options["threshold"]
            if threshold and n.value >= threshold:
                self.above.add(1)
        return event


def _matches(value, wanted) -> bool:
    if type(value) is str:
        return value == wanted
    return format_scalar(value) == wanted


class Filter(Component):
    """Forwards events whose $field renders as $equals (or merely exists,
    when $equals is unset) and, if $type is set, whose type is $type."""

    type_id = "filter"
    option_decls = (
        OptionDecl("field", STRING),
        OptionDecl("equals", STRING),
        OptionDecl("type", STRING),
        OptionDecl("negate", BOOL, False),
    )

    def process(self, event):
        opts = self.options
        ok = True
        etype = opts["type"]
        if etype is not None and event.etype.tag != etype:
            ok = False
        field = opts["field"]
        if ok and field is not None:
            if field not in event:
                ok = False
            elif opts["equals"] is not None:
                ok = _matches(event[field], opts["equals"])
        if ok is opts["negate"]:
            return None
        return event


class FileSink(Component):
    """Appends the canonical form of every event to $path; passes events on."""

    type_id = "file_sink"
    option_decls = (OptionDecl("path", STRING),)

    def setup(self):
        self._fh = None
        self._open(self.options["path"])
        self.lines = self.ctx.sensor("lines")

    def _open(self, path):
        if path is None:
            raise InstantiationError(f"{self.path}: $path is required")
        fh = open(path, "a", encoding="utf-8", buffering=1)
        if self._fh is not None:
            self._fh.close()
        self._fh = fh

    def option_changed(self, name, value):
        if name == "path" and self.ctx is not None and getattr(self, "_fh", None) is not None:
            self._open(value)

    def process(self, event):
        self._fh.write(event.canonical() + "\n")
        self.lines.add(1)
        return event

    def teardown(self):
        if getattr(self, "_fh", None) is not None:
            self._fh.close()
            self._fh = None


class RateLimit(Component):
    """Token bucket: passes at most $rate events per second (burst $burst)."""

    type_id = "rate_limit"
    option_decls = (
        OptionDecl("rate", FLOAT, 0.0, lambda v: non_negative(as_float(v))),
        OptionDecl("burst", INT, 1, non_negative),
    )

    def setup(self):
        self.dropped = self.ctx.sensor("dropped")
        self._tokens = float(self.options["burst"])
        self._last = time.monotonic()

    def process(self, event):
        rate = self.options["rate"]
        if not rate:
            return event
        now = time.monotonic()
        burst = max(self.options["burst"], 1)
        self._tokens = min(burst, self._tokens + (now - self._last) * rate)
        self._last = now
        if self._tokens >= 1.0:
            self._tokens -= 1.0
            return event
        self.dropped.add(1)
        return None


class ProtoDemux(DemuxComponent):
    """One branch per value of the ``proto`` attribute."""

    type_id = "proto_demux"

    def classify(self, event):
        proto = event.get("proto", "")
        return proto if type(proto) is str else format_scalar(proto)


class FieldDemux(DemuxComponent):
    """One branch per value of attribute $field."""

    type_id = "field_demux"
    option_decls = DemuxComponent.option_decls + (OptionDecl("field", STRING, "proto"),)

    def classify(self, event):
        value = event.get(self.options["field"], "")
        return value if type(value) is str else format_scalar(value)


class Switch(AlternativeComponent):
    """Routes on the integer attribute $field (default ``port``); missing means 0."""

    type_id = "switch"
    option_decls = (OptionDecl("field", STRING, "port"),)

    def select(self, event):
        return int(event.get(self.options["field"], 0))


class PairMatcher(Component):
    """Pairs queries with responses on (client, server, qid).

    A query is keyed (src, dst, qid); a response (dst, src, qid).  A matched
    pair becomes a ``txn`` event.  Sensors count input records: ``matched``
    (two per transaction), ``orphans`` (responses without a query, queries
    evicted after $timeout seconds of trace time or superseded, records that
    are not queries or responses) and ``pending``; their sum equals the
    number of inputs whenever the stack is quiescent.
    """

    type_id = "pair_matcher"
    option_decls = (OptionDecl("timeout", FLOAT, 5.0, lambda v: non_negative(as_float(v))),)

    def setup(self):
        sensor = self.ctx.sensor
        self.pending = sensor("pending")
        self.matched = sensor("matched")
        self.orphans = sensor("orphans")
        self.txns = sensor("txns")
        self._table: collections.OrderedDict = collections.OrderedDict()

    def _evict(self, now):
        limit = now - self.options["timeout"]
        table = self._table
        while table:
            key, query = next(iter(table.items()))
            if query["ts"] >= limit:
                break
            del table[key]
            self.pending.add(-1)
            self.orphans.add(1)

    def process(self, event):
        qid = event.get("qid")
        if qid is None or "src" not in event or "dst" not in event:
            self.orphans.add(1)
            return None
        ts = event.get("ts", 0.0)
        self._evict(ts)
        table = self._table
        if not event.get("is_response", False):
            key = (event["src"], event["dst"], qid)
            if key in table:
                del table[key]
                self.orphans.add(1)
            else:
                self.pending.add(1)
            table[key] = event
            return None
        query = table.pop((event["dst"], event["src"], qid), None)
        if query is None:
            self.orphans.add(1)
            return None
        self.pending.add(-1)
        self.matched.add(2)
        self.txns.add(1)
        return Event("txn", {
            "client": query["src"],
            "server": query["dst"],
            "qid": qid,
            "qname": query.get("qname", ""),
            "ts": query["ts"],
            "latency": round(ts - query["ts"], 9),
        })


class StackSend(Component):
    """Sends every event to stack $target (synchronously unless $async), then passes it on."""

    type_id = "stack_send"
    option_decls = (
        OptionDecl("target", STRING),
        OptionDecl("async", BOOL, False),
    )

    def process(self, event):
        target = self.options["target"]
        if target is not None:
            from ..kernel import SendMode
            self.ctx.send(target, event, SendMode.ASYNC if self.options["async"] else SendMode.SYNC)
        return event


STDLIB = (TraceSource, Tick, Noop, Count, Filter, FileSink, RateLimit, ProtoDemux,
          FieldDemux, Switch, PairMatcher, StackSend)
