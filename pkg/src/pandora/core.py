"""Events, scalar values, option declarations and the component base class.

Dispatch inside a stack is synchronous and depth-first.  The assembly layer
wires every component's ``forward`` attribute to a *runner*: a small closure
that pushes an event through the consecutive linear components that follow,
using each ``process`` return value as the event handed to the next one.  A
component may therefore either return the event (the common, cheap case) or
call ``self.forward(event)`` explicitly, zero or more times; in both cases the
downstream cascade has finished by the time control comes back to it.
"""

from __future__ import annotations

import enum
import hashlib
import math
import re
import socket
import threading
from dataclasses import dataclass
from types import MappingProxyType
from typing import Any, Callable, ClassVar, Iterable, Mapping, Optional, Union

from .errors import (
    AdlSyntaxError,
    HookRejectedError,
    KindMismatchError,
    OptionError,
    UnknownOptionError,
    WiringError,
)

IDENT_RE = re.compile(r"[a-zA-Z][a-zA-Z0-9_]*")

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

Scalar = Union[int, float, bool, str]


def is_identifier(text: str) -> bool:
    return isinstance(text, str) and IDENT_RE.fullmatch(text) is not None


# -- event types ----------------------------------------------------------

class EventType:
    """Interned event tag.  Compare with ``is``."""

    __slots__ = ("tag",)

    def __init__(self, tag: str):
        self.tag = tag

    def __repr__(self) -> str:
        return f"EventType({self.tag!r})"

    def __str__(self) -> str:
        return self.tag

    def __reduce__(self):
        return (intern_event_type, (self.tag,))


_event_types: dict[str, EventType] = {}
_event_types_lock = threading.Lock()


def intern_event_type(tag: str) -> EventType:
    etype = _event_types.get(tag)
    if etype is not None:
        return etype
    if not is_identifier(tag):
        raise AdlSyntaxError(f"malformed event type tag {tag!r}", 1, 1, frozenset({"identifier"}))
    with _event_types_lock:
        return _event_types.setdefault(tag, EventType(tag))


# -- scalars ----------------------------------------------------------------

class ScalarKind(enum.Enum):
    INT = "integer"
    FLOAT = "float"
    BOOL = "boolean"
    STRING = "string"

    @classmethod
    def parse(cls, text: str) -> "ScalarKind":
        aliases = {"int": cls.INT, "integer": cls.INT, "float": cls.FLOAT,
                   "bool": cls.BOOL, "boolean": cls.BOOL, "str": cls.STRING,
                   "string": cls.STRING}
        try:
            return aliases[text]
        except KeyError:
            raise ValueError(f"unknown scalar kind {text!r}") from None


def kind_of(value: Any) -> ScalarKind:
    """Kind of a scalar value; raises TypeError for anything else.

    ``bool`` is tested before ``int`` since it subclasses it.
    """
    t = type(value)
    if t is bool:
        return ScalarKind.BOOL
    if t is int:
        if not INT64_MIN <= value <= INT64_MAX:
            raise TypeError(f"integer {value} does not fit in 64 bits")
        return ScalarKind.INT
    if t is float:
        if not math.isfinite(value):
            raise TypeError(f"non-finite float {value!r} is not a scalar value")
        return ScalarKind.FLOAT
    if t is str:
        return ScalarKind.STRING
    raise TypeError(f"{value!r} is not a scalar value")


def format_scalar(value: Scalar) -> str:
    """Render a scalar in description-language literal syntax."""
    kind = kind_of(value)
    if kind is ScalarKind.BOOL:
        return "true" if value else "false"
    if kind is ScalarKind.INT:
        return str(value)
    if kind is ScalarKind.FLOAT:
        text = repr(value)
        mantissa, sep, exponent = text.partition("e")
        if "." not in mantissa:
            mantissa += ".0"
        return mantissa + (sep + exponent if sep else "")
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


# conversion hooks usable as OptionDecl.on_set

def as_float(value: Scalar) -> float:
    """Accept integers where a float is expected."""
    if type(value) is int:
        return float(value)
    if type(value) is float:
        return value
    raise ValueError(f"expected a number, got {value!r}")


def resolve_hostname(value: Scalar) -> str:
    """Turn a host name into a dotted IPv4 address using the system resolver."""
    if type(value) is not str:
        raise ValueError(f"expected a host name, got {value!r}")
    try:
        return socket.gethostbyname(value)
    except OSError as exc:
        raise ValueError(f"cannot resolve {value!r}: {exc}") from None


def non_negative(value: Scalar) -> Scalar:
    if type(value) in (int, float) and value < 0:
        raise ValueError(f"{value!r} is negative")
    return value


# -- events ------------------------------------------------------------------

class Event:
    """Typed, immutable message.

    ``attributes`` is an ordered read-only mapping of name to scalar value and
    ``payload`` an opaque byte string.
    """

    __slots__ = ("etype", "_attrs", "payload")

    def __init__(self, etype: Union[EventType, str], attributes: Optional[Mapping[str, Scalar]] = None,
                 payload: bytes = b""):
        if not isinstance(etype, EventType):
            etype = intern_event_type(etype)
        attrs = dict(attributes) if attributes else {}
        for name, value in attrs.items():
            if type(name) is not str:
                raise TypeError(f"attribute name {name!r} is not a string")
            kind_of(value)
        set_ = object.__setattr__
        set_(self, "etype", etype)
        set_(self, "_attrs", attrs)
        set_(self, "payload", bytes(payload))

    def __setattr__(self, name, value):
        raise AttributeError("events are immutable")

    def __delattr__(self, name):
        raise AttributeError("events are immutable")

    @property
    def attributes(self) -> Mapping[str, Scalar]:
        return MappingProxyType(self._attrs)

    def get(self, name: str, default: Any = None) -> Any:
        return self._attrs.get(name, default)

    def __getitem__(self, name: str) -> Scalar:
        return self._attrs[name]

    def __contains__(self, name: str) -> bool:
        return name in self._attrs

    def evolve(self, etype: Union[EventType, str, None] = None, payload: Optional[bytes] = None,
               **attributes: Scalar) -> "Event":
        """Copy with some attributes replaced or added."""
        merged = dict(self._attrs)
        merged.update(attributes)
        return Event(self.etype if etype is None else etype, merged,
                     self.payload if payload is None else payload)

    def canonical(self) -> str:
        parts = [self.etype.tag]
        parts.extend(f"{k}={format_scalar(v)}" for k, v in self._attrs.items())
        if self.payload:
            parts.append("|" + self.payload.hex())
        return " ".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Event):
            return NotImplemented
        return (self.etype is other.etype and self.payload == other.payload
                and list(self._attrs.items()) == list(other._attrs.items()))

    def __hash__(self):
        return hash((self.etype.tag, tuple(self._attrs.items()), self.payload))

    def __repr__(self) -> str:
        return f"Event({self.canonical()!r})"


# -- component contract ---------------------------------------------------

@dataclass(frozen=True)
class OptionDecl:
    name: str
    kind: ScalarKind
    default: Optional[Scalar] = None
    on_set: Optional[Callable[[Scalar], Scalar]] = None
    doc: str = ""

    def __post_init__(self):
        if not is_identifier(self.name):
            raise ValueError(f"bad option name {self.name!r}")
        if self.default is not None:
            self.coerce(self.default)

    def coerce(self, value: Any, path: Optional[str] = None) -> Scalar:
        """Apply the conversion hook (if any) and check the resulting kind."""
        try:
            kind_of(value)
        except TypeError as exc:
            raise KindMismatchError(f"option {self.name}: {exc}", path) from None
        if self.on_set is not None:
            try:
                value = self.on_set(value)
            except (ValueError, TypeError) as exc:
                raise HookRejectedError(f"option {self.name} rejected {format_scalar(value)}: {exc}",
                                        path) from None
        try:
            kind = kind_of(value)
        except TypeError as exc:
            raise KindMismatchError(f"option {self.name}: {exc}", path) from None
        if kind is not self.kind:
            raise KindMismatchError(
                f"option {self.name} expects {self.kind.value}, got {kind.value}", path)
        return value


class OutputKind(enum.Enum):
    LINEAR = "linear"
    ALTERNATIVE = "alternative"
    DEMUX = "demux"


@dataclass(frozen=True)
class OutputSpec:
    kind: OutputKind = OutputKind.LINEAR
    # number of alternative ports, None when any count is acceptable
    ports: Optional[int] = None

    def __post_init__(self):
        if self.kind is not OutputKind.ALTERNATIVE and self.ports is not None:
            raise ValueError("only alternative outputs have a port count")
        if self.ports is not None and self.ports < 1:
            raise ValueError("an alternative needs at least one port")

    @classmethod
    def linear(cls) -> "OutputSpec":
        return cls(OutputKind.LINEAR)

    @classmethod
    def alternative(cls, ports: Optional[int] = None) -> "OutputSpec":
        return cls(OutputKind.ALTERNATIVE, ports)

    @classmethod
    def demux(cls) -> "OutputSpec":
        return cls(OutputKind.DEMUX)


@dataclass(frozen=True)
class ComponentContract:
    type_id: str
    options: tuple[OptionDecl, ...] = ()
    output: OutputSpec = OutputSpec()
    initial_capable: bool = False

    def __post_init__(self):
        if not is_identifier(self.type_id):
            raise ValueError(f"bad component type id {self.type_id!r}")
        names = [d.name for d in self.options]
        if len(set(names)) != len(names):
            raise ValueError(f"{self.type_id}: duplicate option declarations")

    def option(self, name: str) -> Optional[OptionDecl]:
        for decl in self.options:
            if decl.name == name:
                return decl
        return None


# -- dispatch ---------------------------------------------------------------

def sink(event: Event) -> None:
    """Terminal port: events forwarded past the last component end here."""


def make_runner(procs: Iterable[Callable[[Event], Optional[Event]]],
                exit: Callable[[Event], None]) -> Callable[[Event], None]:
    """Chain ``process`` callables; a ``None`` result stops the event."""
    procs = tuple(procs)

    def run(event):
        for proc in procs:
            event = proc(event)
            if event is None:
                return
        exit(event)

    return run


def _unwired(*args):
    raise WiringError("component output is not wired")


class Component:
    """Base class for components.

    Subclasses set ``type_id``, ``option_decls`` and ``output`` and override
    ``process``.  Initial-capable components also override ``produce``, which
    the stack's execution context calls in a loop; it returns an event, or
    ``None`` when nothing is available right now, and raises ``Exhausted``
    once the source is finished.
    """

    type_id: ClassVar[str] = ""
    option_decls: ClassVar[tuple[OptionDecl, ...]] = ()
    output: ClassVar[OutputSpec] = OutputSpec()

    def __init__(self):
        self.forward: Callable[[Event], None] = sink
        self.options: dict[str, Scalar] = {d.name: d.default for d in self.option_decls}
        self.ctx = None
        self.destroyed = False
        self._explicit: list[str] = []
        self._ports: tuple = ()
        self._routes: dict[str, Callable[[Event], None]] = {}
        self._open_branch: Callable = _unwired

    @classmethod
    def initial_capable(cls) -> bool:
        return cls.produce is not Component.produce

    @classmethod
    def contract(cls) -> ComponentContract:
        return ComponentContract(cls.type_id, tuple(cls.option_decls), cls.output, cls.initial_capable())

    @property
    def path(self) -> str:
        return self.ctx.path if self.ctx is not None else self.type_id

    # -- behaviour hooks --
    def process(self, event: Event) -> Optional[Event]:
        return event

    def produce(self) -> Optional[Event]:
        raise NotImplementedError

    def setup(self) -> None:
        """Called once options are bound and the context is attached."""

    def teardown(self) -> None:
        """Release resources; the instance is never used again afterwards."""

    def option_changed(self, name: str, value: Scalar) -> None:
        """Called after an option received a new value."""

    # -- multi-output forwarding --
    def forward_alt(self, index: int, event: Event) -> None:
        ports = self._ports
        if not 0 <= index < len(ports):
            raise WiringError(f"{self.path}: alternative port {index} out of range (0..{len(ports) - 1})")
        ports[index](event)

    def forward_demux(self, key: str, event: Event) -> None:
        route = self._routes.get(key)
        if route is None:
            route = self._open_branch(key)
            if route is None:
                self.branch_refused(key, event)
                return
        route(event)

    def branch_opened(self, key: str) -> None:
        """A demux branch instance was created for a new category."""

    def branch_refused(self, key: str, event: Event) -> None:
        """A new demux category was refused (category cap reached)."""

    # -- options --
    def set_option(self, name: str, value: Any) -> Scalar:
        decl = None
        for d in self.option_decls:
            if d.name == name:
                decl = d
                break
        if decl is None:
            raise UnknownOptionError(f"no option {name!r} on {self.type_id}", self.path)
        value = decl.coerce(value, self.path)
        self.options[name] = value
        if name not in self._explicit:
            self._explicit.append(name)
        self.option_changed(name, value)
        return value

    def reset_option(self, name: str) -> None:
        """Return an option to its declared default."""
        decl = next((d for d in self.option_decls if d.name == name), None)
        if decl is None:
            raise UnknownOptionError(f"no option {name!r} on {self.type_id}", self.path)
        self.options[name] = decl.default
        if name in self._explicit:
            self._explicit.remove(name)
        self.option_changed(name, decl.default)

    def destroy(self) -> None:
        if self.destroyed:
            return
        self.destroyed = True
        try:
            self.teardown()
        finally:
            if self.ctx is not None:
                self.ctx.release()

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.path}>"


def set_option(component: Component, name: str, value: Any) -> Scalar:
    return component.set_option(name, value)


class Exhausted(Exception):
    """Raised by ``produce`` when an initial component has nothing left."""


class DemuxComponent(Component):
    """Demultiplexer: one branch instance per category key, created lazily."""

    output = OutputSpec.demux()
    option_decls = (
        OptionDecl("max_categories", ScalarKind.INT, 0, non_negative,
                   "cap on live categories, 0 for no cap"),
    )

    def classify(self, event: Event) -> str:
        raise NotImplementedError

    def setup(self):
        self._categories = self.ctx.sensor("categories")
        self._dropped = self.ctx.sensor("dropped")

    def process(self, event):
        self.forward_demux(self.classify(event), event)
        return None

    def branch_opened(self, key):
        self._categories.add(1)

    def branch_refused(self, key, event):
        self._dropped.add(1)


class AlternativeComponent(Component):
    """Routes every event to exactly one numbered port."""

    output = OutputSpec.alternative()

    def select(self, event: Event) -> int:
        raise NotImplementedError

    def process(self, event):
        self.forward_alt(self.select(event), event)
        return None


__all__ = [
    "IDENT_RE", "Scalar", "ScalarKind", "EventType", "Event", "OptionDecl", "OutputKind",
    "OutputSpec", "ComponentContract", "Component", "DemuxComponent", "AlternativeComponent",
    "Exhausted", "OptionError", "intern_event_type", "kind_of", "format_scalar", "set_option",
    "sink", "make_runner", "as_float", "resolve_hostname", "non_negative", "is_identifier",
]
