"""Factory registry and instantiation of stack definitions.

Wiring rule: inside any sequence, a linear component forwards to the next
component; an alternative or demux node forwards into its branches, and the
last component of every branch forwards to whatever follows the node in the
enclosing sequence (the join).  Past the end of the stack events are dropped.
Demux branches are built lazily from their template, one per category key.
"""

from __future__ import annotations

import enum
import itertools
import threading
import time
from typing import Callable, Iterator, Optional

from .adl import ComponentNode, OptionBinding, StackDefinition, iter_nodes, validate
from .core import (
    Component,
    ComponentContract,
    Event,
    Exhausted,
    OutputKind,
    make_runner,
    sink,
)
from .errors import (
    DuplicateFactoryError,
    DuplicateSensorError,
    InstantiationError,
    PandoraError,
    PathError,
    UnresolvedTypeError,
    ValidationError,
)
from .sensors import Sensor, SensorMode, SensorRegistry


class FactoryRegistry:
    """Maps component type ids to their contract and constructor."""

    def __init__(self):
        self._entries: dict[str, tuple[ComponentContract, Callable[[], Component]]] = {}
        self._lock = threading.Lock()

    def register_factory(self, contract: ComponentContract, ctor: Callable[[], Component]) -> None:
        with self._lock:
            if contract.type_id in self._entries:
                raise DuplicateFactoryError(f"component type {contract.type_id!r} already registered")
            self._entries[contract.type_id] = (contract, ctor)

    def register(self, cls):
        """Register a ``Component`` subclass; usable as a class decorator."""
        self.register_factory(cls.contract(), cls)
        return cls

    def contract(self, type_id: str) -> Optional[ComponentContract]:
        entry = self._entries.get(type_id)
        return entry[0] if entry else None

    def create(self, type_id: str) -> Component:
        entry = self._entries.get(type_id)
        if entry is None:
            raise UnresolvedTypeError(f"unknown component type {type_id!r}")
        return entry[1]()

    def types(self) -> list[str]:
        return sorted(self._entries)

    def __contains__(self, type_id):
        return type_id in self._entries


class StackState(enum.Enum):
    CREATED = "created"
    RUNNING = "running"
    STOPPING = "stopping"
    STOPPED = "stopped"


class ComponentContext:
    """What a component instance knows about its surroundings."""

    def __init__(self, stack: "StackInstance", node_path: str, label: str):
        self.stack = stack
        self.node_path = node_path
        self.label = label
        self.sensors: dict[str, Sensor] = {}

    @property
    def path(self) -> str:
        return f"{self.stack.name}/{self.node_path}"

    def sensor(self, name: str, kind: type = int, mode: SensorMode = SensorMode.PASSIVE) -> Sensor:
        if name in self.sensors:
            raise DuplicateSensorError(f"{self.path}: sensor {name!r} registered twice")
        sensor = self.stack.sensors.register(f"{self.stack.label}.{self.label}.{name}", kind, mode)
        self.sensors[name] = sensor
        return sensor

    def release(self) -> None:
        self.stack.sensors.mark_stale(self.sensors.values())

    def idle(self, timeout: float) -> None:
        """Wait up to ``timeout`` seconds; returns early when the stack has work."""
        runner = self.stack.runner
        if runner is None:
            time.sleep(timeout)
        else:
            runner.idle(timeout)

    def send(self, target: str, event: Event, mode=None) -> None:
        kernel = self.stack.kernel
        if kernel is None:
            raise PandoraError(f"{self.path}: inter-stack sends need a kernel")
        kernel.send_to_stack(target, event, mode)


class NodeInstance:
    __slots__ = ("node", "component", "path", "branches", "demux")

    def __init__(self, node: ComponentNode, component: Component, path: str):
        self.node = node
        self.component = component
        self.path = path
        self.branches: list[list[NodeInstance]] = []
        self.demux: dict[str, list[NodeInstance]] = {}

    def __repr__(self):
        return f"<NodeInstance {self.path} {self.node.type_id}>"


def _labels(defn: StackDefinition) -> dict[str, str]:
    """Sensor label for every node path of a definition (templates included)."""
    labels: dict[str, str] = {}
    counts: dict[str, int] = {}
    aliases = {node.alias for _, node, _ in iter_nodes(defn.body) if node.alias}
    for path, node, _ in iter_nodes(defn.body):
        if node.alias:
            labels[path] = node.alias
            continue
        n = counts.get(node.type_id, 0) + 1
        counts[node.type_id] = n
        label = node.type_id if n == 1 else f"{node.type_id}_{n}"
        while label in aliases:
            label += "_"
        labels[path] = label
    return labels


def _template_path(path: str) -> str:
    out = []
    for seg in path.split("/"):
        brace = seg.find("{")
        out.append(seg if brace < 0 else seg[:brace] + "{*}")
    return "/".join(out)


def _keys_suffix(path: str) -> str:
    suffix = ""
    for seg in path.split("/"):
        brace = seg.find("{")
        if brace >= 0:
            suffix += seg[brace:]
    return suffix


class StackInstance:
    """A live, wired stack."""

    _handles = itertools.count(1)

    def __init__(self, definition: StackDefinition, registry: FactoryRegistry,
                 sensors: Optional[SensorRegistry] = None, handle: Optional[str] = None,
                 label: Optional[str] = None, kernel=None):
        self.definition = definition
        self.registry = registry
        self.sensors = sensors if sensors is not None else SensorRegistry()
        self.handle = handle or f"s{next(self._handles)}"
        self.name = definition.name
        self.alias = definition.alias
        self.label = label or definition.alias or definition.name
        self.kernel = kernel
        self.runner = None
        self.state = StackState.CREATED
        self.body: list[NodeInstance] = []
        self.entry: Callable[[Event], None] = sink
        self._labels = _labels(definition)
        self._busy = False

    # -- construction --
    def _create(self, node: ComponentNode, path: str, created: list[Component]) -> Component:
        comp = self.registry.create(node.type_id)
        created.append(comp)
        tpath = _template_path(path)
        comp.ctx = ComponentContext(self, path, self._labels.get(tpath, node.type_id) + _keys_suffix(path))
        for binding in node.options:
            if binding.value is not None:
                comp.set_option(binding.name, binding.value)
        comp.setup()
        return comp

    def _build(self, nodes, prefix: str, created: list[Component]) -> list[NodeInstance]:
        seq = []
        for index, node in enumerate(nodes):
            path = f"{prefix}{index}"
            ni = NodeInstance(node, self._create(node, path, created), path)
            if node.alternatives is not None:
                ni.branches = [self._build(b, f"{path}.{i}/", created) for i, b in enumerate(node.alternatives)]
            seq.append(ni)
        return seq

    def build(self) -> None:
        created: list[Component] = []
        try:
            self.body = self._build(self.definition.body, "", created)
        except Exception as exc:
            for comp in reversed(created):
                try:
                    comp.destroy()
                except Exception:
                    pass
            self.body = []
            if isinstance(exc, PandoraError):
                raise
            raise InstantiationError(f"stack {self.name}: {exc}") from exc
        self.wire()

    # -- wiring --
    def wire(self) -> None:
        self.entry = self._wire_seq(self.body, sink)

    def _wire_seq(self, seq: list[NodeInstance], exit: Callable) -> Callable:
        n = len(seq)
        starts: list[Callable] = [exit] * (n + 1)
        for i in range(n - 1, -1, -1):
            ni = seq[i]
            comp = ni.component
            nxt = starts[i + 1]
            shape = ni.node.shape
            if shape is OutputKind.LINEAR:
                comp.forward = nxt
            elif shape is OutputKind.ALTERNATIVE:
                ports = tuple(self._wire_seq(b, nxt) for b in ni.branches)
                comp._ports = ports
                comp.forward = ports[0]
            else:
                comp._join = nxt
                comp._routes = {k: self._wire_seq(b, nxt) for k, b in ni.demux.items()}
                comp._open_branch = self._branch_opener(ni)
            # runner from i: consecutive linear components, ending at the
            # first multi-output node (which routes on its own)
            procs = []
            j = i
            while j < n:
                procs.append(seq[j].component.process)
                if seq[j].node.shape is not OutputKind.LINEAR:
                    break
                j += 1
            starts[i] = make_runner(procs, exit if j == n else sink)
        return starts[0]

    def _branch_opener(self, ni: NodeInstance) -> Callable:
        def open_branch(key: str):
            comp = ni.component
            cap = comp.options.get("max_categories") or 0
            if cap and len(ni.demux) >= cap:
                return None
            created: list[Component] = []
            try:
                branch = self._build(ni.node.demux, f"{ni.path}{{{key}}}/", created)
            except Exception as exc:
                for c in reversed(created):
                    c.destroy()
                if isinstance(exc, PandoraError):
                    raise
                raise InstantiationError(f"{comp.path}: branch {key!r}: {exc}") from exc
            ni.demux[key] = branch
            route = self._wire_seq(branch, comp._join)
            comp._routes[key] = route
            comp.branch_opened(key)
            return route
        return open_branch

    # -- event entry points --
    @property
    def initial(self) -> Optional[Component]:
        return self.body[0].component if self.body else None

    def inject(self, event: Event) -> None:
        """Deliver ``event`` to the input port of the initial component."""
        if self._busy:
            raise AssertionError(f"stack {self.name}: re-entrant cascade")
        self._busy = True
        try:
            self.entry(event)
        finally:
            self._busy = False

    def emit(self, event: Event) -> None:
        """Push an event produced by the initial component downstream."""
        if self._busy:
            raise AssertionError(f"stack {self.name}: re-entrant cascade")
        self._busy = True
        try:
            self.body[0].component.forward(event)
        finally:
            self._busy = False

    def run(self, limit: Optional[int] = None) -> int:
        """Drive the initial component on the calling thread until exhausted.

        For use without a kernel (tests, benchmarks, batch jobs).  Returns
        the number of events produced.
        """
        initial = self.initial
        produced = 0
        while limit is None or produced < limit:
            try:
                event = initial.produce()
            except Exhausted:
                break
            if event is not None:
                self.emit(event)
                produced += 1
        return produced

    # -- introspection --
    def walk(self) -> Iterator[NodeInstance]:
        """Every node instance in wiring order, demux branch instances included."""
        def rec(seq):
            for ni in seq:
                yield ni
                for b in ni.branches:
                    yield from rec(b)
                for b in list(ni.demux.values()):
                    yield from rec(b)
        return rec(self.body)

    def components(self) -> list[Component]:
        return [ni.component for ni in self.walk()]

    def resolve(self, segments: list[str]) -> NodeInstance:
        """Find a live node instance from path segments (``["1{udp}", "0"]``)."""
        if not segments:
            raise PathError("empty component path")
        seq = self.body
        ni = None
        for depth, seg in enumerate(segments):
            index, branch, key = parse_segment(seg)
            if not 0 <= index < len(seq):
                raise PathError(f"{self.name}: no component at index {index}")
            ni = seq[index]
            last = depth == len(segments) - 1
            if last:
                if branch is not None or key is not None:
                    raise PathError(f"{self.name}: path must end at a component index")
                return ni
            if branch is not None:
                if not ni.branches or not 0 <= branch < len(ni.branches):
                    raise PathError(f"{self.name}: {seg} is not an alternative branch")
                seq = ni.branches[branch]
            elif key is not None:
                if ni.node.demux is None:
                    raise PathError(f"{self.name}: {seg} is not a demux")
                if key not in ni.demux:
                    raise PathError(f"{self.name}: no demux branch for key {key!r}")
                seq = ni.demux[key]
            else:
                raise PathError(f"{self.name}: {seg} does not enter a branch")
        return ni

    def active_definition(self) -> StackDefinition:
        """The definition as currently running, live option values included."""
        def live(ni: NodeInstance) -> ComponentNode:
            comp = ni.component
            bindings = []
            bound = set()
            for b in ni.node.options:
                bound.add(b.name)
                if b.value is not None or b.name in comp._explicit:
                    bindings.append(OptionBinding(b.name, b.alias, comp.options[b.name]))
                else:
                    bindings.append(b)
            for name in comp._explicit:
                if name not in bound:
                    bindings.append(OptionBinding(name, None, comp.options[name]))
            alternatives = None
            if ni.node.alternatives is not None:
                alternatives = tuple(tuple(live(x) for x in b) for b in ni.branches)
            return ComponentNode(ni.node.type_id, ni.node.alias, tuple(bindings), ni.node.demux, alternatives)
        return StackDefinition(self.name, self.alias, tuple(live(ni) for ni in self.body))

    def destroy(self) -> None:
        """Destroy every component, in reverse wiring order."""
        for comp in reversed(self.components()):
            try:
                comp.destroy()
            except Exception:
                pass
        self.state = StackState.STOPPED

    def __repr__(self):
        return f"<StackInstance {self.handle} {self.name} {self.state.value}>"


def parse_segment(seg: str) -> tuple[int, Optional[int], Optional[str]]:
    """``"3"`` -> (3, None, None); ``"3.1"`` -> (3, 1, None); ``"3{udp}"`` -> (3, None, "udp")."""
    key = None
    branch = None
    head = seg
    brace = seg.find("{")
    if brace >= 0:
        if not seg.endswith("}"):
            raise PathError(f"bad path segment {seg!r}")
        key = seg[brace + 1:-1]
        head = seg[:brace]
    elif "." in seg:
        head, _, b = seg.partition(".")
        if not b.isdigit():
            raise PathError(f"bad path segment {seg!r}")
        branch = int(b)
    if not head.isdigit():
        raise PathError(f"bad path segment {seg!r}")
    return int(head), branch, key


def instantiate(definition: StackDefinition, registry: FactoryRegistry, **kwargs) -> StackInstance:
    """Validate, build and wire a stack; the result is in state CREATED."""
    if not definition.body:
        raise InstantiationError(f"stack {definition.name}: empty stack not runnable")
    diags = validate(definition, registry)
    unknown = [d for d in diags if d.code == "unknown-type"]
    if unknown:
        raise UnresolvedTypeError("; ".join(str(d) for d in unknown))
    if diags:
        raise ValidationError(diags)
    inst = StackInstance(definition, registry, **kwargs)
    inst.build()
    return inst


class ComponentPath:
    """``stack[/seg]*`` where a segment is ``i``, ``i.b`` or ``i{key}``.

    The stack selector may be a stack name, an alias or a handle.
    """

    __slots__ = ("stack", "segments")

    def __init__(self, stack: str, segments: list[str]):
        self.stack = stack
        self.segments = list(segments)

    @classmethod
    def parse(cls, text: str) -> "ComponentPath":
        # demux keys may contain '/', so split on '/' outside braces only
        parts, depth, cur = [], 0, []
        for ch in text:
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
            if ch == "/" and depth == 0:
                parts.append("".join(cur))
                cur = []
            else:
                cur.append(ch)
        parts.append("".join(cur))
        if depth != 0 or not parts[0]:
            raise PathError(f"bad component path {text!r}")
        for seg in parts[1:]:
            parse_segment(seg)
        return cls(parts[0], parts[1:])

    def __str__(self):
        return "/".join([self.stack, *self.segments])

    def __repr__(self):
        return f"ComponentPath({str(self)!r})"
