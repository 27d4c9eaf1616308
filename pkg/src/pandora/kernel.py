"""Micro-kernel: stack lifecycle, execution contexts, inter-stack messaging
and the store of definitions.

Every running stack owns one thread.  That thread alternates between three
duties: running control work submitted to it (synchronous sends, live option
changes, parking for reconfiguration), draining the stack's mailbox, and
asking the initial component for the next event.  Control operations are
serialized by a re-entrant lock.
"""

from __future__ import annotations

import collections
import enum
import logging
import queue
import threading
from concurrent.futures import Future
from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Any, Callable, Optional, Union

from .adl import ComponentNode, StackDefinition, parse_config, render_stack, validate
from .assembly import ComponentPath, FactoryRegistry, StackInstance, StackState, instantiate, parse_segment
from .core import Event, Exhausted, Scalar
from .errors import (
    AliasCollisionError,
    AmbiguousStackError,
    DeadlockError,
    NotRunningError,
    OptionError,
    PathError,
    StackError,
    UnknownHandleError,
    UnknownOptionError,
    UnknownStackError,
    ValidationError,
)
from .sensors import Sensor, SensorRegistry

log = logging.getLogger(__name__)


class SendMode(enum.Enum):
    SYNC = "sync"
    ASYNC = "async"


class OverflowPolicy(enum.Enum):
    BLOCK = "block"
    DROP_NEWEST = "drop_newest"


class Scope(enum.Enum):
    STORED = "stored"
    ACTIVE = "active"


DEFAULT_MAILBOX_CAPACITY = 1024


class Mailbox:
    """Bounded multi-producer, single-consumer event queue."""

    def __init__(self, capacity: int = DEFAULT_MAILBOX_CAPACITY,
                 policy: OverflowPolicy = OverflowPolicy.BLOCK, dropped: Optional[Sensor] = None):
        if capacity < 1:
            raise ValueError("mailbox capacity must be positive")
        self.capacity = capacity
        self.policy = policy
        self.dropped = dropped if dropped is not None else Sensor("mailbox.dropped")
        self._q: queue.Queue = queue.Queue(capacity)

    def put(self, event: Event, alive: Callable[[], bool] = lambda: True) -> bool:
        """Enqueue; returns False when the event was dropped."""
        if self.policy is OverflowPolicy.DROP_NEWEST:
            try:
                self._q.put_nowait(event)
            except queue.Full:
                self.dropped.add(1)
                return False
            return True
        while True:
            try:
                self._q.put(event, timeout=0.05)
                return True
            except queue.Full:
                if not alive():
                    raise NotRunningError("target stack stopped while sender was blocked")

    def get_nowait(self) -> Optional[Event]:
        try:
            return self._q.get_nowait()
        except queue.Empty:
            return None

    def __len__(self):
        return self._q.qsize()


class StackRunner:
    """The execution context of one running stack."""

    def __init__(self, inst: StackInstance, mailbox: Mailbox, errors: Sensor):
        self.inst = inst
        self.mailbox = mailbox
        self.errors = errors
        self.exhausted = threading.Event()
        self.stopped = threading.Event()
        self._work: collections.deque = collections.deque()
        self._wake = threading.Event()
        self._stop = False
        self._thread = threading.Thread(target=self._main, name=f"stack-{inst.handle}", daemon=True)

    def start(self) -> None:
        self._thread.start()

    def on_context(self) -> bool:
        return threading.current_thread() is self._thread

    def notify(self) -> None:
        self._wake.set()

    def idle(self, timeout: float) -> None:
        self._wake.wait(timeout)

    def submit(self, fn: Callable[[], Any]) -> Future:
        fut: Future = Future()
        if self.stopped.is_set():
            fut.set_exception(NotRunningError(f"stack {self.inst.name} is not running"))
            return fut
        self._work.append((fn, fut))
        self._wake.set()
        if self.stopped.is_set():
            self._fail_pending()
        return fut

    def call(self, fn: Callable[[], Any]) -> Any:
        """Run ``fn`` on this stack's context and wait for its result."""
        if self.on_context():
            raise DeadlockError(f"synchronous call from stack {self.inst.name} into itself")
        return self.submit(fn).result()

    def call_or_inline(self, fn: Callable[[], Any]) -> Any:
        if self.on_context():
            return fn()
        return self.submit(fn).result()

    @contextmanager
    def parked(self):
        """Hold the context between two cascades while the body runs."""
        if self.on_context():
            yield
            return
        entered, release = threading.Event(), threading.Event()

        def hold():
            entered.set()
            release.wait()

        fut = self.submit(hold)
        while not entered.wait(0.05):
            if fut.done():
                fut.result()
        try:
            yield
        finally:
            release.set()
            fut.result()

    def stop(self) -> None:
        if self.on_context():
            raise DeadlockError(f"stack {self.inst.name} cannot stop itself synchronously")
        self._stop = True
        self._wake.set()
        self._thread.join()

    def wait_exhausted(self, timeout: Optional[float] = None) -> bool:
        """Wait until the initial component is done and the mailbox is empty."""
        if not self.exhausted.wait(timeout):
            return False
        # one more round trip guarantees every queued event was drained
        if not self.stopped.is_set():
            try:
                self.call(lambda: None)
            except NotRunningError:
                pass
        return True

    # -- loop --
    def _run_work(self) -> None:
        work = self._work
        while work:
            fn, fut = work.popleft()
            if not fut.set_running_or_notify_cancel():
                continue
            try:
                fut.set_result(fn())
            except BaseException as exc:
                fut.set_exception(exc)

    def _drain_mailbox(self) -> bool:
        inst, box = self.inst, self.mailbox
        any_ = False
        while True:
            event = box.get_nowait()
            if event is None:
                return any_
            any_ = True
            self._guarded(inst.inject, event)

    def _guarded(self, fn, event) -> None:
        try:
            fn(event)
        except Exception:
            self.errors.add(1)
            log.exception("stack %s: component failure", self.inst.name)

    def _main(self) -> None:
        inst = self.inst
        producer = None
        done = True
        try:
            while True:
                self._wake.clear()
                if self._work:
                    self._run_work()
                if self._stop:
                    break
                drained = self._drain_mailbox()
                initial = inst.initial
                if initial is not producer:
                    producer = initial
                    done = not type(initial).initial_capable()
                    if done:
                        self.exhausted.set()
                    else:
                        self.exhausted.clear()
                if not done:
                    try:
                        event = producer.produce()
                    except Exhausted:
                        done = True
                        self.exhausted.set()
                        continue
                    except Exception:
                        self.errors.add(1)
                        log.exception("stack %s: initial component failed", inst.name)
                        done = True
                        self.exhausted.set()
                        continue
                    if event is not None:
                        self._guarded(inst.emit, event)
                    continue
                if not drained and not self._work:
                    self._wake.wait(0.1)
            # the mailbox is drained, not discarded, when a stack stops
            self._drain_mailbox()
        finally:
            inst.state = StackState.STOPPING
            self.stopped.set()
            self._fail_pending()
            inst.destroy()

    def _fail_pending(self) -> None:
        while self._work:
            try:
                _, fut = self._work.popleft()
            except IndexError:
                break
            if fut.set_running_or_notify_cancel():
                fut.set_exception(NotRunningError(f"stack {self.inst.name} stopped"))


@dataclass(frozen=True)
class StackInfo:
    handle: str
    name: str
    alias: Optional[str]
    state: StackState


def _walk_definition(body: tuple, segments: list[str]) -> tuple[ComponentNode, Callable]:
    """Find a node of a stored definition and a function rebuilding the body
    with that node replaced.  Demux key segments address the template."""
    if not segments:
        raise PathError("empty component path")
    index, branch, key = parse_segment(segments[0])
    if not 0 <= index < len(body):
        raise PathError(f"no component at index {index}")
    node = body[index]

    def rebuild(new_node):
        return body[:index] + (new_node,) + body[index + 1:]

    if len(segments) == 1:
        if branch is not None or key is not None:
            raise PathError("path must end at a component index")
        return node, rebuild
    if key is not None:
        if node.demux is None:
            raise PathError(f"{segments[0]} is not a demux")
        inner, inner_rebuild = _walk_definition(node.demux, segments[1:])
        return inner, lambda n: rebuild(replace(node, demux=inner_rebuild(n)))
    if branch is not None:
        if node.alternatives is None or not 0 <= branch < len(node.alternatives):
            raise PathError(f"{segments[0]} is not an alternative branch")
        inner, inner_rebuild = _walk_definition(node.alternatives[branch], segments[1:])

        def rebuild_alt(n):
            alts = list(node.alternatives)
            alts[branch] = inner_rebuild(n)
            return rebuild(replace(node, alternatives=tuple(alts)))
        return inner, rebuild_alt
    raise PathError(f"{segments[0]} does not enter a branch")


class Kernel:
    def __init__(self, registry: Optional[FactoryRegistry] = None,
                 mailbox_capacity: int = DEFAULT_MAILBOX_CAPACITY,
                 overflow: OverflowPolicy = OverflowPolicy.BLOCK):
        if registry is None:
            from .stdlib import default_registry
            registry = default_registry()
        self.registry = registry
        self.sensors = SensorRegistry()
        self.mailbox_capacity = mailbox_capacity
        self.overflow = overflow
        self.lock = threading.RLock()
        self._stored: dict[str, StackDefinition] = {}
        self._instances: dict[str, StackInstance] = {}
        self._aliases: dict[str, str] = {}
        self._next_handle = 1

    # -- stored definitions --
    def store_definition(self, defn: StackDefinition) -> None:
        diags = validate(defn, self.registry)
        if diags:
            raise ValidationError(diags)
        with self.lock:
            self._stored[defn.name] = defn

    def load_config(self, text: str) -> list[str]:
        """Parse and store every definition of a config text, all or nothing."""
        defs = parse_config(text)
        names = [d.name for d in defs]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ValidationError([f"stack {n} defined more than once" for n in sorted(dupes)])
        diags = [d for defn in defs for d in validate(defn, self.registry)]
        if diags:
            raise ValidationError(diags)
        with self.lock:
            for defn in defs:
                self._stored[defn.name] = defn
        return names

    def load_config_file(self, path) -> list[str]:
        with open(path, encoding="utf-8") as fh:
            return self.load_config(fh.read())

    def stored(self, name: str) -> StackDefinition:
        try:
            return self._stored[name]
        except KeyError:
            raise UnknownStackError(f"no stored definition named {name!r}") from None

    def stored_names(self) -> list[str]:
        return sorted(self._stored)

    # -- lifecycle --
    def start_stack(self, target: Union[str, StackDefinition], alias: Optional[str] = None,
                    mailbox_capacity: Optional[int] = None,
                    overflow: Optional[OverflowPolicy] = None) -> str:
        with self.lock:
            defn = self.stored(target) if isinstance(target, str) else target
            alias = alias or defn.alias
            if alias is not None and alias in self._aliases:
                raise AliasCollisionError(f"alias {alias!r} is already in use by {self._aliases[alias]}")
            handle = f"h{self._next_handle}"
            label = alias or defn.name
            if any(i.label == label for i in self._running()):
                label = handle
            defn = replace(defn, alias=alias)
            inst = instantiate(defn, self.registry, sensors=self.sensors, handle=handle, label=label, kernel=self)
            self._next_handle += 1
            box = Mailbox(mailbox_capacity or self.mailbox_capacity, overflow or self.overflow,
                          self.sensors.register(f"kernel.{handle}.mailbox_dropped"))
            runner = StackRunner(inst, box, self.sensors.register(f"kernel.{handle}.errors"))
            inst.runner = runner
            inst.state = StackState.RUNNING
            self._instances[handle] = inst
            if alias is not None:
                self._aliases[alias] = handle
            runner.start()
            return handle

    def stop_stack(self, handle: str) -> None:
        with self.lock:
            inst = self._instances.get(handle)
            if inst is None:
                h = self._aliases.get(handle)
                inst = self._instances.get(h) if h else None
            if inst is None or inst.state is not StackState.RUNNING:
                raise UnknownHandleError(f"no running stack with handle {handle!r}")
            inst.state = StackState.STOPPING
            if inst.alias is not None and self._aliases.get(inst.alias) == inst.handle:
                del self._aliases[inst.alias]
            inst.runner.stop()
            inst.state = StackState.STOPPED

    def list_stacks(self) -> list[StackInfo]:
        with self.lock:
            return [StackInfo(i.handle, i.name, i.alias, i.state) for i in self._instances.values()]

    def shutdown(self) -> None:
        with self.lock:
            for inst in list(self._running()):
                self.stop_stack(inst.handle)

    def _running(self):
        return [i for i in self._instances.values() if i.state is StackState.RUNNING]

    def instance(self, selector: str, running: bool = True) -> StackInstance:
        """Resolve a handle, alias or stack name to an instance."""
        inst = self._instances.get(selector)
        if inst is None:
            h = self._aliases.get(selector)
            if h is not None:
                inst = self._instances[h]
        if inst is None:
            live = [i for i in self._running() if i.name == selector]
            if len(live) > 1:
                raise AmbiguousStackError(
                    f"{len(live)} running instances of {selector!r}; use a handle or alias")
            if live:
                inst = live[0]
        if inst is None:
            dead = [i for i in self._instances.values() if selector in (i.name, i.alias)]
            if dead:
                inst = dead[-1]
        if inst is None:
            raise UnknownStackError(f"no stack instance matches {selector!r}")
        if running and inst.state is not StackState.RUNNING:
            raise NotRunningError(f"stack {selector} is not running")
        return inst

    def wait_exhausted(self, selector: str, timeout: Optional[float] = None) -> bool:
        return self.instance(selector).runner.wait_exhausted(timeout)

    # -- inter-stack communication --
    def send_to_stack(self, target: str, event: Event, mode: Optional[SendMode] = SendMode.SYNC) -> None:
        # deliberately lock-free: components call this from stack contexts
        inst = self.instance(target)
        runner = inst.runner
        if mode is SendMode.ASYNC:
            runner.mailbox.put(event, lambda: inst.state is StackState.RUNNING)
            runner.notify()
        else:
            runner.call(lambda: inst.inject(event))

    # -- reconfiguration --
    def reconfigure(self, selector: str, new: StackDefinition):
        from .reconfig import apply
        with self.lock:
            return apply(self.instance(selector), new)

    # -- options --
    def _live_component(self, path: ComponentPath):
        inst = self.instance(path.stack)
        return inst, inst.resolve(path.segments)

    @staticmethod
    def _option_name(node: ComponentNode, contract, name: str) -> str:
        if contract.option(name) is not None:
            return name
        for b in node.options:
            if b.alias == name:
                return b.name
        raise UnknownOptionError(f"{node.type_id} has no option {name!r}")

    def get_option(self, scope: Scope, path: Union[str, ComponentPath], name: str) -> Scalar:
        if isinstance(path, str):
            path = ComponentPath.parse(path)
        with self.lock:
            if scope is Scope.ACTIVE:
                inst, ni = self._live_component(path)
                real = self._option_name(ni.node, ni.component.contract(), name)
                value = ni.component.options.get(real)
            else:
                defn = self.stored(path.stack)
                node, _ = _walk_definition(defn.body, path.segments)
                contract = self.registry.contract(node.type_id)
                real = self._option_name(node, contract, name)
                binding = next((b for b in node.options if b.name == real), None)
                value = binding.value if binding is not None and binding.value is not None \
                    else contract.option(real).default
            if value is None:
                err = OptionError(f"option {real} has no value", str(path))
                err.code = "unset"
                raise err
            return value

    def set_option(self, scope: Scope, path: Union[str, ComponentPath], name: str, value: Scalar) -> Scalar:
        if isinstance(path, str):
            path = ComponentPath.parse(path)
        with self.lock:
            if scope is Scope.ACTIVE:
                inst, ni = self._live_component(path)
                comp = ni.component
                real = self._option_name(ni.node, comp.contract(), name)
                return inst.runner.call_or_inline(lambda: comp.set_option(real, value))
            defn = self.stored(path.stack)
            node, rebuild = _walk_definition(defn.body, path.segments)
            contract = self.registry.contract(node.type_id)
            real = self._option_name(node, contract, name)
            value = contract.option(real).coerce(value, str(path))
            self._stored[defn.name] = replace(defn, body=rebuild(node.with_option(real, value)))
            return value

    # -- reflection --
    def snapshot(self) -> dict:
        """Comparable picture of stored and active configuration."""
        with self.lock:
            return {
                "stored": {n: render_stack(d) for n, d in sorted(self._stored.items())},
                "instances": [
                    {"handle": i.handle, "name": i.name, "alias": i.alias, "state": i.state.value,
                     "active": render_stack(i.active_definition()) if i.state is StackState.RUNNING else None}
                    for i in self._instances.values()
                ],
            }

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
