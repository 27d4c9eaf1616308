"""Live reconfiguration of a running stack by diffing definitions.

Nodes of the old and new definitions are matched in two phases:

1. identical alias and type id, anywhere in the stack;
2. among the still unmatched nodes, identical type id at the same position
   of corresponding sequences (the body, or the same alternative branch of
   two matched nodes), unless both nodes carry (different) aliases.

Matched nodes keep their component instance and its state.  Nodes inside a
demux branch template are never matched on their own: the branch instances
of a kept demux survive when its template keeps the same shape, and are
rebuilt otherwise.  Aliases are the reliable way to guarantee preservation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .adl import ComponentNode, OptionBinding, StackDefinition, iter_nodes, validate
from .assembly import NodeInstance, StackInstance, StackState, _labels
from .core import Component
from .errors import NotRunningError, PandoraError, ReconfigError, ValidationError

END = "<end>"


@dataclass(frozen=True)
class Match:
    old_path: str
    new_path: str
    node: ComponentNode


@dataclass(frozen=True)
class Edge:
    source: str
    port: str
    target: str


@dataclass
class ReconfigPlan:
    keep: list[Match] = field(default_factory=list)
    create: list[str] = field(default_factory=list)
    destroy: list[str] = field(default_factory=list)
    rewire: list[Edge] = field(default_factory=list)
    option_updates: list[tuple[str, OptionBinding]] = field(default_factory=list)

    @property
    def is_identity(self) -> bool:
        return not (self.create or self.destroy or self.rewire or self.option_updates)

    def summary(self) -> str:
        return (f"keep={len(self.keep)} create={len(self.create)} destroy={len(self.destroy)} "
                f"rewire={len(self.rewire)} options={len(self.option_updates)}")


def _instance_nodes(defn: StackDefinition) -> dict[str, ComponentNode]:
    """Nodes that become instances at start (demux templates excluded)."""
    return {p: n for p, n, t in iter_nodes(defn.body) if not t}


def _match(old: StackDefinition, new: StackDefinition) -> dict[str, str]:
    """new path -> old path"""
    old_nodes = _instance_nodes(old)
    new_nodes = _instance_nodes(new)
    matched: dict[str, str] = {}
    taken: set[str] = set()

    by_alias = {(n.alias, n.type_id): p for p, n in old_nodes.items() if n.alias}
    for p, n in new_nodes.items():
        if n.alias:
            o = by_alias.get((n.alias, n.type_id))
            if o is not None:
                matched[p] = o
                taken.add(o)

    def walk(new_seq, new_prefix, old_seq, old_prefix):
        for i, node in enumerate(new_seq):
            np = f"{new_prefix}{i}"
            op = f"{old_prefix}{i}" if old_seq is not None and i < len(old_seq) else None
            if np not in matched and op is not None and op not in taken:
                cand = old_seq[i]
                if cand.type_id == node.type_id and not (cand.alias and node.alias):
                    matched[np] = op
                    taken.add(op)
            if node.alternatives is None:
                continue
            o = matched.get(np)
            onode = old_nodes.get(o) if o is not None else None
            for b, branch in enumerate(node.alternatives):
                if onode is not None and onode.alternatives is not None and b < len(onode.alternatives):
                    walk(branch, f"{np}.{b}/", onode.alternatives[b], f"{o}.{b}/")
                else:
                    walk(branch, f"{np}.{b}/", None, None)

    walk(new.body, "", old.body, "")
    return matched


def _edges(body, ident) -> set[Edge]:
    out: set[Edge] = set()

    def seq(nodes, prefix, join):
        for i, node in enumerate(nodes):
            p = f"{prefix}{i}"
            nxt = ident(f"{prefix}{i + 1}") if i + 1 < len(nodes) else join
            src = ident(p)
            if node.alternatives is not None:
                for b, branch in enumerate(node.alternatives):
                    out.add(Edge(src, str(b), ident(f"{p}.{b}/0")))
                    seq(branch, f"{p}.{b}/", nxt)
            elif node.demux is not None:
                out.add(Edge(src, "join", nxt))
            else:
                out.add(Edge(src, "out", nxt))

    seq(body, "", END)
    return out


def _shape_of(nodes):
    """The template with option bindings removed."""
    return tuple(
        ComponentNode(n.type_id, n.alias, (),
                      _shape_of(n.demux) if n.demux is not None else None,
                      tuple(_shape_of(b) for b in n.alternatives) if n.alternatives is not None else None)
        for n in nodes)


def _option_delta(old: ComponentNode, new: ComponentNode) -> list[OptionBinding]:
    """Bindings to apply to a kept node; a binding without value is a reset."""
    delta = []
    old_vals = {b.name: b.value for b in old.options if b.value is not None}
    new_vals = {b.name: b.value for b in new.options if b.value is not None}
    for name, value in new_vals.items():
        if name not in old_vals or OptionBinding(name, None, old_vals[name]) != OptionBinding(name, None, value):
            delta.append(OptionBinding(name, None, value))
    for name in old_vals:
        if name not in new_vals:
            delta.append(OptionBinding(name))
    return delta


def diff(old: StackDefinition, new: StackDefinition) -> ReconfigPlan:
    matched = _match(old, new)
    old_nodes = _instance_nodes(old)
    new_nodes = _instance_nodes(new)
    plan = ReconfigPlan()
    for np, node in new_nodes.items():
        op = matched.get(np)
        if op is None:
            plan.create.append(np)
            continue
        plan.keep.append(Match(op, np, node))
        for binding in _option_delta(old_nodes[op], node):
            plan.option_updates.append((op, binding))
    kept = set(matched.values())
    plan.destroy = [p for p in old_nodes if p not in kept]
    old_edges = _edges(old.body, lambda p: f"old:{p}" if p in old_nodes else END)
    new_edges = _edges(new.body, lambda p: (f"old:{matched[p]}" if p in matched else f"new:{p}")
                       if p in new_nodes else END)
    plan.rewire = sorted(new_edges - old_edges, key=lambda e: (e.source, e.port, e.target))
    return plan


# -- application ------------------------------------------------------------------

class _Transaction:
    """Undo log for one application."""

    def __init__(self):
        self.created: list[Component] = []
        self.options: dict[int, tuple[Component, dict, list]] = {}
        self.paths: dict[int, tuple[Component, str]] = {}

    def touch(self, comp: Component) -> None:
        if id(comp) not in self.options:
            self.options[id(comp)] = (comp, dict(comp.options), list(comp._explicit))

    def move(self, comp: Component, path: str) -> None:
        if id(comp) not in self.paths:
            self.paths[id(comp)] = (comp, comp.ctx.node_path)
        comp.ctx.node_path = path

    def rollback(self) -> None:
        for comp in reversed(self.created):
            try:
                comp.destroy()
            except Exception:
                pass
        for comp, options, explicit in self.options.values():
            changed = [k for k, v in options.items() if comp.options.get(k) != v or
                       type(comp.options.get(k)) is not type(v)]
            comp.options = options
            comp._explicit = explicit
            for name in changed:
                comp.option_changed(name, options[name])
        for comp, path in self.paths.values():
            comp.ctx.node_path = path


def _apply_options(comp: Component, node: ComponentNode, tx: _Transaction) -> None:
    """Bring a kept component's options in line with ``node``, judged
    against its live values so runtime SETs are taken into account."""
    wanted = {b.name: b.value for b in node.options if b.value is not None}
    sets = [(k, v) for k, v in wanted.items()
            if k not in comp._explicit or OptionBinding(k, None, comp.options[k]) != OptionBinding(k, None, v)]
    resets = [k for k in comp._explicit if k not in wanted]
    if not (sets or resets):
        return
    tx.touch(comp)
    for name in resets:
        comp.reset_option(name)
    for name, value in sets:
        comp.set_option(name, value)


def _retarget(seq: list[NodeInstance], nodes, prefix: str, tx: _Transaction) -> list[NodeInstance]:
    """Copy preserved branch instances onto a same-shaped template."""
    out = []
    for i, (ni, node) in enumerate(zip(seq, nodes)):
        path = f"{prefix}{i}"
        _apply_options(ni.component, node, tx)
        tx.move(ni.component, path)
        copy = NodeInstance(node, ni.component, path)
        if node.alternatives is not None:
            copy.branches = [_retarget(b, nb, f"{path}.{k}/", tx)
                             for k, (b, nb) in enumerate(zip(ni.branches, node.alternatives))]
        elif node.demux is not None:
            copy.demux = {key: _retarget(b, node.demux, f"{path}{{{key}}}/", tx) for key, b in ni.demux.items()}
        out.append(copy)
    return out


def apply(inst: StackInstance, new: StackDefinition) -> ReconfigPlan:
    """Reconfigure ``inst`` in place so that it runs ``new``."""
    if inst.state not in (StackState.RUNNING, StackState.CREATED):
        raise NotRunningError(f"stack {inst.name} is not running")
    if not new.body:
        raise ReconfigError(f"stack {inst.name}: empty stack not runnable")
    diags = validate(new, inst.registry)
    if diags:
        raise ValidationError(diags)
    new = replace(new, name=inst.name, alias=inst.alias)
    runner = inst.runner
    if runner is None:
        return _apply(inst, new)
    with runner.parked():
        return _apply(inst, new)


def _apply(inst: StackInstance, new: StackDefinition) -> ReconfigPlan:
    old = inst.active_definition()
    plan = diff(old, new)
    old_by_path = {ni.path: ni for ni in inst.walk() if "{" not in ni.path}
    new_to_old = {m.new_path: m.old_path for m in plan.keep}

    # labels of created nodes must not collide with those of kept nodes
    labels = _labels(new)
    kept_labels = {old_by_path[o].component.ctx.label for o in new_to_old.values()}
    for p, label in list(labels.items()):
        if p in new_to_old:
            labels[p] = old_by_path[new_to_old[p]].component.ctx.label
        else:
            while label in kept_labels:
                label += "_"
            labels[p] = label

    tx = _Transaction()
    retired: list[Component] = []
    saved = (inst.body, inst.definition, inst._labels)

    def build(nodes, prefix) -> list[NodeInstance]:
        seq = []
        for i, node in enumerate(nodes):
            path = f"{prefix}{i}"
            op = new_to_old.get(path)
            if op is None:
                ni = NodeInstance(node, inst._create(node, path, tx.created), path)
            else:
                old_ni = old_by_path[op]
                comp = old_ni.component
                _apply_options(comp, node, tx)
                tx.move(comp, path)
                ni = NodeInstance(node, comp, path)
                if node.demux is not None and old_ni.demux:
                    if _shape_of(node.demux) == _shape_of(old_ni.node.demux):
                        ni.demux = {k: _retarget(b, node.demux, f"{path}{{{k}}}/", tx)
                                    for k, b in old_ni.demux.items()}
                    else:
                        retired.extend(_components(old_ni.demux.values()))
            if node.alternatives is not None:
                ni.branches = [build(b, f"{path}.{k}/") for k, b in enumerate(node.alternatives)]
            seq.append(ni)
        return seq

    try:
        inst._labels = labels
        body = build(new.body, "")
        inst.body, inst.definition = body, new
        inst.wire()
    except Exception as exc:
        tx.rollback()
        inst.body, inst.definition, inst._labels = saved
        inst.wire()
        if isinstance(exc, PandoraError):
            raise
        raise ReconfigError(f"stack {inst.name}: reconfiguration failed: {exc}") from exc

    # destruction last, in reverse wiring order
    for op in reversed(plan.destroy):
        old_ni = old_by_path[op]
        retired.extend(_components(old_ni.demux.values()))
        retired.append(old_ni.component)
    for comp in reversed(retired):
        try:
            comp.destroy()
        except Exception:
            pass
    return plan


def _components(seqs) -> list[Component]:
    out = []

    def rec(seq):
        for ni in seq:
            out.append(ni.component)
            for b in ni.branches:
                rec(b)
            for b in ni.demux.values():
                rec(b)
    for s in seqs:
        rec(s)
    return out
