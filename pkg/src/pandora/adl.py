"""Stack description language: parser, canonical renderer and validation.

Grammar (whitespace and ``#`` comments may appear between any two tokens)::

    file        ::= stack*
    stack       ::= '%' id alias? '{' component* '}'
    component   ::= simple | demux | alternative
    simple      ::= '@' id alias? options?
    options     ::= '[' option (',' option)* ']'
    alias       ::= ':' id
    demux       ::= simple '<' branch '>'
    alternative ::= simple '(' branch ('|' branch)* ')'
    branch      ::= component+
    option      ::= '$' id alias? ('=' value)?
    id          ::= [a-zA-Z][a-zA-Z0-9_]*
    value       ::= integer | float | boolean | '"' chars '"'

Integers are decimal with an optional sign.  Floats need a decimal point
(``1.``, ``-0.5``, ``2.5e-3``).  Booleans are ``true`` and ``false``.  Inside
strings only ``\\"`` and ``\\\\`` are escapes; any other backslash is an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .core import (
    ComponentContract,
    OutputKind,
    Scalar,
    format_scalar,
    kind_of,
)
from .errors import AdlSyntaxError, DuplicateAliasError, OptionError


# -- syntax tree ----------------------------------------------------------------

def _scalar_key(value):
    # 1 == 1.0 == True in Python; structural equality must not conflate kinds
    return None if value is None else (type(value).__name__, value)


@dataclass(frozen=True, eq=False)
class OptionBinding:
    name: str
    alias: Optional[str] = None
    value: Optional[Scalar] = None

    def _key(self):
        return (self.name, self.alias, _scalar_key(self.value))

    def __eq__(self, other):
        if not isinstance(other, OptionBinding):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


@dataclass(frozen=True)
class ComponentNode:
    type_id: str
    alias: Optional[str] = None
    options: tuple[OptionBinding, ...] = ()
    # exactly one of these is set for a multi-output node
    demux: Optional[tuple["ComponentNode", ...]] = None
    alternatives: Optional[tuple[tuple["ComponentNode", ...], ...]] = None

    def __post_init__(self):
        if self.demux is not None and self.alternatives is not None:
            raise ValueError("a node is either a demux or an alternative, not both")
        if self.demux is not None and not self.demux:
            raise ValueError("demux branch must not be empty")
        if self.alternatives is not None:
            if not self.alternatives or any(not b for b in self.alternatives):
                raise ValueError("alternative branches must not be empty")

    @property
    def shape(self) -> OutputKind:
        if self.demux is not None:
            return OutputKind.DEMUX
        if self.alternatives is not None:
            return OutputKind.ALTERNATIVE
        return OutputKind.LINEAR

    def option(self, name: str) -> Optional[OptionBinding]:
        for binding in self.options:
            if binding.name == name or binding.alias == name:
                return binding
        return None

    def with_option(self, name: str, value: Scalar) -> "ComponentNode":
        """Copy with option ``name`` bound to ``value``."""
        out, found = [], False
        for binding in self.options:
            if binding.name == name:
                binding = OptionBinding(binding.name, binding.alias, value)
                found = True
            out.append(binding)
        if not found:
            out.append(OptionBinding(name, None, value))
        return ComponentNode(self.type_id, self.alias, tuple(out), self.demux, self.alternatives)


@dataclass(frozen=True)
class StackDefinition:
    name: str
    alias: Optional[str] = None
    body: tuple[ComponentNode, ...] = ()


def iter_nodes(nodes: Sequence[ComponentNode], prefix: str = "",
               in_template: bool = False) -> Iterator[tuple[str, ComponentNode, bool]]:
    """Pre-order walk yielding ``(path, node, inside_demux_template)``.

    Paths use the control-protocol segment syntax: ``i`` for a position,
    ``i.b/`` to enter alternative branch ``b`` and ``i{*}/`` to enter a demux
    branch template.
    """
    for index, node in enumerate(nodes):
        path = f"{prefix}{index}"
        yield path, node, in_template
        if node.demux is not None:
            yield from iter_nodes(node.demux, f"{prefix}{index}{{*}}/", True)
        elif node.alternatives is not None:
            for b, branch in enumerate(node.alternatives):
                yield from iter_nodes(branch, f"{prefix}{index}.{b}/", in_template)


# -- lexer --------------------------------------------------------------------------

_PUNCT = set("%@$:{}[],<>()|=")

IDENT, INT, FLOAT, STRING, PUNCT, EOF = "identifier", "integer", "float", "string", "punct", "end of input"


@dataclass
class Token:
    kind: str
    text: str
    value: object
    line: int
    column: int


def _is_alpha(ch: str) -> bool:
    return ("a" <= ch <= "z") or ("A" <= ch <= "Z")


def _is_digit(ch: str) -> bool:
    return "0" <= ch <= "9"


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(text)

    def error(msg, expected=()):
        raise AdlSyntaxError(msg, line, col, frozenset(expected))

    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r\f\v":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start, start_col = i, col
        if ch in _PUNCT:
            tokens.append(Token(PUNCT, ch, ch, line, col))
            i += 1
            col += 1
            continue
        if _is_alpha(ch):
            i += 1
            while i < n and (_is_alpha(text[i]) or _is_digit(text[i]) or text[i] == "_"):
                i += 1
            word = text[start:i]
            tokens.append(Token(IDENT, word, word, line, start_col))
            col += i - start
            continue
        if _is_digit(ch) or (ch in "+-" and i + 1 < n and _is_digit(text[i + 1])):
            i += 1
            while i < n and _is_digit(text[i]):
                i += 1
            kind = INT
            if i < n and text[i] == ".":
                kind = FLOAT
                i += 1
                while i < n and _is_digit(text[i]):
                    i += 1
                if i < n and text[i] in "eE":
                    j = i + 1
                    if j < n and text[j] in "+-":
                        j += 1
                    if j < n and _is_digit(text[j]):
                        i = j
                        while i < n and _is_digit(text[i]):
                            i += 1
            literal = text[start:i]
            value = int(literal) if kind is INT else float(literal)
            tokens.append(Token(kind, literal, value, line, start_col))
            col += i - start
            continue
        if ch == '"':
            i += 1
            col += 1
            chars = []
            while True:
                if i >= n:
                    raise AdlSyntaxError("unterminated string", line, col, frozenset({'"'}))
                c = text[i]
                if c == '"':
                    i += 1
                    col += 1
                    break
                if c == "\\":
                    nxt = text[i + 1] if i + 1 < n else ""
                    if nxt not in ('"', "\\"):
                        raise AdlSyntaxError(f"invalid escape \\{nxt}", line, col, frozenset({'\\"', "\\\\"}))
                    chars.append(nxt)
                    i += 2
                    col += 2
                    continue
                chars.append(c)
                i += 1
                if c == "\n":
                    line += 1
                    col = 1
                else:
                    col += 1
            tokens.append(Token(STRING, text[start:i], "".join(chars), line, start_col))
            continue
        error(f"unexpected character {ch!r}")
    tokens.append(Token(EOF, "", None, line, col))
    return tokens


# -- parser -----------------------------------------------------------------------------

_COMPONENT_START = frozenset({"@"})


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def fail(self, expected):
        tok = self.tok
        found = "end of input" if tok.kind is EOF else repr(tok.text)
        raise AdlSyntaxError(f"unexpected {found}", tok.line, tok.column, frozenset(expected))

    def at(self, punct: str) -> bool:
        tok = self.tok
        return tok.kind is PUNCT and tok.text == punct

    def expect(self, punct: str, also=()):
        if not self.at(punct):
            self.fail({repr(punct), *also})
        self.pos += 1

    def ident(self) -> str:
        tok = self.tok
        if tok.kind is not IDENT:
            self.fail({IDENT})
        self.pos += 1
        return tok.text

    def maybe_alias(self) -> Optional[str]:
        if self.at(":"):
            self.pos += 1
            return self.ident()
        return None

    def stacks(self) -> list[StackDefinition]:
        out = []
        while self.tok.kind is not EOF:
            if not self.at("%"):
                self.fail({"'%'", EOF})
            out.append(self.stack())
        return out

    def stack(self) -> StackDefinition:
        self.expect("%")
        name = self.ident()
        alias = self.maybe_alias()
        self.expect("{", () if alias else ("':'",))
        body = []
        while not self.at("}"):
            if not self.at("@"):
                self.fail({"'@'", "'}'"})
            body.append(self.component())
        self.pos += 1
        return StackDefinition(name, alias, tuple(body))

    def component(self) -> ComponentNode:
        self.expect("@")
        type_id = self.ident()
        alias = self.maybe_alias()
        options: tuple[OptionBinding, ...] = ()
        if self.at("["):
            self.pos += 1
            opts = [self.option()]
            while self.at(","):
                self.pos += 1
                opts.append(self.option())
            self.expect("]", ("','",))
            options = tuple(opts)
        if self.at("<"):
            self.pos += 1
            branch = self.branch({"'>'"})
            self.expect(">", ("'@'",))
            return ComponentNode(type_id, alias, options, demux=branch)
        if self.at("("):
            self.pos += 1
            branches = [self.branch({"'|'", "')'"})]
            while self.at("|"):
                self.pos += 1
                branches.append(self.branch({"'|'", "')'"}))
            self.expect(")", ("'|'", "'@'"))
            return ComponentNode(type_id, alias, options, alternatives=tuple(branches))
        return ComponentNode(type_id, alias, options)

    def branch(self, closers) -> tuple[ComponentNode, ...]:
        if not self.at("@"):
            self.fail({"'@'"})
        nodes = [self.component()]
        while self.at("@"):
            nodes.append(self.component())
        return tuple(nodes)

    def option(self) -> OptionBinding:
        self.expect("$")
        name = self.ident()
        alias = self.maybe_alias()
        value = None
        if self.at("="):
            self.pos += 1
            value = self.value()
        return OptionBinding(name, alias, value)

    def value(self) -> Scalar:
        tok = self.tok
        if tok.kind in (INT, FLOAT, STRING):
            if tok.kind is INT:
                try:
                    kind_of(tok.value)
                except TypeError:
                    raise AdlSyntaxError("integer literal out of 64-bit range", tok.line, tok.column,
                                         frozenset({INT})) from None
            if tok.kind is FLOAT:
                try:
                    kind_of(tok.value)
                except TypeError:
                    raise AdlSyntaxError("float literal out of range", tok.line, tok.column,
                                         frozenset({FLOAT})) from None
            self.pos += 1
            return tok.value
        if tok.kind is IDENT and tok.text in ("true", "false"):
            self.pos += 1
            return tok.text == "true"
        self.fail({INT, FLOAT, "boolean", STRING})

    def done(self):
        if self.tok.kind is not EOF:
            self.fail({EOF})


def _check_aliases(defn: StackDefinition) -> None:
    seen: dict[str, str] = {}
    for path, node, _ in iter_nodes(defn.body):
        names = [node.alias] + [b.alias for b in node.options]
        for alias in names:
            if alias is None:
                continue
            if alias in seen:
                raise DuplicateAliasError(
                    f"stack {defn.name}: alias {alias!r} used at {seen[alias]} and {path}")
            seen[alias] = path


def parse_config(text: str) -> list[StackDefinition]:
    """Parse zero or more stack definitions."""
    defs = _Parser(text).stacks()
    for d in defs:
        _check_aliases(d)
    return defs


def parse_stack(text: str) -> StackDefinition:
    """Parse exactly one stack definition."""
    p = _Parser(text)
    if p.tok.kind is EOF:
        p.fail({"'%'"})
    defn = p.stack()
    p.done()
    _check_aliases(defn)
    return defn


def parse_value(text: str) -> Scalar:
    """Parse a single literal (used by the control protocol's SET)."""
    p = _Parser(text)
    value = p.value()
    p.done()
    return value


# -- renderer ---------------------------------------------------------------------------

def _render_option(b: OptionBinding) -> str:
    out = "$" + b.name
    if b.alias:
        out += ":" + b.alias
    if b.value is not None:
        out += "=" + format_scalar(b.value)
    return out


def render_node(node: ComponentNode) -> str:
    out = "@" + node.type_id
    if node.alias:
        out += ":" + node.alias
    if node.options:
        out += "[" + ", ".join(_render_option(b) for b in node.options) + "]"
    if node.demux is not None:
        out += "<" + " ".join(render_node(n) for n in node.demux) + ">"
    elif node.alternatives is not None:
        out += "(" + " | ".join(" ".join(render_node(n) for n in b) for b in node.alternatives) + ")"
    return out


def render_stack(defn: StackDefinition) -> str:
    """Canonical single-line text of a definition."""
    head = "%" + defn.name + (":" + defn.alias if defn.alias else "")
    if not defn.body:
        return head + " { }"
    return head + " { " + " ".join(render_node(n) for n in defn.body) + " }"


def render_config(defs: Sequence[StackDefinition]) -> str:
    return "".join(render_stack(d) + "\n" for d in defs)


# -- validation -------------------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    path: str
    code: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


def validate(defn: StackDefinition, registry) -> list[Diagnostic]:
    """Check a definition against a factory registry.

    ``registry`` needs a ``contract(type_id)`` method returning a
    ``ComponentContract`` or ``None``.
    """
    diags: list[Diagnostic] = []
    for path, node, _ in iter_nodes(defn.body):
        where = f"{defn.name}/{path}"
        contract: Optional[ComponentContract] = registry.contract(node.type_id)
        if contract is None:
            diags.append(Diagnostic(where, "unknown-type", f"unknown component type {node.type_id!r}"))
            continue
        declared = contract.output.kind
        if node.shape is not declared:
            diags.append(Diagnostic(where, "shape-mismatch",
                                    f"{node.type_id} has {declared.value} output, used as {node.shape.value}"))
        elif (declared is OutputKind.ALTERNATIVE and contract.output.ports is not None
              and len(node.alternatives) != contract.output.ports):
            diags.append(Diagnostic(where, "shape-mismatch",
                                    f"{node.type_id} has {contract.output.ports} alternative ports, "
                                    f"{len(node.alternatives)} branches given"))
        seen = set()
        for binding in node.options:
            decl = contract.option(binding.name)
            if decl is None:
                diags.append(Diagnostic(where, "unknown-option",
                                        f"{node.type_id} has no option {binding.name!r}"))
                continue
            if binding.name in seen:
                diags.append(Diagnostic(where, "duplicate-option", f"option {binding.name!r} bound twice"))
            seen.add(binding.name)
            if binding.value is not None:
                try:
                    decl.coerce(binding.value)
                except OptionError as exc:
                    diags.append(Diagnostic(where, exc.code, str(exc)))
    return diags
