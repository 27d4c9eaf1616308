"""Reflective control protocol.

One request per line, one response per request::

    OK <n>            followed by exactly n payload lines
    ERR <code> <message>

Commands (keywords are case-insensitive)::

    LIST
    DEFS
    START <name> [<alias>]
    STOP <handle|alias>
    DEFINE <adl>                       one or more definitions on one line
    DUMP [stored|active] <selector>
    RECONF <selector> <adl>
    GET <stored|active> <path> <option>
    SET <stored|active> <path> <option> <literal>
    SENSOR LIST [<prefix>]
    SENSOR GET <name>
    QUIT

Paths are ``stack[/seg]*`` with ``i``, ``i.b`` or ``i{key}`` segments.
Every command runs under the kernel's control lock, so sessions are
serialized kernel-side.
"""

from __future__ import annotations

import logging
import os
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Optional

from .adl import parse_config, parse_value, render_stack
from .assembly import ComponentPath
from .core import format_scalar
from .errors import PandoraError
from .kernel import Kernel, Scope

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "127.0.0.1:7170"


class ProtocolError(PandoraError):
    code = "syntax"


@dataclass
class Response:
    ok: bool
    lines: list[str] = field(default_factory=list)
    code: str = ""
    message: str = ""

    def render(self) -> str:
        if self.ok:
            return "".join([f"OK {len(self.lines)}\n"] + [line + "\n" for line in self.lines])
        return f"ERR {self.code} {self.message}\n"

    def to_json(self) -> dict:
        if self.ok:
            return {"ok": True, "lines": list(self.lines)}
        return {"ok": False, "code": self.code, "message": self.message}


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def parse_response(text: str) -> Response:
    """Parse the text of exactly one response."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ProtocolError("empty response")
    head = lines[0]
    if head.startswith("OK "):
        n = int(head[3:])
        if len(lines) - 1 != n:
            raise ProtocolError(f"response announces {n} lines, carries {len(lines) - 1}")
        return Response(True, lines[1:])
    if head.startswith("ERR "):
        code, _, message = head[4:].partition(" ")
        return Response(False, code=code, message=message)
    raise ProtocolError(f"malformed response header {head!r}")


def _scope(word: str) -> Scope:
    try:
        return Scope(word.lower())
    except ValueError:
        raise ProtocolError(f"scope must be stored or active, not {word!r}") from None


def _split(rest: str, n: int) -> list[str]:
    """First ``n`` whitespace-separated words and the remainder."""
    parts = rest.split(None, n)
    while len(parts) < n + 1:
        parts.append("")
    return parts


class ControlProtocol:
    """Executes protocol lines against a kernel, in process."""

    def __init__(self, kernel: Kernel):
        self.kernel = kernel

    def execute(self, line: str) -> str:
        return self.handle(line).render()

    def handle(self, line: str) -> Response:
        line = line.strip()
        if not line:
            return Response(False, code="syntax", message="empty command")
        word, _, rest = line.partition(" ")
        method = getattr(self, "cmd_" + word.lower(), None)
        if method is None:
            return Response(False, code="syntax", message=f"unknown command {_one_line(word)}")
        try:
            with self.kernel.lock:
                return Response(True, method(rest.strip()))
        except PandoraError as exc:
            return Response(False, code=getattr(exc, "code", "error") or "error", message=_one_line(exc))
        except Exception as exc:
            log.exception("control command failed: %s", line)
            return Response(False, code="internal", message=_one_line(f"{type(exc).__name__}: {exc}"))

    # -- commands --
    def cmd_list(self, rest):
        if rest:
            raise ProtocolError("LIST takes no arguments")
        return [f"{i.handle} {i.name} {i.alias or '-'} {i.state.value}" for i in self.kernel.list_stacks()]

    def cmd_defs(self, rest):
        if rest:
            raise ProtocolError("DEFS takes no arguments")
        return self.kernel.stored_names()

    def cmd_start(self, rest):
        args = rest.split()
        if len(args) not in (1, 2):
            raise ProtocolError("usage: START <name> [<alias>]")
        return [self.kernel.start_stack(args[0], args[1] if len(args) == 2 else None)]

    def cmd_stop(self, rest):
        args = rest.split()
        if len(args) != 1:
            raise ProtocolError("usage: STOP <handle>")
        self.kernel.stop_stack(args[0])
        return []

    def cmd_define(self, rest):
        if not rest:
            raise ProtocolError("usage: DEFINE <adl>")
        return self.kernel.load_config(rest)

    def cmd_dump(self, rest):
        args = rest.split()
        scope = Scope.STORED
        if len(args) == 2:
            scope = _scope(args[0])
            args = args[1:]
        if len(args) != 1:
            raise ProtocolError("usage: DUMP [stored|active] <selector>")
        if scope is Scope.STORED:
            return [render_stack(self.kernel.stored(args[0]))]
        return [render_stack(self.kernel.instance(args[0]).active_definition())]

    def cmd_reconf(self, rest):
        selector, adl = _split(rest, 1)
        if not selector or not adl:
            raise ProtocolError("usage: RECONF <selector> <adl>")
        defs = parse_config(adl)
        if len(defs) != 1:
            raise ProtocolError("RECONF takes exactly one definition")
        return [self.kernel.reconfigure(selector, defs[0]).summary()]

    def cmd_get(self, rest):
        args = rest.split()
        if len(args) != 3:
            raise ProtocolError("usage: GET <stored|active> <path> <option>")
        scope = _scope(args[0])
        return [format_scalar(self.kernel.get_option(scope, ComponentPath.parse(args[1]), args[2]))]

    def cmd_set(self, rest):
        scope, path, name, literal = _split(rest, 3)
        if not literal:
            raise ProtocolError("usage: SET <stored|active> <path> <option> <literal>")
        value = parse_value(literal)
        stored = self.kernel.set_option(_scope(scope), ComponentPath.parse(path), name, value)
        return [format_scalar(stored)]

    def cmd_sensor(self, rest):
        sub, arg = _split(rest, 1)
        sub = sub.lower()
        sensors = self.kernel.sensors
        if sub == "list":
            return [f"{s.name} {s.value} {s.kind.__name__} {s.mode.value}{' stale' if s.stale else ''}"
                    for s in sensors.snapshot(arg.strip())]
        if sub == "get":
            if not arg or len(arg.split()) != 1:
                raise ProtocolError("usage: SENSOR GET <name>")
            return [str(sensors.lookup(arg.strip()).read())]
        raise ProtocolError("usage: SENSOR LIST [<prefix>] | SENSOR GET <name>")

    def cmd_quit(self, rest):
        return []


# -- socket server --------------------------------------------------------------

def parse_endpoint(spec: str) -> tuple[int, object]:
    """``unix:/path``, a bare path, or ``host:port``."""
    if spec.startswith("unix:"):
        return socket.AF_UNIX, spec[5:]
    if "/" in spec:
        return socket.AF_UNIX, spec
    host, sep, port = spec.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"bad endpoint {spec!r}; use host:port or unix:/path")
    return socket.AF_INET, (host or "127.0.0.1", int(port))


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        protocol: ControlProtocol = self.server.protocol
        for raw in self.rfile:
            line = raw.decode("utf-8", "replace").rstrip("\r\n")
            if not line.strip():
                continue
            response = protocol.handle(line)
            self.wfile.write(response.render().encode("utf-8"))
            self.wfile.flush()
            if response.ok and line.split()[0].lower() == "quit":
                return


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class _UnixServer(socketserver.ThreadingUnixStreamServer):
    daemon_threads = True


class ControlServer:
    """Serves the protocol on a stream socket from a background thread."""

    def __init__(self, kernel: Kernel, endpoint: str = DEFAULT_ENDPOINT):
        family, address = parse_endpoint(endpoint)
        if family == socket.AF_UNIX:
            if os.path.exists(address):
                os.unlink(address)
            self._server = _UnixServer(address, _Handler)
        else:
            self._server = _TCPServer(address, _Handler)
        self._server.protocol = ControlProtocol(kernel)
        self.family = family
        self._thread: Optional[threading.Thread] = None

    @property
    def endpoint(self) -> str:
        addr = self._server.server_address
        if self.family == socket.AF_UNIX:
            return "unix:" + (addr.decode() if isinstance(addr, bytes) else addr)
        return f"{addr[0]}:{addr[1]}"

    def start(self) -> "ControlServer":
        self._thread = threading.Thread(target=self._server.serve_forever, name="control", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self.family == socket.AF_UNIX:
            try:
                os.unlink(self._server.server_address)
            except OSError:
                pass

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


def serve(kernel: Kernel, endpoint: str = DEFAULT_ENDPOINT) -> ControlServer:
    """Bind ``endpoint`` and serve in the background; returns the server."""
    return ControlServer(kernel, endpoint).start()


class Client:
    """Blocking protocol client."""

    def __init__(self, endpoint: str = DEFAULT_ENDPOINT, timeout: Optional[float] = 30.0):
        family, address = parse_endpoint(endpoint)
        self._sock = socket.socket(family, socket.SOCK_STREAM)
        self._sock.settimeout(timeout)
        self._sock.connect(address)
        self._r = self._sock.makefile("r", encoding="utf-8", newline="\n")
        self._w = self._sock.makefile("w", encoding="utf-8", newline="\n")

    def request(self, line: str) -> Response:
        if "\n" in line or "\r" in line:
            raise ProtocolError("a request is a single line")
        self._w.write(line + "\n")
        self._w.flush()
        head = self._r.readline()
        if not head:
            raise ConnectionError("control connection closed")
        text = head
        if head.startswith("OK "):
            for _ in range(int(head[3:])):
                text += self._r.readline()
        return parse_response(text)

    def close(self) -> None:
        for f in (self._r, self._w, self._sock):
            try:
                f.close()
            except OSError:
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


__all__ = ["ControlProtocol", "ControlServer", "Client", "Response", "ProtocolError",
           "parse_response", "parse_endpoint", "serve", "DEFAULT_ENDPOINT"]
