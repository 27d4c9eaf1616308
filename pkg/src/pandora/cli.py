"""Command-line entry points: ``pandorad`` (daemon) and ``pandoractl`` (client)."""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading

from .adl import parse_config, parse_value, render_stack
from .control import DEFAULT_ENDPOINT, Client, ControlServer, Response
from .core import format_scalar
from .errors import PandoraError


# -- pandoractl -----------------------------------------------------------------

def _literal(text: str) -> str:
    """A value typed on the command line as a protocol literal; words that
    are not literals are taken as strings."""
    try:
        parse_value(text)
        return text
    except PandoraError:
        return format_scalar(text)


def _adl_line(text: str) -> str:
    """Canonical one-line form of one or more definitions."""
    return " ".join(render_stack(d) for d in parse_config(text))


def _read_adl(args) -> str:
    if args.file:
        with open(args.file, encoding="utf-8") as fh:
            return fh.read()
    if args.adl == "-":
        return sys.stdin.read()
    if args.adl is None:
        raise SystemExit("give ADL text, '-' for stdin, or --file")
    return args.adl


def _scope(args) -> str:
    return "active" if args.active else "stored"


def build_request(args) -> str:
    cmd = args.command
    if cmd == "list":
        return "LIST"
    if cmd == "defs":
        return "DEFS"
    if cmd == "start":
        return " ".join(["START", args.name] + ([args.alias] if args.alias else []))
    if cmd == "stop":
        return f"STOP {args.handle}"
    if cmd == "define":
        return "DEFINE " + _adl_line(_read_adl(args))
    if cmd == "dump":
        return f"DUMP {_scope(args)} {args.name}"
    if cmd == "reconf":
        return f"RECONF {args.selector} " + _adl_line(_read_adl(args))
    if cmd == "get":
        return f"GET {_scope(args)} {args.path} {args.option}"
    if cmd == "set":
        return f"SET {_scope(args)} {args.path} {args.option} {_literal(args.value)}"
    if cmd == "sensor":
        if args.action == "get":
            if not args.arg:
                raise SystemExit("sensor get needs a sensor name")
            return f"SENSOR GET {args.arg}"
        return "SENSOR LIST" + (f" {args.arg}" if args.arg else "")
    if cmd == "raw":
        return " ".join(args.line)
    raise SystemExit(f"unknown command {cmd}")


def ctl_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pandoractl", description="Control a running pandorad.")
    ap.add_argument("--endpoint", default=DEFAULT_ENDPOINT,
                    help=f"host:port or unix:/path (default {DEFAULT_ENDPOINT})")
    ap.add_argument("--json", action="store_true", help="machine-readable output")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="running and stopped stack instances")
    sub.add_parser("defs", help="names of stored definitions")
    p = sub.add_parser("start")
    p.add_argument("name")
    p.add_argument("alias", nargs="?")
    p = sub.add_parser("stop")
    p.add_argument("handle")
    for name in ("define", "reconf"):
        p = sub.add_parser(name)
        if name == "reconf":
            p.add_argument("selector")
        p.add_argument("adl", nargs="?")
        p.add_argument("--file", "-f")
    p = sub.add_parser("dump")
    p.add_argument("--active", action="store_true")
    p.add_argument("name")
    for name in ("get", "set"):
        p = sub.add_parser(name)
        scope = p.add_mutually_exclusive_group()
        scope.add_argument("--active", action="store_true")
        scope.add_argument("--stored", action="store_true")
        p.add_argument("path")
        p.add_argument("option")
        if name == "set":
            p.add_argument("value")
    p = sub.add_parser("sensor")
    p.add_argument("action", choices=("list", "get"))
    p.add_argument("arg", nargs="?")
    p = sub.add_parser("raw", help="send one protocol line verbatim")
    p.add_argument("line", nargs="+")
    return ap


def ctl_main(argv=None) -> int:
    args = ctl_parser().parse_args(argv)
    try:
        request = build_request(args)
    except PandoraError as exc:
        response = Response(False, code=exc.code, message=str(exc))
    else:
        try:
            with Client(args.endpoint) as client:
                response = client.request(request)
        except OSError as exc:
            print(f"pandoractl: cannot reach {args.endpoint}: {exc}", file=sys.stderr)
            return 2
    if args.json:
        print(json.dumps(response.to_json()))
    elif response.ok:
        for line in response.lines:
            print(line)
    else:
        print(f"error ({response.code}): {response.message}", file=sys.stderr)
    return 0 if response.ok else 1


# -- pandorad -------------------------------------------------------------------

def daemon_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pandorad", description="Run the stack kernel with a control socket.")
    ap.add_argument("--config", action="append", default=[], metavar="PATH",
                    help="config file of stack definitions (repeatable)")
    ap.add_argument("--control", default=DEFAULT_ENDPOINT, metavar="ADDR",
                    help=f"control endpoint, host:port or unix:/path (default {DEFAULT_ENDPOINT})")
    ap.add_argument("--start", action="append", default=[], metavar="NAME[:ALIAS]",
                    help="start a stored stack after loading (repeatable)")
    ap.add_argument("--log-level", default="INFO")
    return ap


def daemon_main(argv=None) -> int:
    args = daemon_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    log = logging.getLogger("pandorad")
    from .kernel import Kernel

    kernel = Kernel()
    try:
        for path in args.config:
            names = kernel.load_config_file(path)
            log.info("loaded %s: %s", path, ", ".join(names))
        for item in args.start:
            name, _, alias = item.partition(":")
            log.info("started %s as %s", name, kernel.start_stack(name, alias or None))
        server = ControlServer(kernel, args.control).start()
    except (PandoraError, OSError) as exc:
        print(f"pandorad: {exc}", file=sys.stderr)
        kernel.shutdown()
        return 1
    log.info("control protocol on %s", server.endpoint)
    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    try:
        while not done.wait(0.5):
            pass
    finally:
        server.close()
        kernel.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(ctl_main())
