"""Standard component library and the DNS reconstruction demo."""

from importlib import resources

from ..assembly import FactoryRegistry
from .components import (
    STDLIB,
    Count,
    FieldDemux,
    FileSink,
    Filter,
    Noop,
    PairMatcher,
    ProtoDemux,
    RateLimit,
    StackSend,
    Switch,
    Tick,
    TraceSource,
    parse_trace_line,
)
from .trace import generate_trace, write_trace


def default_registry() -> FactoryRegistry:
    """A fresh registry holding every standard component."""
    registry = FactoryRegistry()
    for cls in STDLIB:
        registry.register(cls)
    return registry


def demo_config() -> str:
    """Text of the bundled DNS reconstruction config."""
    return resources.files("pandora.data").joinpath("dns.pandora").read_text(encoding="utf-8")


__all__ = [
    "default_registry", "demo_config", "generate_trace", "write_trace", "parse_trace_line",
    "Count", "FieldDemux", "FileSink", "Filter", "Noop", "PairMatcher", "ProtoDemux",
    "RateLimit", "StackSend", "Switch", "Tick", "TraceSource",
]
