"""Stacks of message-passing components with a description language,
live reconfiguration, a reflective control protocol and sensors."""

from .adl import (
    ComponentNode,
    OptionBinding,
    StackDefinition,
    parse_config,
    parse_stack,
    parse_value,
    render_config,
    render_stack,
    validate,
)
from .assembly import ComponentPath, FactoryRegistry, StackInstance, StackState, instantiate
from .core import (
    AlternativeComponent,
    Component,
    DemuxComponent,
    Event,
    EventType,
    Exhausted,
    OptionDecl,
    OutputKind,
    OutputSpec,
    ScalarKind,
    intern_event_type,
    set_option,
)
from .errors import PandoraError
from .kernel import Kernel, Mailbox, OverflowPolicy, Scope, SendMode
from .reconfig import ReconfigPlan, apply, diff
from .sensors import Monitor, Sensor, SensorMode, SensorRegistry, ThresholdMonitor
from .stdlib import default_registry

__all__ = [
    "ComponentNode", "OptionBinding", "StackDefinition", "parse_config", "parse_stack", "parse_value",
    "render_config", "render_stack", "validate", "ComponentPath", "FactoryRegistry", "StackInstance",
    "StackState", "instantiate", "AlternativeComponent", "Component", "DemuxComponent", "Event",
    "EventType", "Exhausted", "OptionDecl", "OutputKind", "OutputSpec", "ScalarKind",
    "intern_event_type", "set_option", "PandoraError", "Kernel", "Mailbox", "OverflowPolicy", "Scope",
    "SendMode", "ReconfigPlan", "apply", "diff", "Monitor", "Sensor", "SensorMode", "SensorRegistry",
    "ThresholdMonitor", "default_registry",
]
