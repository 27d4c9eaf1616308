"""Exception hierarchy shared by every layer of the runtime.

Each class carries a short ``code`` used by the control protocol when the
error is reported on the wire (``ERR <code> <message>``).
"""

from __future__ import annotations


class PandoraError(Exception):
    code = "internal"


class AdlSyntaxError(PandoraError):
    code = "syntax"

    def __init__(self, message: str, line: int, column: int, expected: frozenset[str] = frozenset()):
        self.line = line
        self.column = column
        self.expected = frozenset(expected)
        detail = f"{line}:{column}: {message}"
        if self.expected:
            detail += " (expected one of: " + ", ".join(sorted(self.expected)) + ")"
        super().__init__(detail)


class DuplicateAliasError(PandoraError):
    code = "alias"


class ValidationError(PandoraError):
    """A definition failed validation; ``diagnostics`` lists every problem."""

    code = "invalid"

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class WiringError(PandoraError):
    code = "wiring"


class OptionError(PandoraError):
    code = "option"

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class UnknownOptionError(OptionError):
    code = "unknown"


class KindMismatchError(OptionError):
    code = "kind"


class HookRejectedError(OptionError):
    code = "rejected"


class RegistryError(PandoraError):
    code = "registry"


class DuplicateFactoryError(RegistryError):
    code = "exists"


class UnresolvedTypeError(RegistryError):
    code = "unknown"


class InstantiationError(PandoraError):
    code = "instantiate"


class StackError(PandoraError):
    code = "state"


class UnknownStackError(StackError):
    code = "unknown"


class UnknownHandleError(StackError):
    code = "unknown"


class AmbiguousStackError(StackError):
    code = "ambiguous"


class AliasCollisionError(StackError):
    code = "exists"


class NotRunningError(StackError):
    code = "notrunning"


class DeadlockError(StackError):
    code = "deadlock"


class PathError(PandoraError):
    code = "path"


class ReconfigError(PandoraError):
    code = "reconf"


class SensorError(PandoraError):
    code = "sensor"


class DuplicateSensorError(SensorError):
    code = "exists"


class UnknownSensorError(SensorError):
    code = "unknown"


class BenchError(PandoraError):
    code = "bench"


class NoSamplesError(BenchError):
    pass


class UnstableMeasurementError(BenchError):
    def __init__(self, message: str, result=None):
        self.result = result
        super().__init__(message)
