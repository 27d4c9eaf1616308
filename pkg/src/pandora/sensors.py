"""Sensors and monitors.

A sensor is a numeric cell owned by one component.  Monitors resolve a sensor
once by its flat name (``stack.component.sensor``) and keep the returned
object; every later read is a plain attribute access with no lookup.  Writes
come only from the owning stack's context.  Rebinding a Python attribute is
atomic under the interpreter lock, so a concurrent reader always sees a value
that some ``write`` stored.
"""

from __future__ import annotations

import enum
import itertools
import threading
from typing import Callable, Iterable, Optional, Union

from .errors import DuplicateSensorError, SensorError, UnknownSensorError

Number = Union[int, float]


class SensorMode(enum.Enum):
    PASSIVE = "passive"
    ACTIVE = "active"


class Sensor:
    __slots__ = ("name", "kind", "mode", "value", "stale", "_callbacks")

    def __init__(self, name: str, kind: type = int, mode: SensorMode = SensorMode.PASSIVE):
        if kind not in (int, float):
            raise SensorError(f"sensor {name}: kind must be int or float")
        self.name = name
        self.kind = kind
        self.mode = mode
        self.value: Number = kind(0)
        self.stale = False
        self._callbacks: tuple = ()

    def read(self) -> Number:
        return self.value

    def write(self, value: Number) -> None:
        if type(value) is not self.kind:
            if self.kind is float and type(value) is int:
                value = float(value)
            else:
                raise TypeError(f"sensor {self.name} holds {self.kind.__name__}, got {value!r}")
        self.value = value
        for cb in self._callbacks:
            cb(self, value)

    def add(self, delta: Number = 1) -> None:
        value = self.value + delta
        self.value = value
        for cb in self._callbacks:
            cb(self, value)

    def __repr__(self):
        flag = " stale" if self.stale else ""
        return f"<Sensor {self.name}={self.value} {self.mode.value}{flag}>"


class SensorRegistry:
    """Flat-name index of sensors; lookups are paid once, at attach time."""

    def __init__(self):
        self._sensors: dict[str, Sensor] = {}
        self._lock = threading.Lock()

    def register(self, name: str, kind: type = int, mode: SensorMode = SensorMode.PASSIVE) -> Sensor:
        with self._lock:
            current = self._sensors.get(name)
            if current is not None and not current.stale:
                raise DuplicateSensorError(f"sensor {name} already registered")
            sensor = Sensor(name, kind, mode)
            self._sensors[name] = sensor
            return sensor

    def lookup(self, name: str) -> Sensor:
        try:
            return self._sensors[name]
        except KeyError:
            raise UnknownSensorError(f"no sensor named {name!r}") from None

    def names(self, prefix: str = "") -> list[str]:
        return sorted(n for n in list(self._sensors) if n.startswith(prefix))

    def snapshot(self, prefix: str = "") -> list[Sensor]:
        return [self._sensors[n] for n in self.names(prefix)]

    def mark_stale(self, sensors: Iterable[Sensor]) -> None:
        for s in sensors:
            s.stale = True

    def __len__(self):
        return len(self._sensors)

    def __contains__(self, name):
        return name in self._sensors


class Monitor:
    """Observer of a set of sensors.

    Passive use: call ``poll()`` whenever convenient.  Active use: give a
    ``callback(sensor, value)``; it runs on the writer's context right after
    each write to any attached active sensor, so it must be brief.
    """

    _ids = itertools.count(1)

    def __init__(self, callback: Optional[Callable[[Sensor, Number], None]] = None):
        self.id = next(self._ids)
        self.callback = callback
        self.sensors: list[Sensor] = []

    def attach(self, sensor: Sensor) -> Sensor:
        self.sensors.append(sensor)
        if self.callback is not None and sensor.mode is SensorMode.ACTIVE:
            sensor._callbacks = sensor._callbacks + (self.callback,)
        return sensor

    def detach(self, sensor: Sensor) -> None:
        self.sensors.remove(sensor)
        if self.callback is not None:
            sensor._callbacks = tuple(cb for cb in sensor._callbacks if cb is not self.callback)

    def poll(self) -> dict[str, Number]:
        return {s.name: s.value for s in self.sensors}


class ThresholdMonitor(Monitor):
    """Active monitor counting writes that leave a sensor at or above a limit."""

    def __init__(self, limit: Number, action: Optional[Callable[[Sensor, Number], None]] = None):
        self.limit = limit
        self.action = action
        self.fired = 0
        super().__init__(self._check)

    def _check(self, sensor, value):
        if value >= self.limit:
            self.fired += 1
            if self.action is not None:
                self.action(sensor, value)
