import threading
import timeit

import pytest

from pandora import Event, Monitor, Sensor, SensorMode, SensorRegistry, ThresholdMonitor, instantiate, parse_stack
from pandora.control import ControlProtocol
from pandora.core import Component
from pandora.errors import DuplicateSensorError, UnknownSensorError


class Twice(Component):
    type_id = "twice"

    def setup(self):
        self.ctx.sensor("x")
        self.ctx.sensor("x")


def test_registered_sensor_starts_at_zero(registry):
    inst = instantiate(parse_stack("%dns { @noop @count }"), registry)
    assert inst.sensors.lookup("dns.count.n").read() == 0


def test_duplicate_local_name(registry):
    registry.register(Twice)
    with pytest.raises(DuplicateSensorError):
        instantiate(parse_stack("%s { @twice }"), registry)


def test_destroyed_component_leaves_stale_sensor(registry):
    inst = instantiate(parse_stack("%s { @noop @count:c }"), registry)
    inst.inject(Event("e"))
    ref = inst.sensors.lookup("s.c.n")
    inst.destroy()
    assert ref.read() == 1 and ref.stale
    # the name can be registered again by a new instance
    instantiate(parse_stack("%s { @noop @count:c }"), registry, sensors=inst.sensors)
    assert inst.sensors.lookup("s.c.n") is not ref


def test_lookup_unknown():
    with pytest.raises(UnknownSensorError):
        SensorRegistry().lookup("a.b.c")


def test_write_then_read():
    s = SensorRegistry().register("a.b.c")
    s.write(42)
    assert s.read() == 42
    with pytest.raises(TypeError):
        s.write(1.5)
    f = SensorRegistry().register("a.b.f", float)
    f.write(2)
    assert f.read() == 2.0 and type(f.read()) is float


def test_threshold_monitor_fires_once_per_crossing_write():
    s = Sensor("a.b.c", int, SensorMode.ACTIVE)
    mon = ThresholdMonitor(10)
    mon.attach(s)
    values = [3, 9, 10, 2, 11, 15, 0]
    for v in values:
        s.write(v)
    assert mon.fired == sum(1 for v in values if v >= 10)
    mon.detach(s)
    s.write(99)
    assert mon.fired == 3


def test_passive_monitor_polls():
    reg = SensorRegistry()
    a, b = reg.register("s.c.a"), reg.register("s.c.b", float)
    mon = Monitor()
    mon.attach(a)
    mon.attach(b)
    a.write(4)
    assert mon.poll() == {"s.c.a": 4, "s.c.b": 0.0}


class Gauge(Component):
    type_id = "gauge"

    def setup(self):
        self.level = self.ctx.sensor("level", int, SensorMode.ACTIVE)

    def process(self, event):
        self.level.write(event["seq"])
        return event


def test_active_callbacks_run_on_writer_context(kernel, registry):
    registry.register(Gauge)
    kernel.load_config("%s { @feed @gauge }")
    seen = []
    h = kernel.start_stack("s")
    ref = kernel.sensors.lookup("s.gauge.level")
    mon = ThresholdMonitor(0, lambda sensor, value: seen.append((threading.current_thread().name, value)))
    mon.attach(ref)
    feed = kernel.instance(h).initial
    feed.queue.extend(Event("e", {"seq": i}) for i in range(20))
    feed.closed = True
    kernel.wait_exhausted(h, 5)
    assert mon.fired == 20
    assert seen, "callbacks fired"
    assert {name for name, _ in seen} == {f"stack-{h}"}
    assert [v for _, v in seen] == sorted(v for _, v in seen)


def test_protocol_sensor_get_matches_direct_read(kernel):
    kernel.load_config("%s { @tick[$count=37] @count:c }")
    h = kernel.start_stack("s")
    kernel.wait_exhausted(h, 5)
    direct = kernel.sensors.lookup("s.c.n").read()
    assert ControlProtocol(kernel).handle("SENSOR GET s.c.n").lines == [str(direct)] == ["37"]


def test_no_torn_reads_under_write_storm():
    reg = SensorRegistry()
    s = reg.register("s.c.big")
    written = {0}
    values = [(1 << 62) + i * 0x1111111111 for i in range(5000)]
    written.update(values)
    stop = threading.Event()
    observed = set()

    def reader():
        while not stop.is_set():
            observed.add(s.read())

    t = threading.Thread(target=reader)
    t.start()
    for _ in range(10):
        for v in values:
            s.write(v)
    stop.set()
    t.join()
    assert observed <= written and len(observed) > 1


def test_read_cost_independent_of_registry_size():
    def cost(n):
        reg = SensorRegistry()
        for i in range(n):
            reg.register(f"s.c.x{i}")
        ref = reg.lookup(f"s.c.x{n // 2}")
        timer = timeit.Timer("read()", globals={"read": ref.read})
        return min(timer.repeat(15, 20000))

    small, large = cost(10), cost(10000)
    assert large <= 2 * small
