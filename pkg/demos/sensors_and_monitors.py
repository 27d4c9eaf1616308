"""Watching a stack from the outside and from the inside.

Passive reading: look a sensor up once, then read it as often as needed.
Active monitoring: subscribe a callback that runs on every write.
Stale sensors: after a stop the last values stay readable.

    python3 demos/sensors_and_monitors.py
"""

import threading
import time
import timeit

from pandora import Kernel, default_registry
from pandora.control import ControlProtocol
from pandora.core import Component
from pandora.sensors import SensorMode, ThresholdMonitor


class HighWater(Component):
    """Publishes the largest ``seq`` seen so far as an active sensor."""

    type_id = "high_water"

    def setup(self):
        self.mark = self.ctx.sensor("mark", mode=SensorMode.ACTIVE)

    def process(self, event):
        seq = event.get("seq", 0)
        if seq > self.mark.value:
            self.mark.write(seq)
        return event


registry = default_registry()
registry.register(HighWater)
kernel = Kernel(registry)
kernel.load_config("%probe { @tick:src[$count=400, $period=0.001] @high_water:hw @count:counter[$threshold=100] }")
h = kernel.start_stack("probe")

# %% passive
n = kernel.sensors.lookup("probe.counter.n")
for _ in range(3):
    time.sleep(0.05)
    print("counter reads", n.read())

# %% active: the monitor runs on the stack's own thread, so keep it short
crossed = threading.Event()
seen = []


def alarm(sensor, value):
    seen.append((value, threading.current_thread().name))
    crossed.set()


monitor = ThresholdMonitor(300, alarm)
mark = monitor.attach(kernel.sensors.lookup("probe.hw.mark"))
crossed.wait(5)
value, thread = seen[0]
print(f"high water reached {value} (limit 300); the callback ran on thread {thread!r}")
monitor.detach(mark)

# %% passive read against the protocol path
kernel.wait_exhausted(h, 10)
ctl = ControlProtocol(kernel)
line = f"GET active {h}/2 threshold"
read = min(timeit.repeat(n.read, number=100_000, repeat=5)) / 100_000
get = min(timeit.repeat(lambda: ctl.execute(line), number=2_000, repeat=5)) / 2_000
print(f"sensor read {read * 1e9:.0f} ns, protocol GET {get * 1e9:.0f} ns ({get / read:.0f}x)")

# %% stale after stop
kernel.stop_stack(h)
print("after stop:", n.read(), "stale" if n.stale else "live")
for row in ctl.handle("SENSOR LIST probe.").lines:
    print("  ", row)

kernel.shutdown()
