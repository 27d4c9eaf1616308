"""Changing a running stack without losing its state.

A ticking source feeds a counter.  While it runs, a filter is inserted in
front of the counter, the counter's threshold is changed, and the filter is
removed again.  The counter keeps its value through every change because it
carries an alias.

    python3 demos/live_reconfiguration.py
"""

import time

from pandora import Kernel, parse_stack
from pandora.control import ControlProtocol

kernel = Kernel()
kernel.load_config("%ticker { @tick:src[$period=0.002] @count:total }")
h = kernel.start_stack("ticker")
total = kernel.sensors.lookup("ticker.total.n")
ctl = ControlProtocol(kernel)


def show(what):
    print(f"{what:38} total={total.read():5}  {ctl.handle(f'DUMP active {h}').lines[0]}")


time.sleep(0.2)
show("running")

# %% insert a filter keyed on a field the ticks do not carry
plan = kernel.reconfigure(h, parse_stack(
    '%ticker { @tick:src[$period=0.002] @filter:gate[$field="port"] @count:total }'))
print("  plan:", plan.summary())
time.sleep(0.2)
show("after inserting a filter (stalled)")

# %% fix the filter live through the protocol
reply = ctl.handle(f'SET active {h}/1 field "seq"')
print("  SET active ->", reply.lines)
time.sleep(0.2)
show("after fixing the filter")

# %% stored and active now differ
print("  stored:", ctl.handle("DUMP stored ticker").lines[0])

# %% remove it again
plan = kernel.reconfigure(h, parse_stack("%ticker { @tick:src[$period=0.002] @count:total }"))
print("  plan:", plan.summary())
before = total.read()
time.sleep(0.2)
show("after removing the filter")
assert total.read() > before

# %% invalid definitions are refused and the stack keeps running
print("  ", ctl.execute(f"RECONF {h} %ticker {{ @tick:src @nosuch }}").strip())
show("after a refused change")

kernel.shutdown()
