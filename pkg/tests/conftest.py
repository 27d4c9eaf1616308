import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pandora import Kernel, default_registry  # noqa: E402
from pandora.core import Component, Event, Exhausted  # noqa: E402


class Feed(Component):
    """Initial component for tests: produces the events queued in ``feed``,
    idles when the queue is empty and stops when ``closed`` is set."""

    type_id = "feed"

    def setup(self):
        import collections
        self.queue = collections.deque()
        self.closed = False

    def produce(self):
        if self.queue:
            return self.queue.popleft()
        if self.closed:
            raise Exhausted
        self.ctx.idle(0.01)
        return None


class Record(Component):
    """Appends every event it sees to a shared list ``Record.log``."""

    type_id = "record"
    log: list = []

    def process(self, event):
        Record.log.append((self.ctx.label, event))
        return event


@pytest.fixture
def registry():
    reg = default_registry()
    reg.register(Feed)
    reg.register(Record)
    Record.log = []
    return reg


@pytest.fixture
def kernel(registry):
    k = Kernel(registry)
    yield k
    k.shutdown()


@pytest.fixture
def ev():
    return Event("pkt", {"proto": "udp", "n": 1})


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path
