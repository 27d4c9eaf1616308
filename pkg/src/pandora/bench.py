"""Microbenchmarks of the dispatch fast path and of introspection.

Protocol: every benchmark is repeated ``runs`` times (50 by default); one run
yields one sample in nanoseconds per operation, and the result is the mean
of the samples with its standard error.  A result whose standard error
exceeds 1 % of the mean is unstable.  Iteration counts are chosen so that
each sample accumulates at least 100 ms of measured time.

Loop overhead is calibrated out.  For traversal the calibration is a
one-component stack driven by the same loop, so ``(T_N - T_1) / (M (N - 1))``
is the cost of one component hop.  For sensor and control-path reads it is
an empty statement timed by the same ``timeit`` loop.

Host noise is handled by interleaving and normalisation.  Each run is split
into blocks spread over the whole measurement, so every run sees the same
mixture of fast and slow phases of a shared machine.  Within a block the
calibration is timed right before and after every configuration, and the
configuration's excess over it is expressed relative to it; a slow phase
stretches both alike, so the ratio barely moves.  A run's sample is the
interquartile mean of its ratios times the median calibration rate of the
whole measurement, which turns it back into nanoseconds at the machine's
typical speed.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import statistics
import sys
import timeit
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .adl import ComponentNode, StackDefinition
from .assembly import FactoryRegistry, StackInstance, instantiate
from .core import Component, Event
from .errors import NoSamplesError, UnstableMeasurementError

RUNS = 50
MAX_STDERR_PCT = 1.0
MIN_SAMPLE_S = 0.1
BLOCKS = 40
# calibration time per block, relative to one configuration's
CAL_SHARE = 0.25
# margin so a sample stays above min_sample_s when the machine speeds up
SAFETY = 1.2


@dataclass
class BenchResult:
    benchmark: str
    samples: list[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def runs(self) -> int:
        return len(self.samples)

    @property
    def mean_ns(self) -> float:
        return statistics.fmean(self.samples)

    @property
    def median_ns(self) -> float:
        return statistics.median(self.samples)

    @property
    def stderr_ns(self) -> float:
        if len(self.samples) < 2:
            return math.inf
        return statistics.stdev(self.samples) / math.sqrt(len(self.samples))

    @property
    def stderr_pct(self) -> float:
        mean = self.mean_ns
        return math.inf if mean == 0 else 100.0 * self.stderr_ns / abs(mean)

    @property
    def stable(self) -> bool:
        return self.stderr_pct <= MAX_STDERR_PCT

    def __str__(self):
        return f"{self.benchmark}: {self.mean_ns:.2f} ns +- {self.stderr_pct:.2f}% ({self.runs} runs)"


def _check(result: BenchResult, gate: bool) -> BenchResult:
    if gate and not result.stable:
        raise UnstableMeasurementError(
            f"{result.benchmark}: standard error {result.stderr_pct:.2f}% exceeds {MAX_STDERR_PCT}%", result)
    return result


# -- components used only by benchmarks ------------------------------------------

class Work(Component):
    """A no-op plus one integer addition per event."""

    type_id = "work"

    def setup(self):
        self.acc = 0

    def process(self, event):
        self.acc += 1
        return event


def bench_registry() -> FactoryRegistry:
    from .stdlib import default_registry
    registry = default_registry()
    registry.register(Work)
    return registry


def chain(n: int, type_id: str = "noop", registry: Optional[FactoryRegistry] = None) -> StackInstance:
    registry = registry or bench_registry()
    return instantiate(StackDefinition(f"chain{n}", None, tuple(ComponentNode(type_id) for _ in range(n))),
                       registry)


# -- timing primitives --------------------------------------------------------------

def _timer(stmt: str, namespace: dict) -> Callable[[int], float]:
    """Seconds for ``m`` executions of ``stmt`` (garbage collector off, as timeit does)."""
    t = timeit.Timer(stmt, globals=namespace)
    return t.timeit


def _iterations_for(timers: Sequence[Callable[[int], float]], budget_s: float) -> int:
    """Smallest geometric-search count for which the fastest timer needs ``budget_s``."""
    m = 1
    while True:
        elapsed = min(t(m) for t in timers)
        if elapsed >= budget_s:
            return m
        grow = budget_s / max(elapsed, 1e-7)
        m = max(m + 1, int(m * min(max(grow * 1.2, 2.0), 100.0)))


def _iqm(values: list[float]) -> float:
    """Mean of the middle half."""
    values = sorted(values)
    k = len(values) // 4
    return statistics.fmean(values[k:len(values) - k])


def _interleaved(configs: dict[str, tuple[Callable[[int], float], int]],
                 calibration: tuple[Callable[[int], float], int],
                 scale: dict[str, float], runs: int, blocks: int) -> dict[str, list[float]]:
    """Per-run samples (ns per operation) for each configuration.

    ``configs[name]`` is ``(timer, iterations per block)``; ``scale[name]``
    is the number of measured operations per iteration.  Blocks are
    scheduled round-robin over the runs.  Within a block the calibration is
    timed between every two configurations; with ``c`` the mean calibration
    rate on either side of a configuration timed at rate ``r``, the block
    contributes ``(r - c) / c``.  A run's sample is the interquartile mean of
    its block ratios, times the median of all calibration rates, divided by
    ``scale``.
    """
    names = list(configs)
    cal_timer, cal_m = calibration
    ratios = [{n: [] for n in names} for _ in range(runs)]
    cal_rates: list[float] = []
    for b in range(blocks):
        for run in range(runs):
            # rotate the order so no configuration always runs first
            k = (run + b) % len(names)
            before = cal_timer(cal_m) / cal_m
            cal_rates.append(before)
            for name in names[k:] + names[:k]:
                timer, m = configs[name]
                rate = timer(m) / m
                after = cal_timer(cal_m) / cal_m
                cal_rates.append(after)
                c = (before + after) / 2
                ratios[run][name].append((rate - c) / c)
                before = after
    typical = statistics.median(cal_rates)
    return {n: [max(_iqm(ratios[run][n]), 0.0) * typical * 1e9 / scale[n] for run in range(runs)]
            for n in names}


# -- traversal ----------------------------------------------------------------------

def bench_traversal_sweep(lengths: Sequence[int] = tuple(range(2, 11)), runs: int = RUNS,
                          events: Optional[int] = None, type_id: str = "noop", blocks: int = BLOCKS,
                          gate: bool = True, min_sample_s: float = MIN_SAMPLE_S) -> dict[int, BenchResult]:
    """Per-hop cost for several chain lengths, measured interleaved."""
    if runs <= 0 or events == 0:
        raise NoSamplesError("no samples: runs and events must be positive")
    if any(n < 2 for n in lengths):
        raise ValueError("chain length must be at least 2")
    registry = bench_registry()
    ev = Event("bench", {"seq": 0})
    base = chain(1, type_id, registry)
    cal = _timer("entry(ev)", {"entry": base.entry, "ev": ev})
    # each sample (all blocks of one configuration) lasts at least min_sample_s
    per_block = SAFETY * min_sample_s / blocks
    cal_m = events or _iterations_for([cal], per_block * CAL_SHARE)
    configs = {}
    for n in lengths:
        inst = chain(n, type_id, registry)
        timer = _timer("entry(ev)", {"entry": inst.entry, "ev": ev})
        configs[str(n)] = (timer, events or _iterations_for([timer], per_block))
    scale = {str(n): n - 1 for n in lengths}
    raw = _interleaved(configs, (cal, cal_m), scale, runs, blocks)
    results = {n: BenchResult(f"traversal_n{n}", raw[str(n)], configs[str(n)][1] * blocks) for n in lengths}
    for r in results.values():
        _check(r, gate)
    return results


def bench_traversal(n: int, events: Optional[int] = None, runs: int = RUNS, **kw) -> BenchResult:
    """Nanoseconds per component hop in a chain of ``n`` no-op components."""
    if n < 2:
        raise ValueError("chain length must be at least 2")
    return bench_traversal_sweep((n,), runs=runs, events=events, **kw)[n]


# -- introspection --------------------------------------------------------------------

PROBE = "%probe { @noop @count:counter[$threshold=10] }"


def bench_sensor_vs_mop(iterations: Optional[int] = None, runs: int = RUNS, blocks: int = BLOCKS,
                        gate: bool = False, min_sample_s: float = MIN_SAMPLE_S) -> dict[str, BenchResult]:
    """Passive sensor read against an in-process control-path GET of a live option.

    Also measures the read of a stale sensor.  Returns results keyed
    ``sensor``, ``stale_sensor`` and ``mop_get``.
    """
    if runs <= 0 or iterations == 0:
        raise NoSamplesError("no samples: runs and iterations must be positive")
    from .control import ControlProtocol
    from .kernel import Kernel

    kernel = Kernel(bench_registry())
    try:
        kernel.load_config(PROBE)
        handle = kernel.start_stack("probe")
        ref = kernel.sensors.lookup("probe.counter.n")
        # a second instance, stopped at once, leaves stale sensors behind
        h2 = kernel.start_stack("probe", "stale_probe")
        kernel.stop_stack(h2)
        stale = kernel.sensors.lookup("stale_probe.counter.n")
        assert stale.stale and not ref.stale
        protocol = ControlProtocol(kernel)
        line = f"GET active {handle}/1 threshold"
        if protocol.handle(line).lines != ["10"]:
            raise RuntimeError("probe stack does not answer GET")

        per_block = SAFETY * min_sample_s / blocks
        cal = _timer("pass", {})
        cal_m = iterations or _iterations_for([cal], per_block * CAL_SHARE)
        timers = {"sensor": _timer("read()", {"read": ref.read}),
                  "stale_sensor": _timer("read()", {"read": stale.read}),
                  "mop_get": _timer("execute(line)", {"execute": protocol.execute, "line": line})}
        configs = {k: (t, iterations or _iterations_for([t], per_block)) for k, t in timers.items()}
        raw = _interleaved(configs, (cal, cal_m), {k: 1 for k in configs}, runs, blocks)
        m_fast, m_slow = configs["sensor"][1], configs["mop_get"][1]
    finally:
        kernel.shutdown()
    results = {
        "sensor": BenchResult("sensor_read", raw["sensor"], m_fast * blocks),
        "stale_sensor": BenchResult("stale_sensor_read", raw["stale_sensor"], m_fast * blocks),
        "mop_get": BenchResult("mop_get", raw["mop_get"], m_slow * blocks),
    }
    for r in results.values():
        _check(r, gate)
    return results


# -- reporting ------------------------------------------------------------------------

CSV_COLUMNS = ("benchmark", "mean_ns", "stderr_pct", "runs")


def report(results: Sequence[BenchResult], path: Optional[str] = None) -> str:
    """CSV table of results; written to ``path`` when given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        w.writerow((r.benchmark, f"{r.mean_ns:.3f}", f"{r.stderr_pct:.3f}", r.runs))
    text = buf.getvalue()
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def plot(results: Sequence[BenchResult], path: str) -> None:
    """Bar chart with standard-error whiskers (needs matplotlib)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(max(4, len(results)), 3.5))
    ax.bar([r.benchmark for r in results], [r.mean_ns for r in results],
           yerr=[r.stderr_ns for r in results], capsize=3)
    ax.set_ylabel("ns per operation")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="pandorabench", description="Dispatch and introspection microbenchmarks.")
    ap.add_argument("benchmark", choices=("traversal", "sensors"))
    ap.add_argument("--runs", type=int, default=RUNS)
    ap.add_argument("--csv", metavar="PATH", help="write the result table to PATH")
    ap.add_argument("--plot", metavar="PATH", help="write a bar chart (matplotlib)")
    ap.add_argument("--lengths", default="2-10", help="traversal chain lengths, e.g. 2-10 or 2,5,10")
    args = ap.parse_args(argv)

    if args.benchmark == "traversal":
        lo, sep, hi = args.lengths.partition("-")
        lengths = range(int(lo), int(hi) + 1) if sep else [int(x) for x in args.lengths.split(",")]
        results = list(bench_traversal_sweep(lengths, runs=args.runs, gate=False).values())
    else:
        by_name = bench_sensor_vs_mop(runs=args.runs)
        results = list(by_name.values())
    sys.stdout.write(report(results, args.csv))
    if args.benchmark == "sensors":
        ratio = by_name["mop_get"].mean_ns / by_name["sensor"].mean_ns
        print(f"# control-path GET / sensor read = {ratio:.1f}x", file=sys.stderr)
    if args.plot:
        plot(results, args.plot)
    unstable = [r.benchmark for r in results if not r.stable]
    if unstable:
        print(f"# unstable (stderr > {MAX_STDERR_PCT}%): {', '.join(unstable)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
