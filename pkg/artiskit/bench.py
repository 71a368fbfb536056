"""
Microbenchmarks comparing uninstrumented and instrumented runs.
"""

import logging
from collections import namedtuple

from .api import create_pipeline
from .io import parse_perm_policy, parse_program, parse_taint_policy
from .passes import run_pipeline
from .runtime import execute

logger = logging.getLogger(__name__)

MIN_ITERATIONS = 1000

_TAINT_POLICY = """
source rt::Location.getLatitude 0x1
sink rt::Log.d report
"""

# Protects a method the benchmarks never call
_PERM_POLICY = """
permission rt::Camera.open CAMERA
grant CAMERA allow
"""

_CPU_LOOP = """
entry Bench.main

class Bench
  method main() -> int regs=6
    invoke v0, rt::Location.getLatitude
    const-int v1, 0
    const-int v2, {iterations}
    const-int v3, 1
  loop:
    if-eq v1, v2, done
    add v0, v0, v3
    mul v4, v0, v3
    sub v0, v4, v3
    add v0, v0, v3
    add v1, v1, v3
    goto loop
  done:
    invoke v5, rt::Str.fromInt, v0
    invoke rt::Log.d, v5
    const-int v0, 0
    return v0
"""

_CALL_HEAVY = """
entry Bench.main

class Bench
  method main() -> int regs=5
    invoke v0, rt::Location.getLatitude
    const-int v1, 0
    const-int v2, {iterations}
    const-int v3, 1
  loop:
    if-eq v1, v2, done
    invoke v0, Bench.step, v0, v3
    add v1, v1, v3
    goto loop
  done:
    invoke v4, rt::Str.fromInt, v0
    invoke rt::Log.d, v4
    const-int v0, 0
    return v0

  method step(int, int) -> int regs=2
    add v0, v0, v1
    return v0
"""

_FIELD_HEAVY = """
entry Bench.main

class Bench
  field value: int
  method main() -> int regs=6
    new v5, Bench
    invoke v0, rt::Location.getLatitude
    iput v0, v5, Bench.value
    const-int v1, 0
    const-int v2, {iterations}
    const-int v3, 1
  loop:
    if-eq v1, v2, done
    iget v0, v5, Bench.value
    add v0, v0, v3
    iput v0, v5, Bench.value
    add v1, v1, v3
    goto loop
  done:
    iget v0, v5, Bench.value
    invoke v4, rt::Str.fromInt, v0
    invoke rt::Log.d, v4
    const-int v0, 0
    return v0
"""

SUITES = {
    "micro": {
        "cpu-loop": _CPU_LOOP,
        "call-heavy": _CALL_HEAVY,
        "field-heavy": _FIELD_HEAVY,
    },
}

Measurement = namedtuple("Measurement", ["benchmark", "baseline", "taint", "perm"])


def _best_time(bundle, repeats):
    return min(execute(bundle).wall_time for _ in range(repeats))


def run_suite(suite="micro", iterations=MIN_ITERATIONS, repeats=3):
    """
    Time every benchmark of a suite uninstrumented, taint-instrumented and
    permission-instrumented, keeping the best of several runs.

    :param suite: a key of SUITES.
    :param iterations: loop iterations of each benchmark.
    :param repeats: runs per build.
    :return: a list of Measurement, times in seconds.
    """
    if suite not in SUITES:
        raise ValueError(f'unknown benchmark suite "{suite}"')
    if iterations < MIN_ITERATIONS:
        raise ValueError(f"benchmarks need at least {MIN_ITERATIONS} iterations")
    if repeats < 1:
        raise ValueError("benchmarks need at least one run")

    taint = parse_taint_policy(_TAINT_POLICY)
    perm = parse_perm_policy(_PERM_POLICY)
    builds = {
        "baseline": create_pipeline([]),
        "taint": create_pipeline(["taint"], taint_policy=taint),
        "perm": create_pipeline(["perm"], perm_policy=perm),
    }

    measurements = []
    for name, source in SUITES[suite].items():
        program = parse_program(source.format(iterations=iterations))
        times = {}
        for build, pipeline in builds.items():
            bundle, _ = run_pipeline(program, pipeline)
            times[build] = _best_time(bundle, repeats)
        logger.info("%s: %s", name, times)
        measurements.append(Measurement(name, times["baseline"], times["taint"], times["perm"]))
    return measurements


def ratio(instrumented, baseline):
    return instrumented / baseline if baseline > 0 else float("inf")


def format_table(measurements):
    """
    :param measurements: Measurement instances.
    :return: a text table of absolute times and overhead ratios.
    """
    lines = [
        f"{'benchmark':<12} {'baseline':>11} {'taint':>11} {'ratio':>7} {'perm':>11} {'ratio':>7}"
    ]
    for m in measurements:
        lines.append(
            f"{m.benchmark:<12} {m.baseline * 1000:>8.2f} ms {m.taint * 1000:>8.2f} ms "
            f"{ratio(m.taint, m.baseline):>6.2f}x {m.perm * 1000:>8.2f} ms "
            f"{ratio(m.perm, m.baseline):>6.2f}x"
        )
    return "\n".join(lines) + "\n"
