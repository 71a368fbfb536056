"""
The leak corpus: small programs with well-defined leakage behavior, each
shipped with its policies and the exact report it must produce.

A case named N of category C is made of corpus/C/N.mex, an optional N.taint
and N.perm, and N.expect listing OUT, LEAK, PERM and EXIT lines of the run of
its default instrumented build.
"""

import logging
import os
import random
from collections import Counter, namedtuple
from pathlib import Path

from .api import create_pipeline, default_pass_names
from .const import Grant, SinkMode
from .io import parse_perm_policy, parse_program, parse_taint_policy
from .mexfmt import TaintPolicy
from .passes import run_pipeline
from .runtime import execute, interpret, naive_oracle

logger = logging.getLogger(__name__)

CATEGORIES = (
    "general",
    "aliasing",
    "field-object",
    "interprocedural",
    "threads",
    "control-flow",
    "expected-fail-implicit",
)

# Categories whose cases are known to be missed by the analysis
EXPECTED_FAIL = frozenset({"expected-fail-implicit"})

# Pipelines that must agree on the leaks of every case
ROBUSTNESS_PIPELINES = (
    ("taint",),
    ("const-fold", "dce", "taint"),
    ("taint", "const-fold", "dce"),
    ("dce", "const-fold", "taint"),
    ("taint", "stack-elide"),
)


class CorpusError(ValueError):
    pass


Expected = namedtuple("Expected", ["output", "leaks", "permissions", "exit_status"])

CaseResult = namedtuple("CaseResult", ["case", "failures"])


class CorpusCase:
    """
    A corpus program, its policies and its expected report.
    """

    __slots__ = ("name", "category", "program", "taint_policy", "perm_policy", "expected")

    def __init__(self, name, category, program, taint_policy, perm_policy, expected):
        self.name = name
        self.category = category
        self.program = program
        self.taint_policy = taint_policy
        self.perm_policy = perm_policy
        self.expected = expected

    @property
    def expected_fail(self):
        return self.category in EXPECTED_FAIL

    def __repr__(self):
        return f"<CorpusCase {self.category}/{self.name}>"


def parse_expected(text):
    """
    Parse the content of a .expect file.

    :return: an Expected tuple; leaks and permissions are Counters.
    """
    output, leaks, permissions, exit_status = [], Counter(), Counter(), 0
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        kind, _, rest = line.partition(" ")
        words = rest.split()
        if kind == "OUT":
            output.append(rest)
        elif kind == "LEAK" and len(words) == 3:
            leaks[words[0], int(words[1], 16), int(words[2])] += 1
        elif kind == "PERM" and len(words) == 3:
            permissions[tuple(words)] += 1
        elif kind == "EXIT" and len(words) == 1:
            exit_status = int(words[0])
        else:
            raise CorpusError(f"line {lineno}: cannot parse expected report line {line!r}")
    return Expected(output, leaks, permissions, exit_status)


def _read(path):
    return path.read_text() if path.exists() else None


def load_case(path, category):
    path = Path(path)
    taint = _read(path.with_suffix(".taint"))
    perm = _read(path.with_suffix(".perm"))
    expect = _read(path.with_suffix(".expect"))
    if expect is None:
        raise CorpusError(f"{path} has no .expect file")
    return CorpusCase(
        path.stem,
        category,
        parse_program(path.read_text()),
        TaintPolicy() if taint is None else parse_taint_policy(taint),
        None if perm is None else parse_perm_policy(perm),
        parse_expected(expect),
    )


def load_corpus(directory, category=None):
    """
    Load every case of a corpus directory, ordered by category and name, or
    shuffled with the ARTISKIT_SEED environment variable when it is set.

    :param directory: corpus root, holding one subdirectory per category.
    :param category: only load cases of this category.
    :return: a list of CorpusCase.
    """
    root = Path(directory)
    if not root.is_dir():
        raise CorpusError(f"{directory} is not a directory")
    cases = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        if category is not None and sub.name != category:
            continue
        if sub.name not in CATEGORIES:
            raise CorpusError(f'unknown corpus category "{sub.name}"')
        cases.extend(load_case(path, sub.name) for path in sorted(sub.glob("*.mex")))
    if not cases:
        raise CorpusError(f"no corpus case found in {directory}")

    seed = os.environ.get("ARTISKIT_SEED")
    if seed is not None:
        random.Random(int(seed)).shuffle(cases)
    logger.info("loaded %d corpus cases from %s", len(cases), directory)
    return cases


def _build(case, names, taint_policy=None, perm_policy=None):
    pipeline = create_pipeline(names, taint_policy=taint_policy, perm_policy=perm_policy)
    bundle, _ = run_pipeline(case.program, pipeline)
    return bundle


def _leaks(report):
    return Counter((e.sink, e.tag, e.thread) for e in report.leaks)


def _observable(report):
    return report.output, report.exit_status


def run_case(case):
    """
    Check a corpus case:

    - its default instrumented build produces the expected report;
    - sliced instrumentation reports the same leaks as the naive oracle, with
      and without permission checks;
    - uninstrumented, tracer, taint (report mode), all-allow permission and
      bytecode runs have the same output and exit status;
    - leaks do not depend on where optimizations run in the pipeline.

    :return: a CaseResult whose failures list is empty on success.
    """
    failures = []
    expected = case.expected
    taint = case.taint_policy
    perm = case.perm_policy

    names = default_pass_names(taint=True, perm=perm is not None)
    full = execute(_build(case, names, taint, perm))
    if full.output != expected.output:
        failures.append(f"output {full.output} != expected {expected.output}")
    if _leaks(full) != expected.leaks:
        failures.append(f"leaks {sorted(_leaks(full))} != expected {sorted(expected.leaks)}")
    permissions = Counter((str(e.verdict), e.permission, e.callee) for e in full.permissions)
    if permissions != expected.permissions:
        failures.append(f"permission events {sorted(permissions)} != expected")
    if full.exit_status != expected.exit_status:
        failures.append(f"exit {full.exit_status} != expected {expected.exit_status}")

    tainted = execute(_build(case, default_pass_names(taint=True), taint))
    oracle = naive_oracle(_build(case, []), taint)
    if tainted.leak_counts() != oracle.leak_counts():
        failures.append("instrumented leaks differ from the oracle")
    if perm is not None:
        guarded = naive_oracle(_build(case, ["perm"], perm_policy=perm), taint)
        if full.leak_counts() != guarded.leak_counts():
            failures.append("leaks under permission checks differ from the oracle")

    baseline = execute(_build(case, []))
    reporting = TaintPolicy(
        taint.sources, dict.fromkeys(taint.sinks, SinkMode.REPORT), taint.watched_mask
    )
    runs = {
        "bytecode": interpret(case.program),
        "tracer": execute(_build(case, ["tracer"])),
        "taint": execute(_build(case, ["taint"], reporting)),
    }
    if perm is not None:
        allow = dict.fromkeys(perm.protected.values(), Grant.ALLOW)
        runs["perm"] = execute(_build(case, ["perm"], perm_policy=perm), grants=allow)
    for name, report in runs.items():
        if _observable(report) != _observable(baseline):
            failures.append(f"{name} build changes output or exit status")

    reference = None
    for names in ROBUSTNESS_PIPELINES:
        leaks = execute(_build(case, names, taint)).leak_counts()
        if reference is None:
            reference = leaks
        elif leaks != reference:
            failures.append(f"pipeline {list(names)} changes the leaks")

    for failure in failures:
        logger.debug("%r: %s", case, failure)
    return CaseResult(case, failures)


def run_corpus(cases):
    """
    :return: a list of CaseResult, in case order.
    """
    return [run_case(case) for case in cases]


def summarize(results):
    """
    Per-category table of passing cases.

    :param results: CaseResult instances.
    :return: a (text, ok) pair, ok being False when a case of a supported
        category fails.
    """
    passed, total = Counter(), Counter()
    for result in results:
        total[result.case.category] += 1
        passed[result.case.category] += not result.failures

    lines = [f"{'category':<24} {'passed':>8}"]
    ok = True
    for category in CATEGORIES:
        if not total[category]:
            continue
        ratio = f"{passed[category]}/{total[category]}"
        note = "  (expected to fail)" if category in EXPECTED_FAIL else ""
        lines.append(f"{category:<24} {ratio:>8}{note}")
        if category not in EXPECTED_FAIL and passed[category] != total[category]:
            ok = False
    for result in results:
        if result.failures and not result.case.expected_fail:
            lines.append(f"FAIL {result.case.category}/{result.case.name}: {result.failures[0]}")
    return "\n".join(lines) + "\n", ok
