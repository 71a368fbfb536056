"""
Command-line interface: instrument, run, verify, corpus and bench commands.

Every error is reported on stderr as a single "ERROR <code> <message>" line.
"""

import argparse
import logging
import os
import sys

from . import bench, corpus
from .api import PASSES, create_pipeline, default_pass_names
from .const import Grant
from .io import (
    BundleError,
    dump_bundle,
    load_bundle,
    parse_perm_policy,
    parse_program,
    parse_taint_policy,
)
from .irgraph import BuildError, MutationError, dump
from .mexfmt import MergeError, MexSyntaxError, PolicyError, merge_programs, verify_program
from .passes import CompileError, run_pipeline
from .runtime import execute
from .taintmod import TaintPass, summarize

logger = logging.getLogger(__name__)

USAGE_STATUS = 2

# Exception types and the code reporting them, most specific first
_ERROR_CODES = [
    (MexSyntaxError, "parse"),
    (PolicyError, "policy"),
    (MergeError, "merge"),
    (BundleError, "bundle"),
    (corpus.CorpusError, "corpus"),
    (CompileError, "compile"),
    (BuildError, "compile"),
    (MutationError, "compile"),
]


class CommandError(Exception):
    def __init__(self, code, message, status=USAGE_STATUS):
        super().__init__(message)
        self.code = code
        self.status = status


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise CommandError("usage", message)


def _read(path, what):
    try:
        with open(path) as f:
            return f.read()
    except OSError as e:
        raise CommandError("usage", f"cannot read {what} {path}: {e.strerror}") from None


def _write(path, text):
    try:
        with open(path, "w") as f:
            f.write(text)
    except OSError as e:
        raise CommandError("usage", f"cannot write {path}: {e.strerror}") from None


def _pairs(values, what):
    pairs = {}
    for value in values or ():
        key, sep, target = value.partition("=")
        if not sep or not key or not target:
            raise CommandError("usage", f'{what} "{value}" is not of the form A=B')
        pairs[key] = target
    return pairs


def _grants(values):
    grants = {}
    for permission, verdict in _pairs(values, "grant").items():
        try:
            grants[permission] = Grant(verdict)
        except ValueError:
            raise CommandError("usage", f'grant "{verdict}" is neither allow nor deny') from None
    return grants


def _pass_names(values):
    names = [name for value in values for name in value.split(",") if name]
    for name in names:
        if name not in PASSES:
            raise CommandError("usage", f'unknown pass "{name}"')
    return names


def cmd_instrument(args):
    program = parse_program(_read(args.input, "program"))
    if args.merge:
        program = merge_programs(program, parse_program(_read(args.merge, "program")))

    diagnostics = verify_program(program)
    if diagnostics:
        for d in diagnostics:
            print(f"{d.method}:{d.index}: {d.message}", file=sys.stderr)
        raise CommandError("verify", f"program has {len(diagnostics)} verification errors")

    taint = perm = None
    if args.taint_policy:
        taint = parse_taint_policy(_read(args.taint_policy, "taint policy"))
    if args.perm_policy:
        perm = parse_perm_policy(_read(args.perm_policy, "permission policy"))

    if args.passes is None:
        names = default_pass_names(taint=taint is not None, perm=perm is not None)
    else:
        names = _pass_names(args.passes)
    try:
        pipeline = create_pipeline(
            names,
            taint_policy=taint,
            perm_policy=perm,
            redirects=_pairs(args.redirects, "redirect"),
            require_sinks=args.lazy,
        )
    except (TypeError, ValueError) as e:
        raise CommandError("usage", str(e)) from None

    bundle, report = run_pipeline(program, pipeline, jobs=args.jobs)
    _write(args.out, dump_bundle(bundle))

    if args.dump_ir:
        for g in bundle.graphs.values():
            sys.stdout.write(dump(g))
    if args.dump_slices:
        for _, line in report.details(TaintPass.name):
            if line.startswith("sink "):
                print(line)
    sys.stdout.write(report.to_string())
    if TaintPass.name in names:
        counts = summarize(report)
        print("taint " + " ".join(f"{kind}={counts[kind]}" for kind in sorted(counts)))
    return 0


def cmd_run(args):
    bundle = load_bundle(_read(args.bundle, "bundle"))
    report = execute(bundle, args.args, _grants(args.grants))
    for line in report.lines():
        if not line.startswith(("EXIT ", "ERROR ")):
            print(line)
    if args.report:
        _write(args.report, report.to_string())
    if report.error is not None:
        print(f"ERROR runtime {report.error}", file=sys.stderr)
    return report.exit_status & 0xFF


def cmd_verify(args):
    program = parse_program(_read(args.input, "program"))
    diagnostics = verify_program(program)
    for d in diagnostics:
        print(f"{d.method}:{d.index}: {d.message}")
    if diagnostics:
        raise CommandError("verify", f"program has {len(diagnostics)} verification errors")
    print("ok")
    return 0


def cmd_corpus(args):
    cases = corpus.load_corpus(args.dir, args.filter)
    text, ok = corpus.summarize(corpus.run_corpus(cases))
    sys.stdout.write(text)
    return 0 if ok else 1


def cmd_bench(args):
    try:
        measurements = bench.run_suite(args.suite, args.iterations, args.repeats)
    except ValueError as e:
        raise CommandError("usage", str(e)) from None
    sys.stdout.write(bench.format_table(measurements))
    return 0


def create_parser():
    parser = _ArgumentParser(prog="artiskit", description=__doc__.splitlines()[1])
    parser.add_argument(
        "--log-level",
        default=os.environ.get("ARTISKIT_LOG", "WARNING"),
        help="logging level (default: ARTISKIT_LOG or WARNING)",
    )
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = commands.add_parser("instrument", help="compile and instrument a program")
    p.add_argument("--in", dest="input", required=True, help="program (.mex)")
    p.add_argument("--merge", help="companion program merged into the input")
    p.add_argument(
        "--pass", dest="passes", action="append", help=f"pass to run, among {', '.join(PASSES)}"
    )
    p.add_argument("--taint-policy", help="taint policy (.taint)")
    p.add_argument("--perm-policy", help="permission policy (.perm)")
    p.add_argument("--redirect", dest="redirects", action="append", help="FROM=TO")
    p.add_argument("--lazy", action="store_true", help="skip taint if no global sink is called")
    p.add_argument("--jobs", type=int, default=1, help="methods compiled in parallel")
    p.add_argument("--dump-ir", action="store_true", help="print the resulting graphs")
    p.add_argument("--dump-slices", action="store_true", help="print taint slices")
    p.add_argument("--out", required=True, help="bundle to write")
    p.set_defaults(func=cmd_instrument)

    p = commands.add_parser("run", help="execute a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--grant", dest="grants", action="append", help="PERM=allow|deny")
    p.add_argument("--report", help="file receiving the run report")
    p.add_argument("args", nargs="*", help="arguments of the entry method")
    p.set_defaults(func=cmd_run)

    p = commands.add_parser("verify", help="print verifier diagnostics")
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_verify)

    p = commands.add_parser("corpus", help="check the leak corpus")
    p.add_argument("--dir", default="corpus")
    p.add_argument("--filter", choices=corpus.CATEGORIES, help="only run this category")
    p.set_defaults(func=cmd_corpus)

    p = commands.add_parser("bench", help="run microbenchmarks")
    p.add_argument("--suite", default="micro", choices=sorted(bench.SUITES))
    p.add_argument("--iterations", type=int, default=bench.MIN_ITERATIONS)
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    """
    Entry point of the artiskit command.

    :param argv: command-line arguments (default: sys.argv[1:]).
    :return: the exit status.
    """
    try:
        args = create_parser().parse_args(argv)
        level = getattr(logging, str(args.log_level).upper(), None)
        if not isinstance(level, int):
            raise CommandError("usage", f'unknown log level "{args.log_level}"')
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CommandError as e:
        error, code, status = e, e.code, e.status
    except Exception as e:
        code = next((c for klass, c in _ERROR_CODES if isinstance(e, klass)), None)
        if code is None:
            raise
        error, status = e, USAGE_STATUS
    print(f"ERROR {code} {error}", file=sys.stderr)
    return status
