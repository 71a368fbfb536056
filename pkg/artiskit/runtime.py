"""
Execution of compiled programs.

The Interpreter runs the SSA graphs of a bundle directly, resolving phis by
incoming edge. Instrumented graphs drive the TaintLib (a per-thread taint
stack and a shared field taint map) and the permission decision point. The
OracleInterpreter runs uninstrumented graphs and propagates a shadow tag next
to every value, and interpret() executes MEX bytecode on a register file.
"""

import itertools
import logging
import sys
import threading
import time
from collections import Counter, namedtuple

from . import intrinsics
from .const import (
    ERROR_EXIT_STATUS,
    HALT_EXIT_STATUS,
    INT,
    STR,
    Grant,
    Kind,
    SinkMode,
    combine,
    default_value,
    divide,
    is_intrinsic,
    is_taintable,
    null,
    wrap64,
)
from .taintmod import sink_id

logger = logging.getLogger(__name__)

MAIN_THREAD = 0
MAX_CALL_DEPTH = 1000
# Python frames one MEX call takes in the graph interpreters, plus headroom
_FRAMES_PER_CALL = 4
_FRAME_HEADROOM = 1000


class MexRuntimeError(RuntimeError):
    """
    Raised when a program fails at run time, with the key of the method and
    the bytecode index where it happened.
    """

    def __init__(self, message, method=None, pc=None):
        if method is not None:
            message += f" in {method}"
            if pc is not None:
                message += f" at index {pc}"
        super().__init__(message)
        self.method = method
        self.pc = pc


def _allow_call_depth():
    """
    Make room on the Python stack for MAX_CALL_DEPTH nested MEX calls. The
    recursion limit is only ever raised.
    """
    needed = MAX_CALL_DEPTH * _FRAMES_PER_CALL + _FRAME_HEADROOM
    if sys.getrecursionlimit() < needed:
        sys.setrecursionlimit(needed)


def _depth_exceeded(method=None):
    return MexRuntimeError("call depth exceeded", method)


class _Stop(Exception):
    """
    Unwinds a thread once the program halted or failed.
    """


LeakEvent = namedtuple("LeakEvent", ["sink", "tag", "thread", "occurrence"])
PermissionEvent = namedtuple("PermissionEvent", ["verdict", "permission", "callee", "thread"])


class ObjHandle:
    """
    An object: a unique id, its class and the values of its instance fields.
    """

    __slots__ = ("id", "klass", "fields")

    def __init__(self, id_, klass, fields):
        self.id = id_
        self.klass = klass
        self.fields = fields

    def __repr__(self):
        return f"<{self.klass}#{self.id}>"


class FieldTaintMap:
    """
    Tags of fields, shared by all threads. Static fields are keyed by
    "Class.field", instance fields by (object id, "Class.field"). A field
    that was never written has tag 0.
    """

    __slots__ = ("_tags", "_lock")

    def __init__(self):
        self._tags = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(field, obj=None):
        return field if obj is None else (obj.id, field)

    def set(self, field, tag, obj=None):
        key = self.key(field, obj)
        with self._lock:
            if tag:
                self._tags[key] = tag
            else:
                self._tags.pop(key, None)

    def get(self, field, obj=None):
        with self._lock:
            return self._tags.get(self.key(field, obj), 0)

    def __len__(self):
        return len(self._tags)


class TaintLib:
    """
    Runtime support of taint instrumentation: tag algebra, a taint stack per
    thread and the field taint map.
    """

    def __init__(self, fields=None):
        self.fields = FieldTaintMap() if fields is None else fields
        self._local = threading.local()

    @property
    def stack(self):
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = self._local.stack = []
        return stack

    def reset(self, tags=()):
        """
        Give the current thread a fresh stack holding given tags.
        """
        self._local.stack = list(tags)

    def depth(self):
        return len(self.stack)

    @staticmethod
    def source(tag):
        return tag

    @staticmethod
    def combine(a, b):
        return combine(a, b)

    def push(self, tag):
        self.stack.append(tag)

    def pop(self):
        stack = self.stack
        if not stack:
            raise MexRuntimeError("taint stack underflow")
        return stack.pop()

    def field_set(self, field, tag, obj=None):
        self.fields.set(field, tag, obj)

    def field_get(self, field, obj=None):
        return self.fields.get(field, obj)

    @staticmethod
    def check(tag, mask):
        """
        :return: True if given tag carries a watched taint.
        """
        return bool(tag & mask)


def pdp_check(permission, grants):
    """
    Decide whether an operation requiring given permission may run.

    :param permission: permission name.
    :param grants: mapping from permission names to Grant.
    :return: Grant.ALLOW or Grant.DENY (when no grant is given).
    """
    return grants.get(permission, Grant.DENY)


class RunReport:
    """
    Everything observable about one execution.
    """

    __slots__ = ("output", "traces", "leaks", "permissions", "exit_status", "error", "wall_time")

    def __init__(self):
        self.output = []
        self.traces = []
        self.leaks = []
        self.permissions = []
        self.exit_status = 0
        self.error = None
        self.wall_time = 0.0

    def leak_counts(self):
        """
        :return: a Counter of (sink, tag) pairs, to compare runs regardless of
            thread interleaving.
        """
        return Counter((event.sink, event.tag) for event in self.leaks)

    def lines(self, traces=True):
        """
        The report as protocol lines: OUT, TRACE, LEAK, PERM and a final EXIT.
        """
        lines = [f"OUT {line}" for line in self.output]
        if traces:
            lines += [f"TRACE {method}" for method in self.traces]
        lines += [f"LEAK {e.sink} {e.tag:#x} {e.thread}" for e in self.leaks]
        lines += [f"PERM {e.verdict} {e.permission} {e.callee}" for e in self.permissions]
        if self.error is not None:
            lines.append(f"ERROR runtime {self.error}")
        lines.append(f"EXIT {self.exit_status}")
        return lines

    def to_string(self):
        return "\n".join(self.lines()) + "\n"

    def __repr__(self):
        return (
            f"<RunReport exit={self.exit_status} out={len(self.output)} "
            f"leaks={len(self.leaks)} perms={len(self.permissions)}>"
        )


def _entry_arguments(method, args):
    args = list(args)
    if len(args) != method.arity:
        raise MexRuntimeError(f"{method.key} expects {method.arity} arguments, got {len(args)}")
    values = []
    for type_, arg in zip(method.params, args):
        if type_ == INT:
            try:
                values.append(wrap64(int(arg)))
            except ValueError:
                raise MexRuntimeError(f'"{arg}" is not an int argument') from None
        elif type_ == STR:
            values.append(str(arg))
        else:
            values.append(null)
    return values


class Frame:
    __slots__ = ("graph", "args", "arg_tags", "values", "tags", "thread", "depth")

    def __init__(self, graph, args, arg_tags, thread, depth):
        self.graph = graph
        self.args = args
        self.arg_tags = arg_tags
        self.values = {}
        self.tags = {}
        self.thread = thread
        self.depth = depth


class _Thread:
    __slots__ = ("thread", "joined")

    def __init__(self, thread):
        self.thread = thread
        self.joined = False


def _compare(cond, a, b):
    if cond == "eq":
        return a == b
    if cond == "ne":
        return a != b
    return a < b


class Interpreter:
    """
    Execute the graphs of a bundle.

    :param bundle: a Bundle whose graphs passed audit.
    :param grants: mapping from permission names to Grant, overriding the
        grants of the bundle's permission policy.
    """

    def __init__(self, bundle, grants=None):
        self.bundle = bundle
        self.program = bundle.program
        self.grants = dict(bundle.grants)
        self.grants.update(grants or {})
        self.taint = TaintLib()
        self.report = RunReport()

        self.statics = {}
        self.instance_fields = {}
        for klass in self.program.classes:
            self.instance_fields[klass.name] = [f for f in klass.fields if not f.static]
            for field in klass.fields:
                if field.static:
                    self.statics[f"{klass.name}.{field.name}"] = default_value(field.type)

        self._objects = itertools.count(1)
        self._tids = itertools.count(MAIN_THREAD + 1)
        self._threads = {}
        self._lock = threading.Lock()
        self._occurrences = Counter()
        self._stop = False
        self._halted = False
        self._failure = None

        self._handlers = {}
        for kind in Kind:
            handler = getattr(self, "op_" + kind.name.lower(), None)
            if handler is not None:
                self._handlers[kind] = handler
        for kind in (Kind.ADD, Kind.SUB, Kind.MUL):
            self._handlers[kind] = self.op_arithmetic

    # Program and threads

    def run(self, args=()):
        """
        Execute the entry method with given arguments (strings or values,
        converted to the parameter types).

        :return: a RunReport.
        """
        method = self.program.entry_method()
        g = self.bundle.graphs[method.key]
        start = time.perf_counter()
        value = None
        _allow_call_depth()
        try:
            values = _entry_arguments(method, args)
            if self.bundle.contract:
                self.taint.reset([0] * sum(is_taintable(p) for p in method.params))
            value, _ = self.call(g, values, MAIN_THREAD, [0] * len(values))
            if self.bundle.contract and is_taintable(g.return_type):
                self.taint.pop()
        except _Stop:
            pass
        except MexRuntimeError as e:
            self.fail(e)
        except RecursionError:
            self.fail(_depth_exceeded(method.key))
        self.wait_threads()

        report = self.report
        if self._failure is not None:
            report.error = self._failure
            report.exit_status = ERROR_EXIT_STATUS
            logger.debug("runtime error: %s", self._failure)
        elif self._halted:
            report.exit_status = HALT_EXIT_STATUS
        else:
            report.exit_status = value if g.return_type == INT else 0
        report.wall_time = time.perf_counter() - start
        return report

    def fail(self, error):
        with self._lock:
            if self._failure is None and not self._halted:
                self._failure = error
            self._stop = True

    def wait_threads(self):
        while True:
            with self._lock:
                pending = [t.thread for t in self._threads.values() if t.thread.is_alive()]
            if not pending:
                return
            for thread in pending:
                thread.join()

    def _thread_main(self, tid, g, args, tags):
        logger.debug("thread %d starts %s", tid, g.key)
        arg_tags = self.enter_thread(tags)
        try:
            self.call(g, args, tid, arg_tags)
        except _Stop:
            pass
        except MexRuntimeError as e:
            self.fail(e)
        except RecursionError:
            self.fail(_depth_exceeded(g.key))
        logger.debug("thread %d ends", tid)

    def spawn_tags(self, frame, instr, g):
        """
        The spawn record: argument tags the spawner pushed, moved to the new
        thread's stack.
        """
        if not self.bundle.contract:
            return []
        count = sum(is_taintable(p) for p in g.params)
        return [self.taint.pop() for _ in range(count)][::-1]

    def enter_thread(self, tags):
        self.taint.reset(tags)
        return None

    # Method calls

    def graph_of(self, callee, arity):
        return self.bundle.graphs[f"{callee}/{arity}"]

    def error(self, frame, instr, message):
        return MexRuntimeError(message, frame.graph.key, instr.pc)

    def call(self, g, args, thread, arg_tags=None, depth=0):
        """
        Execute a graph.

        :return: the (value, tag) pair it returns; the tag is only known to
            interpreters tracking shadow tags.
        """
        if depth > MAX_CALL_DEPTH:
            raise _depth_exceeded(g.key)
        frame = Frame(g, args, arg_tags, thread, depth)
        entry_depth = self.taint.depth()
        handlers = self._handlers
        instructions = g.instructions
        block, previous = g.entry, None

        while True:
            if self._stop:
                raise _Stop()
            current = g.blocks[block]
            ids = current.instructions
            start = 0
            if previous is not None:
                while start < len(ids) and instructions[ids[start]].is_phi:
                    start += 1
                if start:
                    edge = current.predecessors.index(previous)
                    self.resolve_phis(frame, [instructions[i] for i in ids[:start]], edge)

            for instruction_id in ids[start:]:
                instr = instructions[instruction_id]
                kind = instr.kind
                if kind is Kind.IF:
                    values = frame.values
                    taken = _compare(
                        instr.aux["cond"], values[instr.inputs[0]], values[instr.inputs[1]]
                    )
                    block = current.successors[0 if taken else 1]
                elif kind is Kind.GOTO:
                    block = current.successors[0]
                elif kind is Kind.RETURN or kind is Kind.RETURN_VOID:
                    value = frame.values[instr.inputs[0]] if kind is Kind.RETURN else None
                    self.check_balance(frame, instr, entry_depth)
                    return value, self.return_tag(frame, instr)
                else:
                    frame.values[instruction_id] = handlers[kind](frame, instr)
                    self.propagate(frame, instr)
            previous = current.id

    def resolve_phis(self, frame, phis, edge):
        values = [frame.values[phi.inputs[edge]] for phi in phis]
        for phi, value in zip(phis, values):
            frame.values[phi.id] = value

    def check_balance(self, frame, instr, entry_depth):
        if not self.bundle.contract:
            return
        g = frame.graph
        expected = entry_depth - sum(is_taintable(p) for p in g.params)
        expected += is_taintable(g.return_type)
        if self.taint.depth() != expected:
            raise self.error(
                frame,
                instr,
                f"taint stack depth {self.taint.depth()} at return, expected {expected}",
            )

    def propagate(self, frame, instr):
        """
        Called after every non-terminator instruction.
        """

    def return_tag(self, frame, instr):
        return None

    def invoke(self, frame, instr, callee, args):
        value, _ = self.call(
            self.graph_of(callee, len(args)), args, frame.thread, None, frame.depth + 1
        )
        return value

    def intrinsic(self, frame, instr, callee, args):
        return intrinsics.call(callee, args, self.emit)

    def deny(self, frame, instr, callee):
        """
        A denied call: the callee's share of the taint stack contract is
        carried out in its place and the result is the type default.
        """
        if self.bundle.contract and not is_intrinsic(callee):
            g = self.graph_of(callee, len(instr.arguments))
            for _ in range(sum(is_taintable(p) for p in g.params)):
                self.taint.pop()
            if is_taintable(g.return_type):
                self.taint.push(0)
        return default_value(instr.type)

    def checkpoint(self):
        """
        Raise _Stop once the program halted or failed, before any observable effect.
        """
        if self._stop:
            raise _Stop()

    def emit(self, line):
        with self._lock:
            self.checkpoint()
            self.report.output.append(line)

    def leak(self, frame, sink, tag, mode):
        halt = str(mode) == str(SinkMode.HALT)
        with self._lock:
            self.checkpoint()
            if halt and self._failure is None:
                self._halted = True
            self._stop = self._stop or halt
            self._occurrences[frame.thread, sink] += 1
            occurrence = self._occurrences[frame.thread, sink]
            self.report.leaks.append(LeakEvent(sink, tag, frame.thread, occurrence))
        logger.debug("leak of %#x at %s on thread %d", tag, sink, frame.thread)
        if halt:
            logger.debug("halting on leak at %s", sink)
            raise _Stop()

    # Instructions

    def op_param(self, frame, instr):
        return frame.args[instr.aux["index"]]

    def op_const_int(self, frame, instr):
        return instr.aux["value"]

    def op_const_str(self, frame, instr):
        return instr.aux["value"]

    def op_arithmetic(self, frame, instr):
        a, b = (frame.values[i] for i in instr.inputs)
        if instr.kind is Kind.ADD:
            return wrap64(a + b)
        if instr.kind is Kind.SUB:
            return wrap64(a - b)
        return wrap64(a * b)

    def op_div(self, frame, instr):
        a, b = (frame.values[i] for i in instr.inputs)
        return divide(a, b)

    def op_concat(self, frame, instr):
        a, b = (frame.values[i] for i in instr.inputs)
        return a + b

    def op_null_check(self, frame, instr):
        value = frame.values[instr.inputs[0]]
        if value is null:
            raise self.error(frame, instr, "null dereference")
        return value

    def op_div_zero_check(self, frame, instr):
        value = frame.values[instr.inputs[0]]
        if value == 0:
            raise self.error(frame, instr, "division by zero")
        return value

    def op_new_instance(self, frame, instr):
        fields = {f.name: default_value(f.type) for f in self.instance_fields[instr.type]}
        return ObjHandle(next(self._objects), instr.type, fields)

    def op_instance_get(self, frame, instr):
        obj = frame.values[instr.inputs[0]]
        return obj.fields[instr.aux["field"].rpartition(".")[2]]

    def op_instance_set(self, frame, instr):
        obj, value = (frame.values[i] for i in instr.inputs)
        obj.fields[instr.aux["field"].rpartition(".")[2]] = value

    def op_static_get(self, frame, instr):
        return self.statics[instr.aux["field"]]

    def op_static_set(self, frame, instr):
        self.statics[instr.aux["field"]] = frame.values[instr.inputs[0]]

    def op_invoke(self, frame, instr):
        self.checkpoint()
        callee = instr.aux["method"]
        args = [frame.values[i] for i in instr.arguments]
        if instr.aux.get("guarded") and not frame.values[instr.inputs[-1]]:
            return self.deny(frame, instr, callee)
        if is_intrinsic(callee):
            return self.intrinsic(frame, instr, callee, args)
        return self.invoke(frame, instr, callee, args)

    def op_spawn(self, frame, instr):
        self.checkpoint()
        args = [frame.values[i] for i in instr.arguments]
        g = self.graph_of(instr.aux["method"], len(args))
        tags = self.spawn_tags(frame, instr, g)
        tid = next(self._tids)
        thread = threading.Thread(
            target=self._thread_main, args=(tid, g, args, tags), name=f"mex-{tid}", daemon=True
        )
        with self._lock:
            self._threads[tid] = _Thread(thread)
        thread.start()
        return tid

    def op_join(self, frame, instr):
        tid = frame.values[instr.inputs[0]]
        with self._lock:
            entry = self._threads.get(tid)
            if entry is None or entry.joined:
                raise self.error(frame, instr, f"invalid join of thread {tid}")
            entry.joined = True
        entry.thread.join()
        logger.debug("thread %d joined by thread %d", tid, frame.thread)
        if self._stop:
            raise _Stop()

    def op_print(self, frame, instr):
        self.emit(str(frame.values[instr.inputs[0]]))

    def op_trace(self, frame, instr):
        self.checkpoint()
        self.report.traces.append(instr.aux["method"])

    def op_tag_source(self, frame, instr):
        if instr.inputs and not frame.values[instr.inputs[0]]:
            return 0
        return self.taint.source(instr.aux["tag"])

    def op_tag_combine(self, frame, instr):
        if len(instr.inputs) > 2 and not frame.values[instr.inputs[2]]:
            return 0
        a, b = (frame.values[i] for i in instr.inputs[:2])
        return self.taint.combine(a, b)

    def op_tag_check(self, frame, instr):
        if len(instr.inputs) > 1 and not frame.values[instr.inputs[1]]:
            return
        tag = frame.values[instr.inputs[0]]
        if self.taint.check(tag, instr.aux["mask"]):
            self.leak(frame, instr.aux["sink"], tag, instr.aux["mode"])

    def op_tag_push(self, frame, instr):
        self.taint.push(frame.values[instr.inputs[0]])

    def op_tag_pop(self, frame, instr):
        try:
            return self.taint.pop()
        except MexRuntimeError as e:
            raise self.error(frame, instr, str(e)) from None

    def op_tag_field_set(self, frame, instr):
        *objects, tag = (frame.values[i] for i in instr.inputs)
        self.taint.field_set(instr.aux["field"], tag, *objects)

    def op_tag_field_get(self, frame, instr):
        objects = [frame.values[i] for i in instr.inputs]
        return self.taint.field_get(instr.aux["field"], *objects)

    def op_perm_check(self, frame, instr):
        permission, callee = instr.aux["permission"], instr.aux["callee"]
        verdict = pdp_check(permission, self.grants)
        with self._lock:
            self.checkpoint()
            self.report.permissions.append(
                PermissionEvent(verdict, permission, callee, frame.thread)
            )
        return 1 if verdict else 0


class OracleInterpreter(Interpreter):
    """
    Execute uninstrumented graphs, propagating a tag next to every int and
    str value through every instruction, calls and fields included, and
    checking the policy's sinks on every call.

    :param bundle: a Bundle compiled without taint instrumentation.
    :param policy: a TaintPolicy.
    """

    def __init__(self, bundle, policy, grants=None):
        if bundle.contract:
            raise ValueError("the oracle runs uninstrumented bundles only")
        super().__init__(bundle, grants)
        self.policy = policy

    def _tag(self, frame, value):
        return frame.tags.get(value, 0)

    def _argument_tags(self, frame, instr):
        return [self._tag(frame, i) for i in instr.arguments]

    def resolve_phis(self, frame, phis, edge):
        tags = [self._tag(frame, phi.inputs[edge]) for phi in phis]
        super().resolve_phis(frame, phis, edge)
        for phi, tag in zip(phis, tags):
            frame.tags[phi.id] = tag

    def propagate(self, frame, instr):
        kind = instr.kind
        if kind is Kind.INSTANCE_SET or kind is Kind.STATIC_SET:
            value = instr.inputs[-1]
            if is_taintable(frame.graph.instructions[value].type):
                objects = [frame.values[instr.inputs[0]]] if kind is Kind.INSTANCE_SET else []
                self.taint.field_set(instr.aux["field"], self._tag(frame, value), *objects)
            return
        if kind is Kind.INVOKE or not is_taintable(instr.type):
            return
        if kind is Kind.PARAM:
            tag = frame.arg_tags[instr.aux["index"]]
        elif kind is Kind.INSTANCE_GET:
            tag = self.taint.field_get(instr.aux["field"], frame.values[instr.inputs[0]])
        elif kind is Kind.STATIC_GET:
            tag = self.taint.field_get(instr.aux["field"])
        elif kind in (Kind.CONST_INT, Kind.CONST_STR, Kind.SPAWN, Kind.PERM_CHECK):
            tag = 0
        else:
            tag = 0
            for value in instr.inputs:
                if is_taintable(frame.graph.instructions[value].type):
                    tag = combine(tag, self._tag(frame, value))
        frame.tags[instr.id] = tag

    def return_tag(self, frame, instr):
        if instr.kind is Kind.RETURN:
            return self._tag(frame, instr.inputs[0])
        return 0

    def check_sinks(self, frame, instr, callee, tags):
        mode = self.policy.sinks.get(callee)
        if mode is None:
            return
        g = frame.graph
        for index, value in enumerate(instr.arguments):
            if is_taintable(g.instructions[value].type) and self.taint.check(
                tags[index], self.policy.watched_mask
            ):
                self.leak(frame, sink_id(g, instr, index), tags[index], mode)

    def invoke(self, frame, instr, callee, args):
        tags = self._argument_tags(frame, instr)
        self.check_sinks(frame, instr, callee, tags)
        value, tag = self.call(
            self.graph_of(callee, len(args)), args, frame.thread, tags, frame.depth + 1
        )
        if callee in self.policy.sources:
            tag = combine(tag, self.policy.sources[callee])
        frame.tags[instr.id] = tag if is_taintable(instr.type) else 0
        return value

    def intrinsic(self, frame, instr, callee, args):
        tags = self._argument_tags(frame, instr)
        self.check_sinks(frame, instr, callee, tags)
        value = super().intrinsic(frame, instr, callee, args)
        if callee in self.policy.sources:
            tag = self.policy.sources[callee]
        else:
            tag = 0
            for value_id, arg_tag in zip(instr.arguments, tags):
                if is_taintable(frame.graph.instructions[value_id].type):
                    tag = combine(tag, arg_tag)
        frame.tags[instr.id] = tag if is_taintable(instr.type) else 0
        return value

    def spawn_tags(self, frame, instr, g):
        return self._argument_tags(frame, instr)

    def enter_thread(self, tags):
        return tags


def execute(bundle, args=(), grants=None):
    """
    Run a compiled program.

    :param bundle: a Bundle.
    :param args: arguments of the entry method.
    :param grants: per-run grant overrides (permission name to Grant).
    :return: a RunReport.
    """
    return Interpreter(bundle, grants).run(args)


def naive_oracle(bundle, policy, args=()):
    """
    Run an uninstrumented program while propagating taint through every
    value, as a reference for sliced instrumentation.

    :param bundle: a Bundle compiled without the taint pass.
    :param policy: a TaintPolicy.
    :param args: arguments of the entry method.
    :return: a RunReport whose leaks are the reference leak events.
    """
    return OracleInterpreter(bundle, policy).run(args)


class BytecodeInterpreter:
    """
    Execute MEX bytecode directly on a register file. Spawned methods run to
    completion at the spawn point.
    """

    def __init__(self, program):
        self.program = program
        self.report = RunReport()
        self.statics = {
            f"{klass.name}.{field.name}": default_value(field.type)
            for klass in program.classes
            for field in klass.fields
            if field.static
        }
        self._objects = itertools.count(1)
        self._tids = itertools.count(MAIN_THREAD + 1)
        self._joined = {}

    def run(self, args=()):
        method = self.program.entry_method()
        start = time.perf_counter()
        _allow_call_depth()
        try:
            value = self.call(method, _entry_arguments(method, args), 0)
            self.report.exit_status = value if method.return_type == INT else 0
        except MexRuntimeError as e:
            self.report.error = e
            self.report.exit_status = ERROR_EXIT_STATUS
        except RecursionError:
            self.report.error = _depth_exceeded(method.key)
            self.report.exit_status = ERROR_EXIT_STATUS
        self.report.wall_time = time.perf_counter() - start
        return self.report

    def new(self, klass):
        fields = {
            f.name: default_value(f.type) for f in self.program.klass(klass).fields if not f.static
        }
        return ObjHandle(next(self._objects), klass, fields)

    def invoke(self, ref, args, depth):
        if ref.intrinsic:
            return intrinsics.call(str(ref), args, self.report.output.append)
        return self.call(self.program.method(ref.klass, ref.name, len(args)), args, depth + 1)

    def call(self, method, args, depth):
        if depth > MAX_CALL_DEPTH:
            raise _depth_exceeded(method.key)
        regs = list(args) + [None] * (method.registers - len(args))
        labels = method.labels
        body = method.body
        pc = 0

        def fail(message):
            return MexRuntimeError(message, method.key, pc)

        def instance(register):
            obj = regs[register]
            if obj is null:
                raise fail("null dereference")
            return obj

        while True:
            op, operands = body[pc][1]
            next_pc = pc + 1
            if op in ("const-int", "const-str"):
                regs[operands[0]] = operands[1]
            elif op == "move":
                regs[operands[0]] = regs[operands[1]]
            elif op in ("add", "sub", "mul"):
                a, b = regs[operands[1]], regs[operands[2]]
                regs[operands[0]] = wrap64({"add": a + b, "sub": a - b, "mul": a * b}[op])
            elif op == "div":
                if regs[operands[2]] == 0:
                    raise fail("division by zero")
                regs[operands[0]] = divide(regs[operands[1]], regs[operands[2]])
            elif op == "concat":
                regs[operands[0]] = regs[operands[1]] + regs[operands[2]]
            elif op in ("if-eq", "if-ne", "if-lt"):
                if _compare(op[3:], regs[operands[0]], regs[operands[1]]):
                    next_pc = labels[operands[2]]
            elif op == "goto":
                next_pc = labels[operands[0]]
            elif op == "new":
                regs[operands[0]] = self.new(operands[1])
            elif op == "iget":
                regs[operands[0]] = instance(operands[1]).fields[operands[2].name]
            elif op == "iput":
                instance(operands[1]).fields[operands[2].name] = regs[operands[0]]
            elif op == "sget":
                regs[operands[0]] = self.statics[str(operands[1])]
            elif op == "sput":
                self.statics[str(operands[1])] = regs[operands[0]]
            elif op == "invoke":
                value = self.invoke(operands[1], [regs[r] for r in operands[2:]], depth)
                if operands[0] is not None:
                    regs[operands[0]] = value
            elif op == "spawn":
                tid = next(self._tids)
                self._joined[tid] = False
                self.invoke(operands[1], [regs[r] for r in operands[2:]], depth)
                regs[operands[0]] = tid
            elif op == "join":
                tid = regs[operands[0]]
                if self._joined.get(tid, True):
                    raise fail(f"invalid join of thread {tid}")
                self._joined[tid] = True
            elif op == "return":
                return regs[operands[0]]
            elif op == "return-void":
                return None
            elif op == "print":
                self.report.output.append(str(regs[operands[0]]))
            pc = next_pc


def interpret(program, args=()):
    """
    Execute a verified program from its bytecode.

    :param program: a MexProgram.
    :param args: arguments of the entry method.
    :return: a RunReport (output and exit status only).
    """
    return BytecodeInterpreter(program).run(args)
