"""
Taint tracking instrumentation.

The analysis collects global sinks and sources (from the policy) and local
ones (method boundaries and fields), then slices backward from every sink.
The instrumentation builds, next to the data flow of each slice, a network of
tag values: tags are ordinary SSA values of type tag, merged by tag phis and
combined by union, and cross method boundaries through a per-thread stack.
"""

import logging
from collections import Counter, namedtuple

from sortedcontainers import SortedSet

from .const import (
    CONSTANTS,
    TAG,
    VOID,
    Kind,
    SinkKind,
    SourceKind,
    is_intrinsic,
    is_taintable,
)
from .irgraph import insert_after, insert_before, replace_input
from .passes import Outcome, Pass

logger = logging.getLogger(__name__)


class SinkDescriptor(
    namedtuple(
        "SinkDescriptor",
        ["instruction", "kind", "sink_id", "callee", "arg_index", "field", "mode"],
        defaults=[None, None, None, None],
    )
):
    __slots__ = ()


class SourceDescriptor(
    namedtuple("SourceDescriptor", ["instruction", "kind", "tag", "field"], defaults=[None, None])
):
    __slots__ = ()


class Slice:
    """
    A sink, the sources its tracked value derives from within the method, and
    every instruction on the way (sources and constants included).
    """

    __slots__ = ("method", "sink", "sources", "members")

    def __init__(self, method, sink, sources, members):
        self.method = method
        self.sink = sink
        self.sources = tuple(sources)
        self.members = frozenset(members)

    @property
    def trivially_untainted(self):
        return not self.sources

    def describe(self):
        sources = ", ".join(f"{s.kind}#{s.instruction}" for s in self.sources)
        return (
            f"sink {self.sink.sink_id} {self.sink.kind} sources=[{sources}] "
            f"members={len(self.members)}"
        )

    def __repr__(self):
        return f"<Slice {self.sink.sink_id} {self.sink.kind}>"


# Values that never carry taint and end a slice
_UNTAINTED = CONSTANTS | {Kind.SPAWN, Kind.PERM_CHECK}


def sink_id(g, instruction, index=0):
    """
    Stable name of a sink: method key, bytecode index and argument index.
    """
    return f"{g.key}@{instruction.pc}:{index}"


def _guard(instruction):
    """
    The permission verdict a guarded invocation depends on, as an input list.
    """
    if instruction.kind is Kind.INVOKE and instruction.aux.get("guarded"):
        return instruction.inputs[-1:]
    return []


def _tracked(g, sink):
    instruction = g.instructions[sink.instruction]
    if sink.kind in (SinkKind.GLOBAL, SinkKind.LSI1):
        return instruction.arguments[sink.arg_index]
    return instruction.inputs[-1]


def _type(g, value):
    return g.instructions[value].type


def _sources_of(g, instruction, policy):
    """
    Source descriptors an instruction gives rise to (possibly none).
    """
    if not is_taintable(instruction.type):
        return []
    kind = instruction.kind
    if kind is Kind.PARAM:
        return [SourceDescriptor(instruction.id, SourceKind.LSO1)]
    if kind in (Kind.INSTANCE_GET, Kind.STATIC_GET):
        return [SourceDescriptor(instruction.id, SourceKind.LSO3, field=instruction.aux["field"])]
    if kind is Kind.INVOKE:
        callee = instruction.aux["method"]
        found = []
        if not is_intrinsic(callee):
            found.append(SourceDescriptor(instruction.id, SourceKind.LSO2))
        if policy is not None and callee in policy.sources:
            found.append(
                SourceDescriptor(instruction.id, SourceKind.GLOBAL, tag=policy.sources[callee])
            )
        return found
    return []


def _sinks_of(g, instruction, policy):
    kind = instruction.kind
    found = []
    if kind in (Kind.INVOKE, Kind.SPAWN):
        callee = instruction.aux["method"]
        for index, argument in enumerate(instruction.arguments):
            if not is_taintable(_type(g, argument)):
                continue
            if kind is Kind.INVOKE and policy is not None and callee in policy.sinks:
                found.append(
                    SinkDescriptor(
                        instruction.id,
                        SinkKind.GLOBAL,
                        sink_id(g, instruction, index),
                        callee,
                        index,
                        mode=policy.sinks[callee],
                    )
                )
            if not is_intrinsic(callee):
                found.append(
                    SinkDescriptor(
                        instruction.id, SinkKind.LSI1, sink_id(g, instruction, index), callee, index
                    )
                )
    elif kind is Kind.RETURN and is_taintable(_type(g, instruction.inputs[0])):
        found.append(SinkDescriptor(instruction.id, SinkKind.LSI2, sink_id(g, instruction)))
    elif kind in (Kind.INSTANCE_SET, Kind.STATIC_SET) and is_taintable(
        _type(g, instruction.inputs[-1])
    ):
        found.append(
            SinkDescriptor(
                instruction.id,
                SinkKind.LSI3,
                sink_id(g, instruction),
                field=instruction.aux["field"],
            )
        )
    return found


def collect_sinks_sources(g, policy):
    """
    Find every sink and source of a method in SSA form. Only int and str
    values are tracked: objects carry no tag of their own, their fields do.

    :param g: an HGraph in SSA form.
    :param policy: a TaintPolicy.
    :return: a (sinks, sources) pair of lists, in block reverse post-order.
    """
    sinks, sources = [], []
    for block in g.reverse_post_order():
        for instruction in g.block_instructions(block):
            sinks.extend(_sinks_of(g, instruction, policy))
            sources.extend(_sources_of(g, instruction, policy))
    return sinks, sources


def _data_inputs(g, instruction):
    if instruction.kind in (Kind.INVOKE, Kind.SPAWN):
        values = instruction.arguments
    elif instruction.is_phi:
        return list(instruction.inputs)
    else:
        values = instruction.inputs
    return [v for v in values if is_taintable(_type(g, v))]


def backward_slice(g, sink, policy=None):
    """
    Slice backward from the value a sink consumes, following inputs until
    sources or constants.

    :param g: an HGraph in SSA form.
    :param sink: a SinkDescriptor of this graph.
    :param policy: the TaintPolicy defining global sources.
    :return: a Slice.
    """
    members = SortedSet()
    sources = []
    worklist = [_tracked(g, sink)]
    while worklist:
        value = worklist.pop()
        if value in members:
            continue
        members.add(value)
        instruction = g.instructions[value]
        found = _sources_of(g, instruction, policy)
        if found:
            sources.extend(found)
        elif instruction.kind not in _UNTAINTED:
            worklist.extend(_data_inputs(g, instruction))

    sources.sort(key=lambda s: (s.instruction, s.kind.value))
    return Slice(g.key, sink, sources, members)


_SINK_ORDER = {SinkKind.GLOBAL: 0, SinkKind.LSI1: 1, SinkKind.LSI2: 2, SinkKind.LSI3: 3}


class _TagNetwork:
    def __init__(self, g, policy):
        self.g = g
        self.policy = policy
        self.edits = []
        self.tags = {}
        self.zero_tag = None
        # (tag phi, input index, data value) waiting for a back edge tag
        self.pending = []

    def zero(self):
        if self.zero_tag is None:
            self.zero_tag = self.g.new_instruction(Kind.TAG_SOURCE, TAG, tag=0)
        return self.zero_tag.id

    def new(self, kind, type_, inputs=(), **aux):
        return self.g.new_instruction(kind, type_, inputs, **aux)

    def prologue(self, params):
        g = self.g
        entry = g.block_instructions(g.entry)
        anchor = [i for i in entry if i.kind is Kind.PARAM]
        cursor = anchor[-1].id if anchor else None
        first = next(i for i in entry if i.kind is not Kind.PARAM)
        for param in sorted(params, key=lambda i: -g.instructions[i].aux["index"]):
            pop = self.new(Kind.TAG_POP, TAG)
            if cursor is None:
                self.edits.append(insert_before(first, pop))
            else:
                self.edits.append(insert_after(cursor, pop))
            cursor = pop.id
            self.tags[param] = pop.id

    def check_or_push(self, instruction, sink):
        value = _tracked(self.g, sink)
        tag = self.tags.get(value)
        if tag is None:
            tag = self.zero()
        if sink.kind is SinkKind.GLOBAL:
            new = self.new(
                Kind.TAG_CHECK,
                VOID,
                [tag] + _guard(instruction),
                sink=sink.sink_id,
                mode=str(sink.mode),
                mask=self.policy.watched_mask,
            )
        elif sink.kind is SinkKind.LSI3:
            objects = instruction.inputs[:-1]
            new = self.new(Kind.TAG_FIELD_SET, VOID, objects + [tag], field=sink.field)
        else:
            new = self.new(Kind.TAG_PUSH, VOID, [tag])
        self.edits.append(insert_before(instruction, new))

    def after(self, cursor, kind, inputs=(), **aux):
        new = self.new(kind, TAG, inputs, **aux)
        self.edits.append(insert_after(cursor, new))
        return new.id

    def source(self, instruction, descriptors):
        kinds = {d.kind: d for d in descriptors}
        cursor, tag = instruction.id, None
        if SourceKind.LSO2 in kinds:
            tag = cursor = self.after(cursor, Kind.TAG_POP)
        if SourceKind.GLOBAL in kinds:
            guard = _guard(instruction)
            policy_tag = kinds[SourceKind.GLOBAL].tag
            source = cursor = self.after(cursor, Kind.TAG_SOURCE, guard, tag=policy_tag)
            if tag is not None:
                source = cursor = self.after(cursor, Kind.TAG_COMBINE, [tag, source])
            tag = source
        if SourceKind.LSO3 in kinds:
            objects = instruction.inputs[:1] if instruction.kind is Kind.INSTANCE_GET else []
            tag = self.after(cursor, Kind.TAG_FIELD_GET, objects, field=instruction.aux["field"])
        self.tags[instruction.id] = tag

    def member(self, instruction):
        if instruction.is_phi:
            inputs, later = [], []
            for index, value in enumerate(instruction.inputs):
                if value in self.tags:
                    inputs.append(self.tags[value])
                else:
                    inputs.append(self.zero())
                    later.append((index, value))
            phi = self.new(Kind.PHI, TAG, inputs)
            self.edits.append(insert_after(instruction, phi))
            self.tags[instruction.id] = phi.id
            self.pending.extend((phi.id, index, value) for index, value in later)
            return

        tags = []
        for value in _data_inputs(self.g, instruction):
            tag = self.tags.get(value)
            if tag is not None and tag != self.zero_tag_id and tag not in tags:
                tags.append(tag)
        if not tags:
            self.tags[instruction.id] = self.zero()
            return
        guard = _guard(instruction)
        if guard and len(tags) == 1:
            tags.append(tags[0])
        cursor, tag = instruction.id, tags[0]
        for index, other in enumerate(tags[1:], 2):
            inputs = [tag, other] + (guard if index == len(tags) else [])
            tag = cursor = self.after(cursor, Kind.TAG_COMBINE, inputs)
        self.tags[instruction.id] = tag

    @property
    def zero_tag_id(self):
        return None if self.zero_tag is None else self.zero_tag.id


def instrument(g, slices, policy, sources=None):
    """
    Edits building the tag network of a method.

    Parameter tags are popped at entry (last parameter first), invocation
    results pop the callee's return tag, global sources create their policy
    tag and field loads read the field taint map. Every slice member gets the
    union of its inputs' tags, data phis get tag phis. Global sinks check
    their argument's tag, invocations push their arguments' tags (first
    argument first), returns push the returned value's tag and field stores
    write the field taint map. On a guarded invocation, the sink checks, the
    policy tag and the result tag take the permission verdict as an input:
    a denied call checks nothing and its result is untainted.

    :param g: an HGraph in SSA form.
    :param slices: Slice instances of this graph.
    :param policy: the TaintPolicy.
    :param sources: additional source descriptors to instrument even outside
        any slice (parameters and invocation results, to keep the taint
        stack balanced).
    :return: a list of edits.
    """
    for slice_ in slices:
        if slice_.method != g.key:
            raise ValueError(f"slice of {slice_.method} cannot instrument {g.key}")

    members = set()
    by_source = {}
    by_sink = {}
    for slice_ in slices:
        members |= slice_.members
        for descriptor in slice_.sources:
            by_source.setdefault(descriptor.instruction, set()).add(descriptor)
        by_sink.setdefault(slice_.sink.instruction, set()).add(slice_.sink)
    for descriptor in sources or ():
        by_source.setdefault(descriptor.instruction, set()).add(descriptor)

    if not by_source and not by_sink:
        return []

    network = _TagNetwork(g, policy)
    network.prologue(
        [i for i, d in by_source.items() if any(s.kind is SourceKind.LSO1 for s in d)]
    )

    for block in g.reverse_post_order():
        for instruction_id in list(g.blocks[block].instructions):
            instruction = g.instructions[instruction_id]
            sinks = by_sink.get(instruction_id, ())
            for sink in sorted(sinks, key=lambda s: (_SINK_ORDER[s.kind], s.arg_index or 0)):
                network.check_or_push(instruction, sink)
            if instruction.kind is Kind.PARAM:
                continue
            if instruction_id in by_source:
                network.source(instruction, by_source[instruction_id])
            elif instruction_id in members and instruction.kind not in _UNTAINTED:
                network.member(instruction)

    fixes = [
        replace_input(phi, index, network.tags[value])
        for phi, index, value in network.pending
        if value in network.tags and network.tags[value] != network.zero_tag_id
    ]

    edits = network.edits + fixes
    if network.zero_tag is not None:
        entry = g.block_instructions(g.entry)
        first = next(i for i in entry if i.kind is not Kind.PARAM)
        edits.insert(0, insert_before(first, network.zero_tag))
    return edits


class TaintPass(Pass):
    """
    Instrument every method for taint tracking.

    :param policy: a TaintPolicy.
    :param require_sinks: leave the program alone when it never calls a
        global sink (default False).
    """

    name = "taint"
    unique = True

    def __init__(self, policy, require_sinks=False):
        self.policy = policy
        self.require_sinks = require_sinks
        self.skip = False

    def prepare(self, program):
        self.skip = self.require_sinks and not any(
            instr.opcode == "invoke" and str(instr.operands[1]) in self.policy.sinks
            for method in program.methods()
            for _, instr in method.body
        )
        if self.skip:
            logger.info("no global sink is ever called, taint instrumentation skipped")

    def run(self, g):
        if self.skip:
            return Outcome([], 0)
        sinks, sources = collect_sinks_sources(g, self.policy)
        slices = [backward_slice(g, sink, self.policy) for sink in sinks]
        boundary = [s for s in sources if s.kind in (SourceKind.LSO1, SourceKind.LSO2)]
        edits = instrument(g, slices, self.policy, boundary)
        details = [s.describe() for s in slices]
        details += [f"source {g.key}#{s.instruction} {s.kind}" for s in sources]
        return Outcome(edits, len(sinks) + len(sources), tuple(details))

    def annotate(self, bundle):
        bundle.taint_policy = self.policy
        bundle.contract = not self.skip


def summarize(report):
    """
    Count sinks and sources by kind in the details a taint pass reported.

    :param report: an InstrumentationReport.
    :return: a Counter mapping kind names to counts.
    """
    counts = Counter()
    for _, line in report.details(TaintPass.name):
        words = line.split()
        if words[0] == "sink":
            counts[words[2]] += 1
        elif words[0] == "source":
            counts[words[2]] += 1
    return counts
