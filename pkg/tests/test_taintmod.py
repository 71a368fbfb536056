import itertools
import os
import random

import networkx as nx
import pytest

import artiskit as A
from artiskit.const import Kind, SinkKind, SourceKind, is_taintable
from artiskit.taintmod import sink_id, summarize

DEVICE_ID = '''
entry Example.main

class Example
  method main() -> void regs=0
    invoke Example.leak
    return-void

  method leak() -> void regs=1
    invoke v0, Example.getID
    invoke rt::Log.d, v0
    return-void

  method getID() -> str regs=3
    invoke v0, rt::Telephony.getDeviceId
    invoke v1, rt::Str.length, v0
    const-int v2, 0
    if-eq v1, v2, done
    invoke v0, Example.prefixID, v0
  done:
    return v0

  method prefixID(str) -> str regs=2
    const-str v1, "+49-"
    concat v0, v1, v0
    return v0
'''

FIELDS = '''
entry App.main

class Box
  field data: str

class App
  field static cache: str
  method main() -> void regs=2
    new v0, Box
    invoke v1, rt::Account.getPassword
    iput v1, v0, Box.data
    iget v1, v0, Box.data
    sput v1, App.cache
    sget v1, App.cache
    invoke rt::Log.d, v1
    return-void
'''

POLICY = '''
source rt::Telephony.getDeviceId 0x1
source rt::Account.getPassword 0x4
sink rt::Log.d report
'''


@pytest.fixture
def policy():
    return A.parse_taint_policy(POLICY)


def graph(source, key):
    program = A.parse_program(source)
    g = A.build_graph(program.method_by_key(key), program)
    return A.ssa_convert(g)


def compile(source, policy, names=('taint',)):
    pipeline = A.create_pipeline(list(names), taint_policy=policy)
    return A.run_pipeline(A.parse_program(source), pipeline)


class TestCollect:
    def test_global_sink(self, policy):
        g = graph(DEVICE_ID, 'Example.leak/0')
        sinks, sources = A.collect_sinks_sources(g, policy)
        assert [s.kind for s in sinks] == [SinkKind.GLOBAL]
        assert sinks[0].sink_id == 'Example.leak/0@1:0'
        assert sinks[0].callee == 'rt::Log.d'
        assert str(sinks[0].mode) == 'report'
        assert [s.kind for s in sources] == [SourceKind.LSO2]

    def test_local_sinks_and_sources(self, policy):
        g = graph(DEVICE_ID, 'Example.getID/0')
        sinks, sources = A.collect_sinks_sources(g, policy)
        assert sorted(str(s.kind) for s in sinks) == ['LSI1', 'LSI2']
        assert [s.kind for s in sources] == [SourceKind.GLOBAL, SourceKind.LSO2]
        assert sources[0].tag == 0x1

    def test_parameters(self, policy):
        g = graph(DEVICE_ID, 'Example.prefixID/1')
        sinks, sources = A.collect_sinks_sources(g, policy)
        assert [s.kind for s in sinks] == [SinkKind.LSI2]
        assert [s.kind for s in sources] == [SourceKind.LSO1]

    def test_fields(self, policy):
        g = graph(FIELDS, 'App.main/0')
        sinks, sources = A.collect_sinks_sources(g, policy)
        assert [(str(s.kind), s.field) for s in sinks] == [
            ('LSI3', 'Box.data'),
            ('LSI3', 'App.cache'),
            ('GlobalSink', None),
        ]
        assert [(str(s.kind), s.field) for s in sources] == [
            ('GlobalSource', None),
            ('LSO3', 'Box.data'),
            ('LSO3', 'App.cache'),
        ]

    def test_without_policy(self):
        g = graph(DEVICE_ID, 'Example.leak/0')
        sinks, sources = A.collect_sinks_sources(g, A.TaintPolicy())
        assert sinks == []
        assert [s.kind for s in sources] == [SourceKind.LSO2]

    def test_sink_id(self):
        g = graph(DEVICE_ID, 'Example.leak/0')
        call = next(i for i in g.instructions.values() if i.aux.get('method') == 'rt::Log.d')
        assert sink_id(g, call, 2) == 'Example.leak/0@1:2'


class TestSlices:
    def test_slice_stops_at_sources(self, policy):
        g = graph(DEVICE_ID, 'Example.getID/0')
        sinks, _ = A.collect_sinks_sources(g, policy)
        ret = next(s for s in sinks if s.kind is SinkKind.LSI2)
        slice_ = A.backward_slice(g, ret, policy)
        assert [s.kind for s in slice_.sources] == [SourceKind.GLOBAL, SourceKind.LSO2]
        assert len(slice_.members) == 3
        assert not slice_.trivially_untainted
        assert slice_.describe().startswith('sink Example.getID/0@5:0 LSI2 sources=[')

    def test_slice_through_constants(self, policy):
        g = graph(DEVICE_ID, 'Example.prefixID/1')
        sinks, _ = A.collect_sinks_sources(g, policy)
        slice_ = A.backward_slice(g, sinks[0], policy)
        kinds = {g.instructions[i].kind for i in slice_.members}
        assert kinds == {Kind.PARAM, Kind.CONST_STR, Kind.CONCAT}
        assert [s.kind for s in slice_.sources] == [SourceKind.LSO1]

    def test_trivially_untainted(self, policy):
        source = (
            'entry App.main\nclass App\n  method main() -> void regs=1\n'
            '    const-str v0, "constant"\n    invoke rt::Log.d, v0\n    return-void\n'
        )
        g = graph(source, 'App.main/0')
        sinks, _ = A.collect_sinks_sources(g, policy)
        slice_ = A.backward_slice(g, sinks[0], policy)
        assert slice_.trivially_untainted
        assert repr(slice_) == '<Slice App.main/0@1:0 GlobalSink>'


class TestInstrument:
    def test_edits(self, policy):
        g = graph(DEVICE_ID, 'Example.leak/0')
        sinks, _ = A.collect_sinks_sources(g, policy)
        slices = [A.backward_slice(g, s, policy) for s in sinks]
        A.mutate(g, A.instrument(g, slices, policy))
        assert A.audit(g) == []

        kinds = [i.kind for i in g.block_instructions(0)]
        assert kinds == [Kind.INVOKE, Kind.TAG_POP, Kind.TAG_CHECK, Kind.INVOKE, Kind.RETURN_VOID]
        check = next(i for i in g.instructions.values() if i.kind is Kind.TAG_CHECK)
        assert check.aux['sink'] == 'Example.leak/0@1:0'
        assert g.instructions[check.inputs[0]].kind is Kind.TAG_POP

    def test_nothing_to_do(self, policy):
        g = graph(DEVICE_ID, 'Example.main/0')
        assert A.instrument(g, [], policy) == []

    def test_foreign_slice(self, policy):
        g = graph(DEVICE_ID, 'Example.leak/0')
        other = graph(DEVICE_ID, 'Example.getID/0')
        sinks, _ = A.collect_sinks_sources(other, policy)
        with pytest.raises(ValueError):
            A.instrument(g, [A.backward_slice(other, sinks[0], policy)], policy)

    def test_untainted_sink_checks_zero_tag(self, policy):
        source = (
            'entry App.main\nclass App\n  method main() -> void regs=1\n'
            '    const-str v0, "constant"\n    invoke rt::Log.d, v0\n    return-void\n'
        )
        g = graph(source, 'App.main/0')
        sinks, _ = A.collect_sinks_sources(g, policy)
        A.mutate(g, A.instrument(g, [A.backward_slice(g, sinks[0], policy)], policy))
        check = next(i for i in g.instructions.values() if i.kind is Kind.TAG_CHECK)
        zero = g.instructions[check.inputs[0]]
        assert (zero.kind, zero.aux['tag']) == (Kind.TAG_SOURCE, 0)
        assert A.audit(g) == []

    def test_loops_get_tag_phis(self, policy):
        source = '''
entry App.main
class App
  method main() -> void regs=4
    const-str v0, ""
    const-int v1, 0
    const-int v2, 2
    const-int v3, 1
  loop:
    if-eq v1, v2, done
    invoke v3, rt::Contacts.read, v1
    concat v0, v0, v3
    const-int v3, 1
    add v1, v1, v3
    goto loop
  done:
    invoke rt::Log.d, v0
    return-void
'''
        contacts = A.parse_taint_policy('source rt::Contacts.read 0x8\nsink rt::Log.d report\n')
        bundle, _ = compile(source, contacts)
        g = bundle.graphs['App.main/0']
        tag_phis = [i for i in g.instructions.values() if i.is_phi and i.type == 'tag']
        assert len(tag_phis) == 1
        assert A.execute(bundle).lines() == [
            'OUT Log.d: contact-0contact-1',
            'LEAK App.main/0@10:0 0x8 0',
            'EXIT 0',
        ]


class TestTaintPass:
    def test_device_id(self, policy):
        bundle, report = compile(DEVICE_ID, policy)
        assert bundle.contract
        assert bundle.taint_policy is policy
        assert A.execute(bundle).lines() == [
            'OUT Log.d: +49-555-0100',
            'LEAK Example.leak/0@1:0 0x1 0',
            'EXIT 0',
        ]
        assert summarize(report) == {
            'GlobalSink': 1,
            'LSI1': 1,
            'LSI2': 2,
            'GlobalSource': 1,
            'LSO1': 1,
            'LSO2': 2,
        }

    def test_fields(self, policy):
        bundle, _ = compile(FIELDS, policy)
        assert A.execute(bundle).lines() == [
            'OUT Log.d: hunter2',
            'LEAK App.main/0@6:0 0x4 0',
            'EXIT 0',
        ]

    def test_matches_oracle(self, policy):
        for source in (DEVICE_ID, FIELDS):
            bundle, _ = compile(source, policy, A.default_pass_names(taint=True))
            baseline, _ = compile(source, policy, ())
            oracle = A.naive_oracle(baseline, policy)
            assert A.execute(bundle).leak_counts() == oracle.leak_counts()
            assert oracle.output == A.execute(baseline).output

    def test_watched_mask(self):
        policy = A.parse_taint_policy(POLICY + 'watch 0x4\n')
        bundle, _ = compile(DEVICE_ID, policy)
        assert A.execute(bundle).leaks == []

    def test_halt(self):
        policy = A.parse_taint_policy(POLICY.replace('report', 'halt'))
        bundle, _ = compile(DEVICE_ID, policy)
        assert A.execute(bundle).lines() == ['LEAK Example.leak/0@1:0 0x1 0', 'EXIT 42']

    def test_require_sinks(self):
        policy = A.parse_taint_policy(
            'source rt::Telephony.getDeviceId 0x1\nsink rt::Net.send halt\n'
        )
        pipeline = A.create_pipeline(['taint'], taint_policy=policy, require_sinks=True)
        bundle, report = A.run_pipeline(A.parse_program(DEVICE_ID), pipeline)
        assert not bundle.contract
        assert report.totals()['taint'] == (0, 0)
        assert A.execute(bundle).output == ['Log.d: +49-555-0100']

        pipeline = A.create_pipeline(['taint'], taint_policy=policy)
        bundle, _ = A.run_pipeline(A.parse_program(DEVICE_ID), pipeline)
        assert bundle.contract

    def test_parameters_are_popped_last_first(self, policy):
        source = '''
entry App.main
class App
  method main() -> void regs=2
    const-str v0, "clean"
    invoke v1, rt::Telephony.getDeviceId
    invoke App.log, v0, v1
    return-void

  method log(str, str) -> void regs=2
    invoke rt::Log.d, v0
    invoke rt::Log.d, v1
    return-void
'''
        bundle, _ = compile(source, policy)
        assert A.execute(bundle).lines() == [
            'OUT Log.d: clean',
            'OUT Log.d: 555-0100',
            'LEAK App.log/2@1:0 0x1 0',
            'EXIT 0',
        ]


INTS, STRS = (0, 2, 3), (1, 4, 5)


def random_method(rng, loops, length=3):
    """
    Source of a method App.run(int, str) -> str computing over int registers
    v0 v2 v3 and str registers v1 v4 v5, with nested if/goto diamonds and,
    when loops is set, loops counting v6 up to v7 by v8.
    """
    labels = itertools.count()
    lines = ['    const-int v2, 1\n', '    const-int v3, 2\n', '    const-int v8, 1\n']
    lines += ['    const-str v4, "a"\n', '    const-str v5, "b"\n']

    def statement():
        i, j, k = (rng.choice(INTS) for _ in range(3))
        s, t, u = (rng.choice(STRS) for _ in range(3))
        return rng.choice([
            f'    add v{i}, v{j}, v{k}\n',
            f'    const-int v{i}, {rng.randint(0, 9)}\n',
            f'    invoke v{i}, rt::Str.length, v{s}\n',
            f'    invoke v{i}, rt::Location.getLatitude\n',
            f'    invoke v{i}, rt::Net.send, v{s}\n',
            f'    concat v{s}, v{t}, v{u}\n',
            f'    const-str v{s}, "c"\n',
            f'    invoke v{s}, rt::Telephony.getDeviceId\n',
            f'    invoke v{s}, rt::Str.fromInt, v{i}\n',
            f'    invoke v{s}, App.echo, v{t}\n',
            f'    invoke rt::Log.d, v{s}\n',
        ])

    def block(depth, in_loop):
        for _ in range(rng.randint(1, length)):
            roll = rng.random()
            if depth < 2 and roll < 0.2:
                n = next(labels)
                lines.append(f'    if-eq v{rng.choice(INTS)}, v{rng.choice(INTS)}, else{n}\n')
                block(depth + 1, in_loop)
                lines.append(f'    goto end{n}\n')
                lines.append(f'  else{n}:\n')
                block(depth + 1, in_loop)
                lines.append(f'  end{n}:\n')
                lines.append(statement())
            elif loops and not in_loop and depth < 2 and roll < 0.4:
                n = next(labels)
                lines.append('    const-int v6, 0\n')
                lines.append(f'    const-int v7, {rng.randint(1, 3)}\n')
                lines.append(f'  loop{n}:\n')
                lines.append(f'    if-eq v6, v7, exit{n}\n')
                block(depth + 1, True)
                lines.append('    add v6, v6, v8\n')
                lines.append(f'    goto loop{n}\n')
                lines.append(f'  exit{n}:\n')
                lines.append(statement())
            else:
                lines.append(statement())

    block(0, False)
    lines.append(f'    return v{rng.choice(STRS)}\n')
    return (
        'entry App.run\nclass App\n'
        '  method run(int, str) -> str regs=9\n' + ''.join(lines) +
        '  method echo(str) -> str regs=1\n    return v0\n'
    )


def reverse_reachable(g, sink, policy):
    """
    Values the sink's tracked value is reachable from along data edges,
    where no edge enters a source.
    """

    def is_source(instruction):
        if not is_taintable(instruction.type):
            return False
        if instruction.kind in (Kind.PARAM, Kind.INSTANCE_GET, Kind.STATIC_GET):
            return True
        if instruction.kind is Kind.INVOKE:
            callee = instruction.aux['method']
            return not callee.startswith('rt::') or callee in policy.sources
        return False

    flow = nx.DiGraph()
    for instruction in g.instructions.values():
        flow.add_node(instruction.id)
        if is_source(instruction):
            continue
        for value in instruction.arguments:
            if is_taintable(g.instructions[value].type):
                flow.add_edge(value, instruction.id)

    instruction = g.instructions[sink.instruction]
    if sink.kind in (SinkKind.GLOBAL, SinkKind.LSI1):
        tracked = instruction.arguments[sink.arg_index]
    else:
        tracked = instruction.inputs[-1]
    return nx.ancestors(flow, tracked) | {tracked}


class TestRandomSlices:
    @pytest.fixture
    def rng(self):
        return random.Random(int(os.environ.get('ARTISKIT_SEED', '1234')))

    @pytest.mark.parametrize('loops', [False, True])
    def test_members_are_reverse_reachable(self, rng, policy, loops):
        sinks = 0
        for _ in range(250):
            g = graph(random_method(rng, loops), 'App.run/2')
            for sink in A.collect_sinks_sources(g, policy)[0]:
                slice_ = A.backward_slice(g, sink, policy)
                assert set(slice_.members) == reverse_reachable(g, sink, policy)
                assert {s.instruction for s in slice_.sources} <= set(slice_.members)
                sinks += 1
        assert sinks > 250
