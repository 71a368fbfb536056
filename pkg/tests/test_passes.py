import itertools
import os
import random

import pytest

import artiskit as A
from artiskit.const import Kind


def program(body, ret='void', regs=3, extra=''):
    return A.parse_program(
        'entry App.main\nclass App\n'
        f'  method main() -> {ret} regs={regs}\n' + body + extra
    )


def kinds(bundle, key='App.main/0'):
    g = bundle.graphs[key]
    return [i.kind for b in g.blocks for i in g.block_instructions(b)]


def compile(prog, names, **config):
    return A.run_pipeline(prog, A.create_pipeline(names, **config))


ARITHMETIC = (
    '    const-int v0, 5\n'
    '    const-int v1, 4\n'
    '    mul v2, v0, v1\n'
    '    add v2, v2, v1\n'
    '    return v2\n'
)


class TestConstantFolding:
    def test_fold(self):
        bundle, report = compile(program(ARITHMETIC, ret='int'), ['const-fold', 'dce'])
        assert kinds(bundle) == [Kind.CONST_INT, Kind.RETURN]
        assert A.execute(bundle).exit_status == 24

        const_fold, dce = report.methods['App.main/0']
        assert const_fold.name == 'const-fold'
        assert const_fold.targets == 2
        assert dce.targets == 3

    def test_without_dce(self):
        bundle, _ = compile(program(ARITHMETIC, ret='int'), ['const-fold'])
        assert kinds(bundle).count(Kind.MUL) == 0
        assert kinds(bundle).count(Kind.CONST_INT) == 4

    def test_concat(self):
        prog = program(
            '    const-str v0, "ab"\n'
            '    const-str v1, "cd"\n'
            '    concat v2, v0, v1\n'
            '    print v2\n'
            '    return-void\n'
        )
        bundle, _ = compile(prog, ['const-fold', 'dce'])
        g = bundle.graphs['App.main/0']
        const, = [i for i in g.instructions.values() if i.kind is Kind.CONST_STR]
        assert const.aux['value'] == 'abcd'
        assert A.execute(bundle).output == ['abcd']

    def test_wraps(self):
        prog = program(
            '    const-int v0, 9223372036854775807\n'
            '    const-int v1, 1\n'
            '    add v2, v0, v1\n'
            '    print v2\n'
            '    return-void\n'
        )
        bundle, _ = compile(prog, ['const-fold'])
        assert A.execute(bundle).output == ['-9223372036854775808']

    def test_division(self):
        prog = program(
            '    const-int v0, -7\n'
            '    const-int v1, 2\n'
            '    div v2, v0, v1\n'
            '    print v2\n'
            '    return-void\n'
        )
        bundle, report = compile(prog, ['const-fold'])
        assert report.methods['App.main/0'][0].targets == 1
        assert A.execute(bundle).output == ['-3']

    def test_division_by_zero_is_kept(self):
        prog = program(
            '    const-int v0, 1\n'
            '    const-int v1, 0\n'
            '    div v2, v0, v1\n'
            '    print v2\n'
            '    return-void\n'
        )
        bundle, report = compile(prog, ['const-fold', 'dce'])
        assert report.methods['App.main/0'][0].targets == 0
        assert Kind.DIV in kinds(bundle)

        run = A.execute(bundle)
        assert run.exit_status == 1
        assert 'division by zero in App.main/0 at index 2' in str(run.error)
        assert run.lines()[-2].startswith('ERROR runtime division by zero')

    def test_phis_are_not_folded(self):
        prog = program(
            '    const-int v0, 1\n'
            '    const-int v1, 2\n'
            '    if-eq v0, v1, other\n'
            '    const-int v2, 3\n'
            '    goto done\n'
            '  other:\n'
            '    const-int v2, 4\n'
            '  done:\n'
            '    add v2, v2, v1\n'
            '    return v2\n',
            ret='int',
        )
        bundle, _ = compile(prog, ['const-fold', 'dce'])
        assert Kind.ADD in kinds(bundle)
        assert A.execute(bundle).exit_status == 5


class TestDeadCodeElimination:
    def test_unused_values(self):
        prog = program(
            '    const-int v0, 1\n'
            '    const-str v1, "unused"\n'
            '    new v2, App\n'
            '    return-void\n'
        )
        bundle, report = compile(prog, ['dce'])
        assert kinds(bundle) == [Kind.RETURN_VOID]
        assert report.totals()['dce'] == (3, 3)

    def test_side_effects_stay(self):
        prog = program(
            '    invoke v0, rt::Telephony.getDeviceId\n'
            '    const-int v1, 0\n'
            '    const-int v2, 1\n'
            '    div v1, v2, v1\n'
            '    return-void\n'
        )
        bundle, _ = compile(prog, ['dce'])
        assert kinds(bundle) == [
            Kind.INVOKE,
            Kind.CONST_INT,
            Kind.DIV_ZERO_CHECK,
            Kind.RETURN_VOID,
        ]
        assert A.execute(bundle).exit_status == 1

    def test_dead_loop_phis(self):
        prog = program(
            '    const-int v0, 0\n'
            '    const-int v1, 1\n'
            '    const-int v2, 3\n'
            '  loop:\n'
            '    if-eq v2, v1, done\n'
            '    add v0, v0, v1\n'
            '    sub v2, v2, v1\n'
            '    goto loop\n'
            '  done:\n'
            '    return-void\n'
        )
        bundle, _ = compile(prog, ['dce'])
        assert Kind.ADD not in kinds(bundle)
        assert Kind.SUB in kinds(bundle)
        assert A.execute(bundle).exit_status == 0


class TestTracer:
    def test_traces(self):
        prog = program(
            '    const-int v0, 2\n'
            '    invoke v0, App.twice, v0\n'
            '    return-void\n',
            extra=(
                '  method twice(int) -> int regs=1\n'
                '    add v0, v0, v0\n'
                '    return v0\n'
            ),
        )
        bundle, _ = compile(prog, ['tracer'])
        run = A.execute(bundle)
        assert run.traces == ['App.main', 'App.twice']
        assert run.lines()[:2] == ['TRACE App.main', 'TRACE App.twice']

        g = bundle.graphs['App.twice/1']
        assert [i.kind for i in g.block_instructions(0)][:2] == [Kind.PARAM, Kind.TRACE]


LEAKY = (
    '    invoke v0, rt::Telephony.getDeviceId\n'
    '    invoke v0, App.id, v0\n'
    '    invoke rt::Log.d, v0\n'
    '    return-void\n'
)
IDENTITY = '  method id(str) -> str regs=1\n    return v0\n'
POLICY = 'source rt::Telephony.getDeviceId 0x1\nsink rt::Log.d report\n'


class TestStackElision:
    def test_requires_taint(self):
        with pytest.raises(ValueError):
            A.create_pipeline(['stack-elide'])

    def test_elides_pass_through(self):
        prog = program(LEAKY, regs=1, extra=IDENTITY)
        policy = A.parse_taint_policy(POLICY)
        plain, _ = compile(prog, ['taint'], taint_policy=policy)
        elided, report = compile(prog, ['taint', 'stack-elide'], taint_policy=policy)

        assert Kind.TAG_POP in kinds(plain, 'App.id/1')
        assert kinds(elided, 'App.id/1') == [Kind.PARAM, Kind.RETURN]
        assert report.methods['App.id/1'][1].targets == 1

        assert A.execute(elided).lines() == A.execute(plain).lines()
        assert A.execute(elided).lines() == [
            'OUT Log.d: 555-0100',
            'LEAK App.main/0@2:0 0x1 0',
            'EXIT 0',
        ]


class TestRedirect:
    EXTRA = '  method log(str) -> void regs=1\n    print v0\n    return-void\n'
    BODY = '    const-str v0, "hello"\n    invoke rt::Log.d, v0\n    return-void\n'

    def test_redirect(self):
        prog = program(self.BODY, regs=1, extra=self.EXTRA)
        bundle, report = compile(prog, ['redirect'], redirects={'rt::Log.d': 'App.log'})
        assert A.execute(bundle).output == ['hello']
        assert report.totals()['redirect'] == (2, 1)

    def test_missing_target(self):
        prog = program(self.BODY, regs=1)
        with pytest.raises(A.CompileError):
            compile(prog, ['redirect'], redirects={'rt::Log.d': 'App.log'})

    def test_signature_mismatch(self):
        prog = program(self.BODY, regs=1)
        with pytest.raises(A.CompileError):
            compile(prog, ['redirect'], redirects={'rt::Log.d': 'rt::Net.send'})

    def test_before_instrumentation(self):
        policy = A.parse_taint_policy(POLICY)
        with pytest.raises(ValueError):
            A.create_pipeline(['taint', 'redirect'], taint_policy=policy)


class TestPipelines:
    def test_default_names(self):
        assert A.default_pass_names() == ['const-fold', 'dce']
        assert A.default_pass_names(perm=True) == ['const-fold', 'dce', 'perm']
        assert A.default_pass_names(taint=True, perm=True) == ['const-fold', 'dce', 'perm', 'taint']

    def test_errors(self):
        policy = A.parse_taint_policy(POLICY)
        with pytest.raises(ValueError):
            A.create_pass('inline')
        with pytest.raises(ValueError):
            A.create_pipeline(['taint'])
        with pytest.raises(ValueError):
            A.create_pipeline(['perm'])
        with pytest.raises(ValueError):
            A.create_pipeline(['taint', 'taint'], taint_policy=policy)
        perm = A.PermissionPolicy({'rt::Log.d': 'LOG'})
        with pytest.raises(ValueError):
            A.create_pipeline(['taint', 'perm'], taint_policy=policy, perm_policy=perm)
        with pytest.raises(TypeError):
            A.PassPipeline(['dce'])

    def test_names(self):
        pipeline = A.create_pipeline(['const-fold', 'dce', 'const-fold'])
        assert pipeline.names == ['const-fold', 'dce', 'const-fold']
        assert len(pipeline) == 3

    def test_unverified_program(self):
        prog = program('    print v0\n    return-void\n')
        with pytest.raises(A.CompileError) as e:
            compile(prog, [])
        assert e.value.violations[0].message == 'undefined register v0'

    def test_jobs(self):
        prog = program(LEAKY, regs=1, extra=IDENTITY)
        policy = A.parse_taint_policy(POLICY)
        names = A.default_pass_names(taint=True)
        sequential, _ = compile(prog, names, taint_policy=policy)
        parallel, _ = A.run_pipeline(prog, A.create_pipeline(names, taint_policy=policy), jobs=4)
        assert sorted(parallel.graphs) == sorted(sequential.graphs)
        for key, g in sequential.graphs.items():
            assert A.dump(parallel.graphs[key]) == A.dump(g)

    def test_report(self):
        bundle, report = compile(program(ARITHMETIC, ret='int'), ['const-fold', 'dce'])
        text = report.to_string()
        assert text.startswith('method App.main/0\n  const-fold edits=')
        assert 'total dce edits=' in text
        assert repr(bundle) == "<Bundle 1 methods, pipeline=['const-fold', 'dce']>"


def random_program(rng, regs=4, length=4):
    """
    An int program over v0 .. v(regs-1) with nested if/goto diamonds and
    loops counting v(regs) up to v(regs+1).
    """
    counter, limit, one = regs, regs + 1, regs + 2
    labels = itertools.count()
    body = [f'    const-int v{r}, {rng.randint(-50, 50)}\n' for r in range(regs)]
    body.append(f'    const-int v{one}, 1\n')

    def statement():
        op = rng.choice(['add', 'sub', 'mul', 'const-int', 'print'])
        dest, left, right = (rng.randrange(regs) for _ in range(3))
        if op == 'print':
            return f'    print v{left}\n'
        if op == 'const-int':
            return f'    const-int v{dest}, {rng.randint(-1000, 1000)}\n'
        return f'    {op} v{dest}, v{left}, v{right}\n'

    def block(depth, in_loop):
        for _ in range(rng.randint(1, length)):
            roll = rng.random()
            if depth < 3 and roll < 0.15:
                n = next(labels)
                cond = rng.choice(['eq', 'ne', 'lt'])
                left, right = rng.randrange(regs), rng.randrange(regs)
                body.append(f'    if-{cond} v{left}, v{right}, else{n}\n')
                block(depth + 1, in_loop)
                body.append(f'    goto end{n}\n')
                body.append(f'  else{n}:\n')
                block(depth + 1, in_loop)
                body.append(f'  end{n}:\n')
                body.append(statement())
            elif not in_loop and depth < 3 and roll < 0.3:
                n = next(labels)
                body.append(f'    const-int v{counter}, 0\n')
                body.append(f'    const-int v{limit}, {rng.randint(0, 4)}\n')
                body.append(f'  loop{n}:\n')
                body.append(f'    if-eq v{counter}, v{limit}, exit{n}\n')
                block(depth + 1, True)
                body.append(f'    add v{counter}, v{counter}, v{one}\n')
                body.append(f'    goto loop{n}\n')
                body.append(f'  exit{n}:\n')
                body.append(statement())
            else:
                body.append(statement())

    block(0, False)
    body.append(f'    return v{rng.randrange(regs)}\n')
    return program(''.join(body), ret='int', regs=regs + 3)


class TestRandomPrograms:
    @pytest.fixture
    def rng(self):
        return random.Random(int(os.environ.get('ARTISKIT_SEED', '1234')))

    def test_optimizations_preserve_behavior(self, rng):
        ops = set()
        for _ in range(100):
            prog = random_program(rng)
            ops.update(op for _, (op, _) in prog.entry_method().body)
            expected = A.interpret(prog)
            assert expected.error is None
            for names in (['const-fold'], ['dce'], ['const-fold', 'dce'], ['dce', 'const-fold']):
                bundle, _ = compile(prog, names)
                run = A.execute(bundle)
                assert run.output == expected.output
                assert run.exit_status == expected.exit_status
        assert {'if-eq', 'if-lt', 'goto'} <= ops
