import pytest

import artiskit as A
from artiskit.mexfmt import FieldRef, MethodRef

SOURCE = '''
entry App.main

# Boxes hold one value
class Box
  field data: str
  field static count: int

class App
  method main() -> int regs=3
    new v0, Box
    const-str v1, "a, \\"quoted\\" # not a comment"
    iput v1, v0, Box.data
    iget v2, v0, Box.data
    invoke rt::Log.d, v2   # write it
    invoke v2, App.answer
  done:
    return v2

  method answer() -> int regs=1
    const-int v0, -42
    return v0
'''


class TestParseProgram:
    def test_structure(self):
        program = A.parse_program(SOURCE)
        assert program.entry == MethodRef('App', 'main')
        assert [c.name for c in program.classes] == ['Box', 'App']

        box = program.klass('Box')
        assert [(f.name, f.static, f.type) for f in box.fields] == [
            ('data', False, 'str'),
            ('count', True, 'int'),
        ]
        assert box.methods == ()

    def test_instructions(self):
        main = A.parse_program(SOURCE).entry_method()
        assert main.registers == 3
        assert main.return_type == 'int'
        assert main.labels == {'done': 6}

        ops = [instr for _, instr in main.body]
        assert ops[0].operands == (0, 'Box')
        assert ops[1].operands == (1, 'a, "quoted" # not a comment')
        assert ops[2].operands == (1, 0, FieldRef('Box', 'data'))
        assert ops[4].operands == (None, MethodRef('rt::Log', 'd'), 2)
        assert ops[5].operands == (2, MethodRef('App', 'answer'))

    def test_negative_integers(self):
        answer = A.parse_program(SOURCE).method('App', 'answer', 0)
        assert answer.body[0][1].operands == (0, -42)

    def test_parsed_program_verifies(self):
        assert A.verify_program(A.parse_program(SOURCE)) == []

    def test_to_string(self):
        program = A.parse_program(SOURCE)
        text = A.to_string(program)
        assert 'entry App.main' in text
        assert '    invoke rt::Log.d, v2' in text
        assert A.parse_program(text) == program


class TestSyntaxErrors:
    @pytest.mark.parametrize(
        'text, line',
        [
            ('class A\n  method main() -> void regs=1\n    return-void\n', None),
            ('entry A.main\nentry A.main\n', 2),
            ('entry A.main\nclass A\n  method main() -> void regs=1\n    print v1\n', 4),
            ('entry A.main\nclass A\n  method main() -> void regs=1\n    jump v0\n', 4),
            ('entry A.main\nclass A\n  method main() -> void regs=1\n    goto nowhere\n', 4),
            ('entry A.main\nclass A\n  method main() -> void regs=1\n  end:\n', 4),
            ('entry A.main\nfield x: int\n', 2),
            ('entry A.main\nclass A\n  method main() -> void regs=1\n    const-int v0, x\n', 4),
            (
                'entry A.main\nclass A\n  method main() -> void regs=1\n'
                '    const-int v0, 99999999999999999999\n',
                4,
            ),
        ],
    )
    def test_errors(self, text, line):
        with pytest.raises(A.MexSyntaxError) as e:
            A.parse_program(text)
        assert e.value.line == line

    def test_message_has_position(self):
        with pytest.raises(A.MexSyntaxError) as e:
            A.parse_program('entry A.main\nclass A\n  method main() -> void regs=1\n    print v3\n')
        assert str(e.value).startswith('line 4, column')
        assert 'v3 out of range' in str(e.value)


class TestTaintPolicy:
    def test_parse(self):
        policy = A.parse_taint_policy(
            '# sources\n'
            'source rt::Telephony.getDeviceId 0x1\n'
            'source App.secret 0x10  # an application source\n'
            'sink rt::Log.d report\n'
            'sink rt::Net.send halt\n'
            'watch 0x11\n'
        )
        assert policy.sources == {'rt::Telephony.getDeviceId': 0x1, 'App.secret': 0x10}
        assert [str(m) for m in policy.sinks.values()] == ['report', 'halt']
        assert policy.watched_mask == 0x11

    def test_to_string(self):
        text = 'source rt::Location.getLatitude 0x2\nsink rt::Log.d halt\nwatch 0x2\n'
        policy = A.parse_taint_policy(text)
        assert A.taint_policy_to_string(policy) == text
        assert A.parse_taint_policy(A.taint_policy_to_string(policy)) == policy

    @pytest.mark.parametrize(
        'text',
        [
            'source rt::Log.d 0x0',
            'source rt::Log.d 12',
            'source rt::Log.d 0x10000000000000000',
            'sink rt::Log.d maybe',
            'sink rt::Log.d',
            'source rt::Log.d 0x1\nsink rt::Log.d report',
            'sink rt::Log.d report\nsink rt::Log.d halt',
            'watch 0x1\nwatch 0x2',
            'sink Log report',
            'taint rt::Log.d',
        ],
    )
    def test_errors(self, text):
        with pytest.raises(A.PolicyError):
            A.parse_taint_policy(text)

    def test_error_line(self):
        with pytest.raises(A.PolicyError) as e:
            A.parse_taint_policy('sink rt::Log.d report\n\nsink rt::Net.send never\n')
        assert e.value.line == 3


class TestPermissionPolicy:
    def test_parse(self):
        policy = A.parse_perm_policy(
            'permission rt::Camera.open CAMERA\n'
            'permission rt::Wifi.setEnabled WIFI\n'
            'grant CAMERA allow\n'
            'grant WIFI deny\n'
        )
        assert policy.protected == {'rt::Camera.open': 'CAMERA', 'rt::Wifi.setEnabled': 'WIFI'}
        assert policy.grants == {'CAMERA': A.Grant.ALLOW, 'WIFI': A.Grant.DENY}

    def test_to_string(self):
        text = 'permission rt::Camera.open CAMERA\ngrant CAMERA allow\n'
        assert A.perm_policy_to_string(A.parse_perm_policy(text)) == text

    @pytest.mark.parametrize(
        'text',
        [
            'grant CAMERA maybe',
            'permission rt::Camera.open',
            'permission rt::Camera.open A\npermission rt::Camera.open B',
            'grant A allow\ngrant A deny',
            'allow CAMERA',
        ],
    )
    def test_errors(self, text):
        with pytest.raises(A.PolicyError):
            A.parse_perm_policy(text)


class TestBundles:
    def compile(self):
        program = A.parse_program(SOURCE)
        policy = A.parse_taint_policy('source App.answer 0x8\nsink rt::Log.d report\n')
        perm = A.parse_perm_policy('permission rt::Log.d LOGGING\ngrant LOGGING allow\n')
        pipeline = A.create_pipeline(
            A.default_pass_names(taint=True, perm=True), taint_policy=policy, perm_policy=perm
        )
        bundle, _ = A.run_pipeline(program, pipeline)
        return bundle

    def test_dump_and_load(self):
        bundle = self.compile()
        loaded = A.load_bundle(A.dump_bundle(bundle))

        assert loaded.program == bundle.program
        assert loaded.pipeline == ('const-fold', 'dce', 'perm', 'taint')
        assert loaded.contract
        assert loaded.taint_policy == bundle.taint_policy
        assert loaded.perm_policy == bundle.perm_policy
        assert sorted(loaded.graphs) == sorted(bundle.graphs)
        for key, g in bundle.graphs.items():
            assert A.dump(loaded.graphs[key]) == A.dump(g)
            assert A.audit(loaded.graphs[key]) == []

    def test_loaded_bundle_runs(self):
        bundle = self.compile()
        loaded = A.load_bundle(A.dump_bundle(bundle))
        assert A.execute(loaded).lines() == A.execute(bundle).lines()

    def test_missing_graph(self):
        bundle = self.compile()
        del bundle.graphs['App.main/0']
        with pytest.raises(A.BundleError, match='no graph for App.main/0'):
            A.load_bundle(A.dump_bundle(bundle))

    def test_duplicate_graph(self):
        text = A.dump_bundle(self.compile())
        graph = text[text.index('%% graph\n'):]
        with pytest.raises(A.BundleError, match='duplicate graph'):
            A.load_bundle(text + graph)

    def test_graph_failing_audit(self):
        text = A.dump_bundle(self.compile()).replace('HConstInt int', 'HConstInt str')
        with pytest.raises(A.BundleError, match='fails audit'):
            A.load_bundle(text)

    def test_unresolved_entry(self):
        text = A.dump_bundle(self.compile()).replace('entry App.main', 'entry App.start')
        with pytest.raises(A.BundleError, match='unresolved entry'):
            A.load_bundle(text)

    @pytest.mark.parametrize(
        'text',
        [
            '',
            'not a bundle\n',
            '%% artiskit-bundle 1\n%% meta\npipeline\n',
            '%% artiskit-bundle 1\n%% unknown\n',
            '%% artiskit-bundle 1\n%% program\nentry\n',
        ],
    )
    def test_errors(self, text):
        with pytest.raises(A.BundleError):
            A.load_bundle(text)
