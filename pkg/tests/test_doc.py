import doctest
import re
import shlex
from pathlib import Path

import pytest

import artiskit as A
from artiskit.cli import create_parser

README = Path(__file__).resolve().parent.parent / 'README.md'


class TestReadme:
    def test_examples(self):
        failure = None
        try:
            doctest.testfile(
                str(README),
                module_relative=False,
                raise_on_error=True,
                globs={'A': A},
                optionflags=doctest.ELLIPSIS,
            )
        except doctest.DocTestFailure as e:
            failure = e.example.source.strip(), e.example.want.strip(), e.got.strip()
        except doctest.UnexpectedException as e:
            failure = e.example.source.strip(), e.example.want.strip(), repr(e.exc_info[1])

        # Outside of the except blocks, so pytest shows a short report
        if failure:
            source, want, got = failure
            pytest.fail(f'README example {source!r}: expected {want!r}, got {got!r}')

    def test_commands(self):
        commands = re.findall(r'^\$ artiskit (.+)$', README.read_text(), re.MULTILINE)
        names = [c.split()[0] for c in commands]
        assert names == ['instrument', 'run', 'verify', 'corpus', 'bench']
        parser = create_parser()
        for command in commands:
            args = parser.parse_args(shlex.split(command))
            assert args.command == command.split()[0]

    def test_exported_names(self):
        for name in A.__all__:
            assert getattr(A, name) is not None, name
