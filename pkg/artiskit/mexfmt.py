import logging
from collections import namedtuple

from .const import (
    ALL_ONES,
    INT,
    INTRINSIC_PREFIX,
    PRIMITIVE_TYPES,
    STR,
    VOID,
    Grant,
    SinkMode,
    is_object_type,
)
from .intrinsics import INTRINSICS

logger = logging.getLogger(__name__)


class MexSyntaxError(ValueError):
    """
    Raised when a .mex text cannot be parsed.
    """

    def __init__(self, message, line=None, column=None):
        if line is not None:
            where = f"line {line}" if column is None else f"line {line}, column {column}"
            message = f"{where}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class PolicyError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class MergeError(ValueError):
    def __init__(self, klass):
        super().__init__(f'class "{klass}" is defined by both programs')
        self.klass = klass


class MethodRef(namedtuple("MethodRef", ["klass", "name"])):
    __slots__ = ()

    @property
    def intrinsic(self):
        return self.klass.startswith(INTRINSIC_PREFIX)

    def __str__(self):
        return f"{self.klass}.{self.name}"


class FieldRef(namedtuple("FieldRef", ["klass", "name"])):
    __slots__ = ()

    def __str__(self):
        return f"{self.klass}.{self.name}"


MexField = namedtuple("MexField", ["name", "static", "type"])
MexInstr = namedtuple("MexInstr", ["opcode", "operands"])
MexClass = namedtuple("MexClass", ["name", "fields", "methods"])
Diagnostic = namedtuple("Diagnostic", ["method", "index", "message"])


def method_key(klass, name, arity):
    return f"{klass}.{name}/{arity}"


class MexMethod(
    namedtuple(
        "MexMethod", ["klass", "name", "params", "return_type", "registers", "body"]
    )
):
    """
    A method of a MEX class. Parameters arrive in registers v0 to v(n-1) and
    the body is a tuple of (label or None, MexInstr) pairs.
    """

    __slots__ = ()

    @property
    def arity(self):
        return len(self.params)

    @property
    def key(self):
        return method_key(self.klass, self.name, len(self.params))

    @property
    def signature(self):
        return f"{self.klass}.{self.name}({', '.join(self.params)}) -> {self.return_type}"

    @property
    def labels(self):
        return {label: i for i, (label, _) in enumerate(self.body) if label is not None}


# Operand kinds: r = register read, d = register write, i = integer, s = string,
# l = label, c = class, f = field, m = method, a = register arguments
OPCODES = {
    "const-int": "di",
    "const-str": "ds",
    "move": "dr",
    "add": "drr",
    "sub": "drr",
    "mul": "drr",
    "div": "drr",
    "concat": "drr",
    "if-eq": "rrl",
    "if-ne": "rrl",
    "if-lt": "rrl",
    "goto": "l",
    "new": "dc",
    "iget": "drf",
    "iput": "rrf",
    "sget": "df",
    "sput": "rf",
    "invoke": "dma",
    "spawn": "dma",
    "join": "r",
    "return": "r",
    "return-void": "",
    "print": "r",
}

BRANCHES = frozenset({"if-eq", "if-ne", "if-lt", "goto"})
EXITS = frozenset({"return", "return-void"})


def is_terminator(opcode):
    return opcode in EXITS or opcode == "goto"


def writes(instr):
    """
    Register written by given instruction, or None.
    """
    shape = OPCODES[instr.opcode]
    if shape and shape[0] == "d":
        return instr.operands[0]
    return None


def reads(instr):
    """
    Registers read by given instruction, in operand order.
    """
    shape = OPCODES[instr.opcode]
    registers = []
    for kind, operand in zip(shape, instr.operands):
        if kind == "r":
            registers.append(operand)
    if shape.endswith("a"):
        registers.extend(instr.operands[len(shape) - 1 :])
    return registers


def successors(method, index):
    """
    Indices control may reach after instruction at given index. An index
    equal to the body length means control falls off the end.
    """
    instr = method.body[index][1]
    if instr.opcode in EXITS:
        return []
    targets = []
    if instr.opcode in BRANCHES:
        targets.append(method.labels[instr.operands[-1]])
    if instr.opcode != "goto":
        targets.append(index + 1)
    return targets


class MexProgram:
    """
    A parsed MEX program: an ordered list of classes and an entry point.
    """

    __slots__ = ("classes", "entry", "_methods", "_classes")

    def __init__(self, classes, entry):
        """
        :param classes: iterable of MexClass.
        :param entry: MethodRef of the entry point.
        """
        self.classes = tuple(classes)
        self.entry = entry
        self._classes = {}
        self._methods = {}
        for klass in self.classes:
            self._classes.setdefault(klass.name, klass)
            for method in klass.methods:
                self._methods.setdefault(method.key, method)

    def klass(self, name):
        return self._classes.get(name)

    def methods(self):
        for klass in self.classes:
            yield from klass.methods

    def method(self, klass, name, arity):
        return self._methods.get(method_key(klass, name, arity))

    def method_by_key(self, key):
        return self._methods.get(key)

    def field(self, ref):
        klass = self._classes.get(ref.klass)
        if klass is None:
            return None
        for field in klass.fields:
            if field.name == ref.name:
                return field
        return None

    def entry_method(self):
        """
        Return the method designated as entry point, or None when it does not
        resolve to exactly one method.
        """
        candidates = [
            m
            for m in self.methods()
            if m.klass == self.entry.klass and m.name == self.entry.name
        ]
        return candidates[0] if len(candidates) == 1 else None

    def __eq__(self, other):
        if not isinstance(other, MexProgram):
            return NotImplemented
        return self.entry == other.entry and self.classes == other.classes

    def __repr__(self):
        return f"MexProgram(classes={[c.name for c in self.classes]}, entry={self.entry})"


class TaintPolicy:
    """
    Global sources (with their tags) and sinks (with their mode). Methods are
    named "Class.method" and match any arity.
    """

    __slots__ = ("sources", "sinks", "watched_mask")

    def __init__(self, sources=None, sinks=None, watched_mask=None):
        self.sources = dict(sources or {})
        self.sinks = {k: SinkMode(v) for k, v in (sinks or {}).items()}
        self.watched_mask = ALL_ONES if watched_mask is None else watched_mask

        for method, tag in self.sources.items():
            if tag == 0:
                raise PolicyError(f"source tag must be nonzero ({method})")
            if method in self.sinks:
                raise PolicyError(f"{method} cannot be both source and sink")

    @property
    def empty(self):
        return not self.sources and not self.sinks

    def __eq__(self, other):
        return (
            isinstance(other, TaintPolicy)
            and self.sources == other.sources
            and self.sinks == other.sinks
            and self.watched_mask == other.watched_mask
        )

    def __repr__(self):
        return (
            f"TaintPolicy(sources={self.sources!r}, sinks={self.sinks!r}, "
            f"watched_mask={self.watched_mask:#x})"
        )


class PermissionPolicy:
    """
    Protected methods with the permission they require, and grants. A
    permission without grant is denied.
    """

    __slots__ = ("protected", "grants")

    def __init__(self, protected=None, grants=None):
        self.protected = dict(protected or {})
        self.grants = {k: Grant(v) for k, v in (grants or {}).items()}

    def grant(self, permission):
        return self.grants.get(permission, Grant.DENY)

    def __eq__(self, other):
        return (
            isinstance(other, PermissionPolicy)
            and self.protected == other.protected
            and self.grants == other.grants
        )

    def __repr__(self):
        return f"PermissionPolicy(protected={self.protected!r}, grants={self.grants!r})"


def merge_programs(app, companion):
    """
    Combine an application with a companion library. Classes of the
    application come first, entry point is the application's one.

    :param app: a MexProgram.
    :param companion: a MexProgram.
    :return: a new MexProgram.
    """
    names = {klass.name for klass in app.classes}
    for klass in companion.classes:
        if klass.name in names:
            raise MergeError(klass.name)

    logger.debug(
        "merging %d companion classes into %d app classes",
        len(companion.classes),
        len(app.classes),
    )
    return MexProgram(app.classes + companion.classes, app.entry)


# Register state markers used by the verifier
_UNDEFINED = None
_CONFLICT = "<conflict>"


def _merge_types(a, b):
    if a == b:
        return a
    if a is _UNDEFINED or b is _UNDEFINED:
        return _UNDEFINED
    return _CONFLICT


class _MethodChecker:
    """
    Verify one method. Structural checks run first, register types are then
    checked with a forward dataflow over instruction indices.
    """

    def __init__(self, program, method, intrinsics):
        self.program = program
        self.method = method
        self.intrinsics = intrinsics
        self.diagnostics = []
        self._reported = set()

    def report(self, index, message):
        if (index, message) not in self._reported:
            self._reported.add((index, message))
            self.diagnostics.append(Diagnostic(self.method.key, index, message))

    def valid_type(self, type_, allow_void=False):
        if type_ == VOID:
            return allow_void
        if type_ in PRIMITIVE_TYPES:
            return True
        return self.program.klass(type_) is not None

    def callee(self, ref, arity):
        """
        Return (params, return_type) of the referenced method, or None.
        """
        if ref.intrinsic:
            intrinsic = self.intrinsics.get(str(ref))
            if intrinsic is None or len(intrinsic.params) != arity:
                return None
            return intrinsic.params, intrinsic.returns
        method = self.program.method(ref.klass, ref.name, arity)
        if method is None:
            return None
        return method.params, method.return_type

    def check(self):
        method = self.method
        # Register types are only checked in structurally sound methods
        structural = len(self.diagnostics)
        for i, param in enumerate(method.params):
            if not self.valid_type(param):
                self.report(None, f'invalid type "{param}" for parameter {i}')
        if not self.valid_type(method.return_type, allow_void=True):
            self.report(None, f'invalid return type "{method.return_type}"')
        if method.registers < len(method.params):
            self.report(None, "fewer registers than parameters")

        seen = set()
        for index, (label, instr) in enumerate(method.body):
            if label is not None:
                if label in seen:
                    self.report(index, f'duplicate label "{label}"')
                seen.add(label)
        labels = method.labels

        for index, (_, instr) in enumerate(method.body):
            self.check_structure(index, instr, labels)

        if not method.body:
            self.report(0, "missing return")
        elif len(self.diagnostics) == structural:
            self.check_types()
        return self.diagnostics

    def check_structure(self, index, instr, labels):
        shape = OPCODES.get(instr.opcode)
        if shape is None:
            self.report(index, f'unknown opcode "{instr.opcode}"')
            return
        fixed = len(shape) - 1 if shape.endswith("a") else len(shape)
        if len(instr.operands) < fixed or (
            not shape.endswith("a") and len(instr.operands) != fixed
        ):
            self.report(index, f'wrong operand count for "{instr.opcode}"')
            return

        for register in reads(instr) + [r for r in [writes(instr)] if r is not None]:
            if not 0 <= register < self.method.registers:
                self.report(index, f"register v{register} out of range")

        if instr.opcode in BRANCHES and instr.operands[-1] not in labels:
            self.report(index, f'undefined label "{instr.operands[-1]}"')
        elif instr.opcode == "new" and self.program.klass(instr.operands[1]) is None:
            self.report(index, f'unresolved class "{instr.operands[1]}"')
        elif instr.opcode in ("iget", "iput", "sget", "sput"):
            ref = instr.operands[-1]
            field = self.program.field(ref)
            if field is None:
                self.report(index, f"unresolved field {ref}")
            elif field.static != instr.opcode.startswith("s"):
                kind = "a static" if field.static else "an instance"
                self.report(index, f"{ref} is {kind} field")
        elif instr.opcode in ("invoke", "spawn"):
            ref = instr.operands[1]
            arity = len(instr.operands) - 2
            if self.callee(ref, arity) is None:
                self.report(index, f"unresolved method {ref}/{arity}")
            elif instr.opcode == "spawn" and ref.intrinsic:
                self.report(index, f"cannot spawn intrinsic {ref}")

    def expect(self, index, state, register, expected=None):
        type_ = state[register]
        if type_ is _UNDEFINED:
            self.report(index, f"undefined register v{register}")
        elif type_ is _CONFLICT:
            self.report(index, f"type conflict on v{register}")
        elif expected is not None and type_ not in expected:
            wanted = " or ".join(sorted(expected))
            self.report(index, f"expected {wanted} in v{register}, found {type_}")
        else:
            return type_
        return None

    def transfer(self, index, instr, state):
        """
        Check an instruction against the incoming register state and return
        the outgoing state.
        """
        op, operands = instr.opcode, instr.operands
        result = _UNDEFINED

        if op == "const-int":
            result = INT
        elif op == "const-str":
            result = STR
        elif op == "move":
            result = self.expect(index, state, operands[1])
        elif op in ("add", "sub", "mul", "div"):
            self.expect(index, state, operands[1], {INT})
            self.expect(index, state, operands[2], {INT})
            result = INT
        elif op == "concat":
            self.expect(index, state, operands[1], {STR})
            self.expect(index, state, operands[2], {STR})
            result = STR
        elif op in ("if-eq", "if-ne", "if-lt"):
            allowed = {INT} if op == "if-lt" else None
            a = self.expect(index, state, operands[0], allowed)
            b = self.expect(index, state, operands[1], allowed)
            if a is not None and b is not None and a != b:
                self.report(index, f"cannot compare {a} with {b}")
        elif op == "new":
            result = operands[1]
        elif op in ("iget", "iput"):
            ref = operands[2]
            field = self.program.field(ref)
            self.expect(index, state, operands[1], {ref.klass})
            if op == "iget":
                result = field.type
            else:
                self.expect(index, state, operands[0], {field.type})
        elif op in ("sget", "sput"):
            field = self.program.field(operands[1])
            if op == "sget":
                result = field.type
            else:
                self.expect(index, state, operands[0], {field.type})
        elif op in ("invoke", "spawn"):
            ref, args = operands[1], operands[2:]
            params, returns = self.callee(ref, len(args))
            for register, param in zip(args, params):
                self.expect(index, state, register, {param})
            if op == "spawn":
                result = INT
            elif operands[0] is not None:
                if returns == VOID:
                    self.report(index, f"void result of {ref} assigned to v{operands[0]}")
                else:
                    result = returns
        elif op == "join":
            self.expect(index, state, operands[0], {INT})
        elif op == "return":
            if self.method.return_type == VOID:
                self.report(index, "return with value in void method")
            else:
                self.expect(index, state, operands[0], {self.method.return_type})
        elif op == "return-void":
            if self.method.return_type != VOID:
                self.report(index, "return-void in non-void method")
        elif op == "print":
            self.expect(index, state, operands[0], {INT, STR})

        register = writes(instr)
        if register is None:
            return state
        state = list(state)
        state[register] = result if result is not _UNDEFINED else _CONFLICT
        return tuple(state)

    def check_types(self):
        method = self.method
        entry = [_UNDEFINED] * method.registers
        for i, param in enumerate(method.params):
            entry[i] = param

        states = {0: tuple(entry)}
        worklist = [0]
        while worklist:
            index = worklist.pop()
            instr = method.body[index][1]
            out = self.transfer(index, instr, states[index])
            for succ in successors(method, index):
                if succ == len(method.body):
                    self.report(index, "missing return")
                    continue
                if succ not in states:
                    states[succ] = out
                    worklist.append(succ)
                else:
                    merged = tuple(map(_merge_types, states[succ], out))
                    if merged != states[succ]:
                        states[succ] = merged
                        worklist.append(succ)


def verify_program(program, intrinsics=None):
    """
    Check a program before compilation.

    :param program: a MexProgram.
    :param intrinsics: mapping from "rt::Class.method" to intrinsic
        descriptors (default to the runtime's registry).
    :return: a list of Diagnostic, empty if the program is valid.
    """
    if intrinsics is None:
        intrinsics = INTRINSICS

    diagnostics = []
    classes = set()
    methods = set()

    for klass in program.classes:
        if klass.name in classes:
            diagnostics.append(Diagnostic(None, None, f'duplicate class "{klass.name}"'))
        classes.add(klass.name)

        fields = set()
        for field in klass.fields:
            if field.name in fields:
                diagnostics.append(
                    Diagnostic(None, None, f"duplicate field {klass.name}.{field.name}")
                )
            fields.add(field.name)
            if field.type == VOID or (
                is_object_type(field.type) and program.klass(field.type) is None
            ):
                diagnostics.append(
                    Diagnostic(
                        None, None, f'invalid type "{field.type}" for {klass.name}.{field.name}'
                    )
                )

        mains = 0
        for method in klass.methods:
            if method.key in methods:
                diagnostics.append(Diagnostic(method.key, None, "duplicate method"))
            methods.add(method.key)
            mains += method.name == "main"
        if mains > 1 and klass.name == program.entry.klass:
            diagnostics.append(
                Diagnostic(None, None, f'several "main" methods in {klass.name}')
            )

    if program.entry_method() is None:
        diagnostics.append(Diagnostic(None, None, f"unresolved entry {program.entry}"))

    for method in program.methods():
        diagnostics.extend(_MethodChecker(program, method, intrinsics).check())

    logger.debug("verified %d methods: %d diagnostics", len(methods), len(diagnostics))
    return diagnostics
