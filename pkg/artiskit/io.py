import re

from .const import ALL_ONES, Grant, SinkMode
from .mexfmt import (
    BRANCHES,
    OPCODES,
    FieldRef,
    MethodRef,
    MexClass,
    MexField,
    MexInstr,
    MexMethod,
    MexProgram,
    MexSyntaxError,
    PermissionPolicy,
    PolicyError,
    TaintPolicy,
)

BUNDLE_MAGIC = "%% artiskit-bundle 1"

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_RE_ENTRY = re.compile(rf"entry\s+(?P<klass>{_IDENT})\.(?P<name>{_IDENT})$")
_RE_CLASS = re.compile(rf"class\s+(?P<name>{_IDENT})$")
_RE_FIELD = re.compile(
    rf"field\s+(?P<static>static\s+)?(?P<name>{_IDENT})\s*:\s*(?P<type>{_IDENT})$"
)
_RE_METHOD = re.compile(
    rf"method\s+(?P<name>{_IDENT})\s*\((?P<params>[^)]*)\)\s*->\s*(?P<ret>{_IDENT})"
    r"\s+regs\s*=\s*(?P<regs>\d+)$"
)
_RE_LABEL = re.compile(rf"(?P<label>{_IDENT}):$")
_RE_INSTR = re.compile(r"(?P<op>[a-z][a-z-]*)(?:\s+(?P<rest>.*))?$")
_RE_OPERAND = re.compile(r'\s*("(?:[^"\\]|\\.)*"|[^,\s][^,]*?)\s*(?:,|$)')
_RE_REGISTER = re.compile(r"v(\d+)$")
_RE_INT = re.compile(r"-?\d+$")
_RE_MEMBER = re.compile(rf"(?P<klass>(?:rt::)?{_IDENT})\.(?P<name>{_IDENT})$")
_RE_HEX = re.compile(r"0x[0-9a-fA-F]+$")

_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}
_UNESCAPES = {v: "\\" + k for k, v in _ESCAPES.items()}


def _strip_comment(line):
    quoted = escaped = False
    for i, char in enumerate(line):
        if escaped:
            escaped = False
        elif char == "\\" and quoted:
            escaped = True
        elif char == '"':
            quoted = not quoted
        elif char == "#" and not quoted:
            return line[:i]
    return line


def _unescape(literal, lineno, column):
    def replace(match):
        char = match.group(1)
        if char not in _ESCAPES:
            raise MexSyntaxError(f'unknown escape "\\{char}"', lineno, column)
        return _ESCAPES[char]

    return re.sub(r"\\(.)", replace, literal[1:-1])


def _escape(text):
    return '"' + "".join(_UNESCAPES.get(c, c) for c in text) + '"'


class _MethodBuilder:
    def __init__(self, klass, name, params, return_type, registers, lineno):
        self.klass = klass
        self.name = name
        self.params = params
        self.return_type = return_type
        self.registers = registers
        self.lineno = lineno
        self.body = []
        self.labels = {}
        self.pending = None
        # (label, line, column) of every branch
        self.targets = []

    def build(self):
        if self.pending is not None:
            label, lineno = self.pending
            raise MexSyntaxError(f'label "{label}" is not followed by an instruction', lineno)
        for label, lineno, column in self.targets:
            if label not in self.labels:
                raise MexSyntaxError(f'undefined label "{label}"', lineno, column)
        return MexMethod(
            self.klass,
            self.name,
            tuple(self.params),
            self.return_type,
            self.registers,
            tuple(self.body),
        )


def _parse_operand(kind, token, column, lineno, method):
    if kind in "dra":
        match = _RE_REGISTER.match(token)
        if match is None:
            raise MexSyntaxError(f'expected a register, found "{token}"', lineno, column)
        register = int(match.group(1))
        if register >= method.registers:
            raise MexSyntaxError(
                f"register v{register} out of range (regs={method.registers})", lineno, column
            )
        return register
    elif kind == "i":
        if _RE_INT.match(token) is None:
            raise MexSyntaxError(f'expected an integer, found "{token}"', lineno, column)
        value = int(token)
        if not -(1 << 63) <= value < (1 << 63):
            raise MexSyntaxError(f"integer {token} does not fit in 64 bits", lineno, column)
        return value
    elif kind == "s":
        if len(token) < 2 or not token.startswith('"') or not token.endswith('"'):
            raise MexSyntaxError(f"expected a string literal, found {token}", lineno, column)
        return _unescape(token, lineno, column)
    elif kind in "lc":
        if re.fullmatch(_IDENT, token) is None:
            what = "label" if kind == "l" else "class name"
            raise MexSyntaxError(f'expected a {what}, found "{token}"', lineno, column)
        return token
    else:
        match = _RE_MEMBER.match(token)
        if match is None:
            what = "field" if kind == "f" else "method"
            raise MexSyntaxError(f'expected a {what} reference, found "{token}"', lineno, column)
        ref = FieldRef if kind == "f" else MethodRef
        return ref(match.group("klass"), match.group("name"))


def _tokenize(rest, offset, lineno):
    """
    Split an operand list, returning (token, column) pairs.
    """
    tokens = []
    position = 0
    while position < len(rest):
        match = _RE_OPERAND.match(rest, position)
        if match is None or match.end() == position:
            raise MexSyntaxError("malformed operands", lineno, offset + position + 1)
        tokens.append((match.group(1), offset + match.start(1) + 1))
        position = match.end()
    return tokens


def _parse_instruction(text, offset, lineno, method):
    match = _RE_INSTR.match(text)
    if match is None:
        raise MexSyntaxError(f'cannot parse "{text}"', lineno, offset + 1)
    opcode = match.group("op")
    shape = OPCODES.get(opcode)
    if shape is None:
        raise MexSyntaxError(f'unknown opcode "{opcode}"', lineno, offset + 1)

    rest = match.group("rest") or ""
    tokens = _tokenize(rest, offset + (match.start("rest") if rest else 0), lineno)

    # invoke may omit its destination register
    if opcode == "invoke" and tokens and _RE_REGISTER.match(tokens[0][0]) is None:
        tokens.insert(0, None)

    variadic = shape.endswith("a")
    fixed = shape[:-1] if variadic else shape
    if len(tokens) < len(fixed) or (not variadic and len(tokens) != len(fixed)):
        raise MexSyntaxError(
            f'"{opcode}" expects {len(fixed)}{" or more" if variadic else ""} operands',
            lineno,
            offset + 1,
        )

    operands = []
    for i, token in enumerate(tokens):
        kind = fixed[i] if i < len(fixed) else "a"
        if token is None:
            operands.append(None)
        else:
            operands.append(_parse_operand(kind, token[0], token[1], lineno, method))

    if opcode in BRANCHES:
        method.targets.append((operands[-1], lineno, tokens[-1][1]))
    return MexInstr(opcode, tuple(operands))


def parse_program(text):
    """
    Parse a .mex program.

    This function raises a MexSyntaxError (a ValueError) carrying the line and
    column of the first error.

    :param text: program text.
    :return: a MexProgram.
    """
    entry = None
    classes = []
    klass = None  # (name, fields, methods)
    method = None

    def close_method():
        nonlocal method
        if method is not None:
            klass[2].append(method.build())
            method = None

    def close_class():
        nonlocal klass
        close_method()
        if klass is not None:
            classes.append(MexClass(klass[0], tuple(klass[1]), tuple(klass[2])))
            klass = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).rstrip()
        stripped = line.lstrip()
        if not stripped:
            continue
        offset = len(line) - len(stripped)

        if (match := _RE_ENTRY.match(stripped)) is not None:
            if entry is not None:
                raise MexSyntaxError("duplicate entry directive", lineno, offset + 1)
            if classes or klass is not None:
                raise MexSyntaxError("entry directive must precede classes", lineno, offset + 1)
            entry = MethodRef(match.group("klass"), match.group("name"))
        elif (match := _RE_CLASS.match(stripped)) is not None:
            close_class()
            klass = (match.group("name"), [], [])
        elif stripped.startswith(("field ", "method ")) and klass is None:
            raise MexSyntaxError("declaration outside of a class", lineno, offset + 1)
        elif (match := _RE_FIELD.match(stripped)) is not None:
            close_method()
            klass[1].append(
                MexField(
                    match.group("name"), match.group("static") is not None, match.group("type")
                )
            )
        elif (match := _RE_METHOD.match(stripped)) is not None:
            close_method()
            params = [p.strip() for p in match.group("params").split(",") if p.strip()]
            for param in params:
                if re.fullmatch(_IDENT, param) is None:
                    raise MexSyntaxError(f'invalid parameter type "{param}"', lineno, offset + 1)
            method = _MethodBuilder(
                klass[0],
                match.group("name"),
                params,
                match.group("ret"),
                int(match.group("regs")),
                lineno,
            )
        elif method is None:
            raise MexSyntaxError(f'unexpected "{stripped}"', lineno, offset + 1)
        elif (match := _RE_LABEL.match(stripped)) is not None:
            label = match.group("label")
            if label in method.labels or (method.pending and method.pending[0] == label):
                raise MexSyntaxError(f'duplicate label "{label}"', lineno, offset + 1)
            if method.pending is not None:
                raise MexSyntaxError(
                    f'label "{label}" follows label "{method.pending[0]}"', lineno, offset + 1
                )
            method.pending = (label, lineno)
        else:
            instr = _parse_instruction(stripped, offset, lineno, method)
            label = None
            if method.pending is not None:
                label = method.pending[0]
                method.labels[label] = len(method.body)
                method.pending = None
            method.body.append((label, instr))

    close_class()
    if entry is None:
        raise MexSyntaxError("missing entry directive")
    return MexProgram(classes, entry)


def _format_operand(kind, operand):
    if kind in "dra":
        return f"v{operand}"
    elif kind == "s":
        return _escape(operand)
    return str(operand)


def _format_instruction(instr):
    shape = OPCODES[instr.opcode]
    fixed = shape[:-1] if shape.endswith("a") else shape
    parts = []
    for i, operand in enumerate(instr.operands):
        if operand is None:
            continue
        parts.append(_format_operand(fixed[i] if i < len(fixed) else "a", operand))
    return instr.opcode + (" " + ", ".join(parts) if parts else "")


def to_string(program):
    """
    Export given program to .mex text. Parsing the result yields an equal
    program.

    :param program: a MexProgram.
    :return: program text.
    """
    lines = [f"entry {program.entry}"]
    for klass in program.classes:
        lines.append("")
        lines.append(f"class {klass.name}")
        for field in klass.fields:
            static = "static " if field.static else ""
            lines.append(f"  field {static}{field.name}: {field.type}")
        for method in klass.methods:
            lines.append(
                f"  method {method.name}({', '.join(method.params)}) "
                f"-> {method.return_type} regs={method.registers}"
            )
            for label, instr in method.body:
                if label is not None:
                    lines.append(f"  {label}:")
                lines.append("    " + _format_instruction(instr))
    return "\n".join(lines) + "\n"


def _policy_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        words = raw.split("#", 1)[0].split()
        if words:
            yield lineno, words


def _parse_method_name(word, lineno):
    if _RE_MEMBER.match(word) is None:
        raise PolicyError(f'"{word}" is not a method name', lineno)
    return word


def _parse_tag(word, lineno):
    if _RE_HEX.match(word) is None:
        raise PolicyError(f'malformed tag "{word}"', lineno)
    tag = int(word, 16)
    if tag > ALL_ONES:
        raise PolicyError(f'tag "{word}" does not fit in 64 bits', lineno)
    return tag


def parse_taint_policy(text):
    """
    Parse a .taint policy made of "source <method> <0xTAG>",
    "sink <method> <report|halt>" and "watch <0xMASK>" lines.

    :param text: policy text.
    :return: a TaintPolicy.
    """
    sources, sinks, watched = {}, {}, None

    for lineno, words in _policy_lines(text):
        directive, args = words[0], words[1:]
        if directive == "source" and len(args) == 2:
            method = _parse_method_name(args[0], lineno)
            tag = _parse_tag(args[1], lineno)
            if tag == 0:
                raise PolicyError("source tag must be nonzero", lineno)
            if method in sources or method in sinks:
                raise PolicyError(f"duplicate entry for {method}", lineno)
            sources[method] = tag
        elif directive == "sink" and len(args) == 2:
            method = _parse_method_name(args[0], lineno)
            try:
                mode = SinkMode(args[1])
            except ValueError:
                raise PolicyError(f'unknown sink mode "{args[1]}"', lineno) from None
            if method in sinks or method in sources:
                raise PolicyError(f"duplicate entry for {method}", lineno)
            sinks[method] = mode
        elif directive == "watch" and len(args) == 1:
            if watched is not None:
                raise PolicyError("duplicate watch directive", lineno)
            watched = _parse_tag(args[0], lineno)
        elif directive in ("source", "sink", "watch"):
            raise PolicyError(f'wrong number of arguments for "{directive}"', lineno)
        else:
            raise PolicyError(f'unknown directive "{directive}"', lineno)

    return TaintPolicy(sources, sinks, watched)


def parse_perm_policy(text):
    """
    Parse a .perm policy made of "permission <method> <PERM>" and
    "grant <PERM> <allow|deny>" lines.

    :param text: policy text.
    :return: a PermissionPolicy.
    """
    protected, grants = {}, {}

    for lineno, words in _policy_lines(text):
        directive, args = words[0], words[1:]
        if directive == "permission" and len(args) == 2:
            method = _parse_method_name(args[0], lineno)
            if method in protected:
                raise PolicyError(f"duplicate entry for {method}", lineno)
            protected[method] = args[1]
        elif directive == "grant" and len(args) == 2:
            if args[0] in grants:
                raise PolicyError(f"duplicate grant for {args[0]}", lineno)
            try:
                grants[args[0]] = Grant(args[1])
            except ValueError:
                raise PolicyError(f'unknown grant "{args[1]}"', lineno) from None
        elif directive in ("permission", "grant"):
            raise PolicyError(f'wrong number of arguments for "{directive}"', lineno)
        else:
            raise PolicyError(f'unknown directive "{directive}"', lineno)

    return PermissionPolicy(protected, grants)


def taint_policy_to_string(policy):
    lines = [f"source {m} {tag:#x}" for m, tag in policy.sources.items()]
    lines += [f"sink {m} {mode}" for m, mode in policy.sinks.items()]
    if policy.watched_mask != ALL_ONES:
        lines.append(f"watch {policy.watched_mask:#x}")
    return "".join(line + "\n" for line in lines)


def perm_policy_to_string(policy):
    lines = [f"permission {m} {p}" for m, p in policy.protected.items()]
    lines += [f"grant {p} {g}" for p, g in policy.grants.items()]
    return "".join(line + "\n" for line in lines)


class BundleError(ValueError):
    pass


def dump_bundle(bundle):
    """
    Export an instrumented bundle to text: metadata, policies, the program and
    one IR dump per method.

    :param bundle: a Bundle.
    :return: bundle text.
    """
    from .irgraph import dump

    parts = [
        BUNDLE_MAGIC,
        "%% meta",
        "pipeline " + " ".join(bundle.pipeline) if bundle.pipeline else "pipeline",
        f"contract {'yes' if bundle.contract else 'no'}",
    ]
    if bundle.taint_policy is not None:
        parts += ["%% taint", taint_policy_to_string(bundle.taint_policy).rstrip("\n")]
    if bundle.perm_policy is not None:
        parts += ["%% perm", perm_policy_to_string(bundle.perm_policy).rstrip("\n")]
    parts += ["%% program", to_string(bundle.program).rstrip("\n")]
    for graph in bundle.graphs.values():
        parts += ["%% graph", dump(graph).rstrip("\n")]
    return "\n".join(p for p in parts if p) + "\n"


def load_bundle(text):
    """
    Import a bundle written by dump_bundle.

    :param text: bundle text.
    :return: a Bundle.
    """
    from .irgraph import audit, from_dump
    from .passes import Bundle

    lines = text.splitlines()
    if not lines or lines[0].strip() != BUNDLE_MAGIC:
        raise BundleError("not an artiskit bundle")

    sections = []
    for line in lines[1:]:
        if line.startswith("%% "):
            sections.append((line[3:].strip(), []))
        elif sections:
            sections[-1][1].append(line)
        elif line.strip():
            raise BundleError(f'unexpected "{line}" before first section')

    pipeline, contract = (), False
    program = taint = perm = None
    graphs = []
    try:
        for name, body in sections:
            content = "\n".join(body) + "\n"
            if name == "meta":
                for line in body:
                    words = line.split()
                    if words and words[0] == "pipeline":
                        pipeline = tuple(words[1:])
                    elif words and words[0] == "contract":
                        contract = words[1:] == ["yes"]
            elif name == "taint":
                taint = parse_taint_policy(content)
            elif name == "perm":
                perm = parse_perm_policy(content)
            elif name == "program":
                program = parse_program(content)
            elif name == "graph":
                graphs.append(from_dump(content))
            else:
                raise BundleError(f'unknown section "{name}"')
    except BundleError:
        raise
    except ValueError as e:
        raise BundleError(f"corrupted bundle: {e}") from e

    if program is None:
        raise BundleError("bundle has no program section")
    if program.entry_method() is None:
        raise BundleError(f"unresolved entry {program.entry}")

    by_key = {}
    for g in graphs:
        if g.key in by_key:
            raise BundleError(f"duplicate graph for {g.key}")
        violations = audit(g)
        if violations:
            raise BundleError(f"graph {g.key} fails audit: {violations[0].message}")
        by_key[g.key] = g
    for method in program.methods():
        if method.key not in by_key:
            raise BundleError(f"no graph for {method.key}")

    return Bundle(
        program,
        by_key,
        pipeline=pipeline,
        contract=contract,
        taint_policy=taint,
        perm_policy=perm,
    )
