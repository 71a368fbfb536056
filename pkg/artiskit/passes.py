import logging
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor

from sortedcontainers import SortedDict

from .const import (
    ARITHMETIC,
    CONSTANTS,
    SIDE_EFFECTS,
    STR,
    VOID,
    Kind,
    divide,
    wrap64,
)
from .intrinsics import INTRINSICS
from .irgraph import (
    HGraphVisitor,
    audit,
    build_graph,
    insert_after,
    insert_before,
    mutate,
    remove,
    replace_input,
    replace_uses,
    ssa_convert,
    visit,
)
from .mexfmt import verify_program

logger = logging.getLogger(__name__)


class CompileError(ValueError):
    """
    Raised when a program cannot be compiled: it does not verify, or a pass
    left a graph violating its invariants.
    """

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


# What a pass returns for one graph: edits to apply, number of targets found
# and free-form detail lines
Outcome = namedtuple("Outcome", ["edits", "targets", "details"], defaults=[0, ()])

# What a pass did to one method
PassResult = namedtuple("PassResult", ["name", "edits", "targets", "details"])


class Bundle:
    """
    A compiled program: the program itself, one SSA graph per method, the
    pipeline that produced them and the policies they were built for.

    When contract is set, every method follows the taint stack convention:
    callers push argument tags and pop return tags, callees pop their
    parameter tags and push their return tag.
    """

    __slots__ = ("program", "graphs", "pipeline", "contract", "taint_policy", "perm_policy")

    def __init__(
        self, program, graphs, *, pipeline=(), contract=False, taint_policy=None, perm_policy=None
    ):
        self.program = program
        self.graphs = dict(graphs)
        self.pipeline = tuple(pipeline)
        self.contract = contract
        self.taint_policy = taint_policy
        self.perm_policy = perm_policy

    @property
    def entry(self):
        method = self.program.entry_method()
        return None if method is None else self.graphs.get(method.key)

    @property
    def grants(self):
        return {} if self.perm_policy is None else dict(self.perm_policy.grants)

    def __repr__(self):
        return f"<Bundle {len(self.graphs)} methods, pipeline={list(self.pipeline)}>"


class InstrumentationReport:
    """
    Per-method record of what every pass did, ordered by method key.
    """

    __slots__ = ("methods",)

    def __init__(self):
        self.methods = SortedDict()

    def add(self, method, results):
        self.methods[method] = list(results)

    def totals(self):
        """
        :return: a dict mapping pass names to (edits, targets) summed over methods.
        """
        totals = {}
        for results in self.methods.values():
            for result in results:
                edits, targets = totals.get(result.name, (0, 0))
                totals[result.name] = (edits + result.edits, targets + result.targets)
        return totals

    def details(self, name):
        """
        :return: (method, detail line) pairs emitted by given pass.
        """
        return [
            (method, line)
            for method, results in self.methods.items()
            for result in results
            if result.name == name
            for line in result.details
        ]

    def to_string(self):
        lines = []
        for method, results in self.methods.items():
            lines.append(f"method {method}")
            for result in results:
                lines.append(f"  {result.name} edits={result.edits} targets={result.targets}")
        for name, (edits, targets) in self.totals().items():
            lines.append(f"total {name} edits={edits} targets={targets}")
        return "\n".join(lines) + "\n"


class Pass:
    """
    Base class of transformation passes.

    A pass is a pure function from a graph to edits: run(g) returns an
    Outcome and never modifies the graph. Passes flagged as fixpoint are
    re-run until they find nothing to do.
    """

    name = None
    fixpoint = False
    # Passes that must (resp. must not) run before this one
    requires = frozenset()
    precedes = frozenset()
    unique = False

    def prepare(self, program):
        """
        Called once per compilation, before any graph is transformed.
        """

    def run(self, g):
        raise NotImplementedError

    def annotate(self, bundle):
        """
        Called once per compilation with the resulting bundle.
        """

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class PassPipeline:
    """
    An ordered list of passes. Ordering constraints of every pass are checked
    at construction.
    """

    __slots__ = ("passes",)

    def __init__(self, passes=()):
        self.passes = tuple(passes)
        names = self.names

        for index, pass_ in enumerate(self.passes):
            if not isinstance(pass_, Pass):
                raise TypeError(f"{pass_!r} is not a Pass instance")
            before = names[:index]
            for name in pass_.requires:
                if name not in before:
                    raise ValueError(f'pass "{pass_.name}" must run after "{name}"')
            for name in pass_.precedes:
                if name in before:
                    raise ValueError(f'pass "{pass_.name}" must run before "{name}"')
            if pass_.unique and names.count(pass_.name) > 1:
                raise ValueError(f'pass "{pass_.name}" can only appear once')

    @property
    def names(self):
        return [p.name for p in self.passes]

    def __iter__(self):
        return iter(self.passes)

    def __len__(self):
        return len(self.passes)

    def __repr__(self):
        return f"PassPipeline({self.names})"


def _check(g, what):
    violations = audit(g)
    if violations:
        raise CompileError(f"{what} left {len(violations)} violations in {g.key}", violations)


def apply_pass(pass_, g):
    """
    Run a pass on a graph, apply its edits and audit the result.

    :return: a PassResult.
    """
    edits = targets = 0
    details = []
    while True:
        outcome = pass_.run(g)
        applied = mutate(g, outcome.edits)
        edits += applied
        targets += outcome.targets
        details.extend(outcome.details)
        if not pass_.fixpoint or applied == 0:
            break
    _check(g, f'pass "{pass_.name}"')
    logger.debug("%s on %s: %d edits, %d targets", pass_.name, g.key, edits, targets)
    return PassResult(pass_.name, edits, targets, tuple(details))


def run_pipeline(program, pipeline=(), jobs=1):
    """
    Compile every method of a verified program: build its graph, convert it
    to SSA form and run the passes in order, auditing after each of them.
    Methods are independent and may be compiled in parallel; the result does
    not depend on it.

    :param program: a MexProgram.
    :param pipeline: a PassPipeline or a sequence of passes.
    :param jobs: number of worker threads.
    :return: a (Bundle, InstrumentationReport) pair.
    """
    if not isinstance(pipeline, PassPipeline):
        pipeline = PassPipeline(pipeline)

    diagnostics = verify_program(program)
    if diagnostics:
        raise CompileError(f"program has {len(diagnostics)} verification errors", diagnostics)

    for pass_ in pipeline:
        pass_.prepare(program)

    def compile_method(method):
        g = build_graph(method, program)
        ssa_convert(g)
        _check(g, "SSA conversion")
        return g, [apply_pass(pass_, g) for pass_ in pipeline]

    methods = list(program.methods())
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            compiled = list(executor.map(compile_method, methods))
    else:
        compiled = [compile_method(method) for method in methods]

    bundle = Bundle(program, {g.key: g for g, _ in compiled}, pipeline=pipeline.names)
    report = InstrumentationReport()
    for g, results in compiled:
        report.add(g.key, results)
    for pass_ in pipeline:
        pass_.annotate(bundle)

    for name, (edits, targets) in report.totals().items():
        logger.info("%s: %d edits, %d targets", name, edits, targets)
    return bundle, report


_NOT_CONSTANT = object()


class _Folder(HGraphVisitor):
    def __init__(self, graph):
        super().__init__(graph)
        self.targets = 0

    def constant(self, value, through_check=False):
        instruction = self.graph.instructions[value]
        if through_check and instruction.kind is Kind.DIV_ZERO_CHECK:
            instruction = self.graph.instructions[instruction.inputs[0]]
        if instruction.kind in CONSTANTS:
            return instruction.aux["value"]
        return _NOT_CONSTANT

    def fold(self, instruction, value):
        g = self.graph
        kind = Kind.CONST_STR if instruction.type == STR else Kind.CONST_INT
        constant = g.new_instruction(kind, instruction.type, value=value, pc=instruction.pc)
        self.queue(insert_before(instruction, constant))
        self.queue(*replace_uses(g, instruction, constant))
        self.queue(remove(instruction))
        self.targets += 1

    def visit_arithmetic(self, instruction):
        a = self.constant(instruction.inputs[0])
        b = self.constant(instruction.inputs[1], through_check=instruction.kind is Kind.DIV)
        if a is _NOT_CONSTANT or b is _NOT_CONSTANT:
            return
        op = ARITHMETIC[instruction.kind]
        if op == "add":
            self.fold(instruction, wrap64(a + b))
        elif op == "sub":
            self.fold(instruction, wrap64(a - b))
        elif op == "mul":
            self.fold(instruction, wrap64(a * b))
        elif b != 0:
            self.fold(instruction, divide(a, b))

    visit_add = visit_sub = visit_mul = visit_div = visit_arithmetic

    def visit_concat(self, instruction):
        a = self.constant(instruction.inputs[0])
        b = self.constant(instruction.inputs[1])
        if a is not _NOT_CONSTANT and b is not _NOT_CONSTANT:
            self.fold(instruction, a + b)


class ConstantFolding(Pass):
    """
    Replace arithmetic and concatenations of constants by their result. No
    algebraic identity is applied, and divisions by zero are left alone.
    """

    name = "const-fold"
    fixpoint = True

    def run(self, g):
        folder = visit(g, _Folder(g), apply=False)
        return Outcome(folder.edits, folder.targets)


class DeadCodeElimination(Pass):
    """
    Remove instructions whose value is never used and that have no side
    effect. Instrumentation instructions count as side effects.
    """

    name = "dce"
    fixpoint = True

    def run(self, g):
        live = set()
        worklist = [i.id for i in g.instructions.values() if i.kind in SIDE_EFFECTS]
        while worklist:
            instruction_id = worklist.pop()
            if instruction_id not in live:
                live.add(instruction_id)
                worklist.extend(g.instructions[instruction_id].inputs)

        order = [
            instruction_id
            for block in g.reverse_post_order()
            for instruction_id in g.blocks[block].instructions
            if instruction_id not in live
        ]
        dead = set(order)

        edits = []
        # Dead phis may form cycles, point them at themselves first
        for instruction_id in order:
            instruction = g.instructions[instruction_id]
            if instruction.is_phi:
                for index, value in enumerate(instruction.inputs):
                    if value in dead and value != instruction_id:
                        edits.append(replace_input(instruction, index, instruction))
        edits.extend(remove(instruction_id) for instruction_id in reversed(order))
        return Outcome(edits, len(order))


class Tracer(Pass):
    """
    Insert a trace event at the entry of every method, right after its
    parameters.
    """

    name = "tracer"

    def run(self, g):
        entry = g.block_instructions(g.entry)
        trace = g.new_instruction(Kind.TRACE, VOID, method=g.method_name)
        params = [i for i in entry if i.kind is Kind.PARAM]
        if params:
            edit = insert_after(params[-1], trace)
        else:
            edit = insert_before(entry[0], trace)
        return Outcome([edit], 1)


_STACK_KINDS = frozenset({Kind.TAG_PUSH, Kind.TAG_POP, Kind.INVOKE, Kind.SPAWN})


class StackElision(Pass):
    """
    Remove taint stack pops whose tag is only pushed back, with no stack
    operation in between: the tag can stay where it is.
    """

    name = "stack-elide"
    fixpoint = True
    requires = frozenset({"taint"})

    def run(self, g):
        edits = []
        for block in g.blocks.values():
            ids = block.instructions
            for position, instruction_id in enumerate(ids):
                pop = g.instructions[instruction_id]
                if pop.kind is not Kind.TAG_POP or len(pop.uses) != 1:
                    continue
                user, _ = pop.uses[0]
                push = g.instructions[user]
                if push.kind is not Kind.TAG_PUSH or push.block != block.id:
                    continue
                end = ids.index(push.id)
                between = ids[position + 1 : end]
                if end > position and not any(
                    g.instructions[i].kind in _STACK_KINDS for i in between
                ):
                    edits += [remove(push), remove(pop)]
        return Outcome(edits, len(edits) // 2)


class Redirect(Pass):
    """
    Rewrite invocations of a method into invocations of another one with the
    same signature, e.g. to route a runtime method through a companion
    library merged into the program.

    :param redirects: mapping from "Class.method" to "Class.method".
    """

    name = "redirect"
    precedes = frozenset({"taint", "perm"})

    def __init__(self, redirects):
        self.redirects = dict(redirects)

    def prepare(self, program):
        def signature(name, arity):
            if name.startswith("rt::"):
                intrinsic = INTRINSICS.get(name)
                if intrinsic is not None and len(intrinsic.params) == arity:
                    return tuple(intrinsic.params), intrinsic.returns
                return None
            klass, _, method = name.rpartition(".")
            found = program.method(klass, method, arity)
            return None if found is None else (found.params, found.return_type)

        for method in program.methods():
            for _, instr in method.body:
                if instr.opcode != "invoke" or str(instr.operands[1]) not in self.redirects:
                    continue
                source = str(instr.operands[1])
                target = self.redirects[source]
                arity = len(instr.operands) - 2
                if signature(target, arity) is None:
                    raise CompileError(f"redirect target {target}/{arity} does not exist")
                if signature(target, arity) != signature(source, arity):
                    raise CompileError(f"{target} and {source} have different signatures")

    def run(self, g):
        edits = []
        for instruction in list(g.instructions.values()):
            if instruction.kind is not Kind.INVOKE:
                continue
            target = self.redirects.get(instruction.aux["method"])
            if target is None:
                continue
            aux = dict(instruction.aux, method=target)
            new = g.new_instruction(Kind.INVOKE, instruction.type, instruction.inputs, **aux)
            edits.append(insert_before(instruction, new))
            edits.extend(replace_uses(g, instruction, new))
            edits.append(remove(instruction))
        return Outcome(edits, sum(e.op == "remove" for e in edits))

