import ast
import logging
import re
from collections import defaultdict, namedtuple

import networkx as nx
from sortedcontainers import SortedDict, SortedSet

from .const import (
    INT,
    NULLARY,
    STR,
    TAG,
    TERMINATORS,
    VOID,
    Kind,
    is_object_type,
)
from .intrinsics import INTRINSICS
from .mexfmt import BRANCHES, EXITS, method_key, reads, successors

logger = logging.getLogger(__name__)


class BuildError(ValueError):
    """
    Raised when a method cannot be turned into a graph, e.g. when a register
    is read before any definition reaches it.
    """

    def __init__(self, message, register=None, pc=None):
        super().__init__(message)
        self.register = register
        self.pc = pc


class MutationError(ValueError):
    def __init__(self, message, uses=()):
        super().__init__(message)
        self.uses = list(uses)


class Reg(namedtuple("Reg", ["index"])):
    """
    A virtual register operand, only found in graphs not yet in SSA form.
    """

    __slots__ = ()

    def __str__(self):
        return f"v{self.index}"


DefUsePair = namedtuple("DefUsePair", ["definition", "use"])
Violation = namedtuple("Violation", ["block", "instruction", "message"])
Edit = namedtuple("Edit", ["op", "target", "instruction", "index", "value"])


class HInstruction:
    """
    A node of the graph IR: a typed, id-numbered instruction with ordered
    inputs and the set of (user id, input index) pairs using it.
    """

    __slots__ = ("id", "kind", "type", "inputs", "uses", "aux", "block", "dest")

    def __init__(self, id_, kind, type_, inputs=(), aux=None, dest=None):
        self.id = id_
        self.kind = kind
        self.type = type_
        self.inputs = list(inputs)
        self.uses = SortedSet()
        self.aux = dict(aux or {})
        self.block = None
        self.dest = dest

    @property
    def pc(self):
        return self.aux.get("pc")

    @property
    def is_phi(self):
        return self.kind is Kind.PHI

    @property
    def arguments(self):
        """
        Inputs of an invocation that are passed to the callee. A permission
        verdict guarding the call is an input but not an argument.
        """
        if self.aux.get("guarded"):
            return self.inputs[:-1]
        return list(self.inputs)

    def __repr__(self):
        return f"<{self.kind} #{self.id}>"


class HBasicBlock:
    __slots__ = ("id", "predecessors", "successors", "instructions")

    def __init__(self, id_):
        self.id = id_
        self.predecessors = []
        self.successors = []
        self.instructions = []

    @property
    def terminator(self):
        return self.instructions[-1] if self.instructions else None

    def __repr__(self):
        return f"<block {self.id}>"


class HGraph:
    """
    The control-flow graph of one method. Blocks and instructions are kept in
    id order.
    """

    __slots__ = (
        "klass",
        "name",
        "params",
        "return_type",
        "blocks",
        "instructions",
        "entry",
        "next_instruction_id",
        "in_ssa",
    )

    def __init__(self, klass, name, params, return_type):
        self.klass = klass
        self.name = name
        self.params = tuple(params)
        self.return_type = return_type
        self.blocks = SortedDict()
        self.instructions = SortedDict()
        self.entry = 0
        self.next_instruction_id = 0
        self.in_ssa = False

    @property
    def key(self):
        return method_key(self.klass, self.name, len(self.params))

    @property
    def method_name(self):
        return f"{self.klass}.{self.name}"

    @property
    def signature(self):
        return f"{self.klass}.{self.name}({', '.join(self.params)}) -> {self.return_type}"

    def add_block(self):
        block = HBasicBlock(self.blocks.keys()[-1] + 1 if self.blocks else 0)
        self.blocks[block.id] = block
        return block

    def add_edge(self, source, target):
        self.blocks[source].successors.append(target)
        self.blocks[target].predecessors.append(source)

    def new_instruction(self, kind, type_, inputs=(), dest=None, **aux):
        """
        Create an instruction with the next id. The instruction is not part of
        the graph until it is inserted.
        """
        instruction = HInstruction(self.next_instruction_id, kind, type_, inputs, aux, dest)
        self.next_instruction_id += 1
        return instruction

    def append(self, block, kind, type_, inputs=(), dest=None, **aux):
        instruction = self.new_instruction(kind, type_, inputs, dest, **aux)
        self._attach(instruction, block, len(self.blocks[block].instructions))
        return instruction

    def _attach(self, instruction, block, position):
        self.instructions[instruction.id] = instruction
        instruction.block = block
        self.blocks[block].instructions.insert(position, instruction.id)
        for index, value in enumerate(instruction.inputs):
            if isinstance(value, int):
                self.instructions[value].uses.add((instruction.id, index))

    def _detach(self, instruction):
        for index, value in enumerate(instruction.inputs):
            if isinstance(value, int) and value != instruction.id and value in self.instructions:
                self.instructions[value].uses.discard((instruction.id, index))
        self.blocks[instruction.block].instructions.remove(instruction.id)
        del self.instructions[instruction.id]

    def set_input(self, instruction, index, value):
        old = instruction.inputs[index]
        if isinstance(old, int) and old in self.instructions:
            self.instructions[old].uses.discard((instruction.id, index))
        instruction.inputs[index] = value
        if isinstance(value, int):
            self.instructions[value].uses.add((instruction.id, index))

    def block_instructions(self, block):
        return [self.instructions[i] for i in self.blocks[block].instructions]

    def phis(self, block):
        return [i for i in self.block_instructions(block) if i.is_phi]

    def digraph(self):
        graph = nx.DiGraph()
        graph.add_nodes_from(self.blocks.keys())
        for block in self.blocks.values():
            for succ in block.successors:
                graph.add_edge(block.id, succ)
        return graph

    def reverse_post_order(self):
        return list(reversed(list(nx.dfs_postorder_nodes(self.digraph(), self.entry))))

    def rebuild_uses(self):
        for instruction in self.instructions.values():
            instruction.uses.clear()
        for instruction in self.instructions.values():
            for index, value in enumerate(instruction.inputs):
                if isinstance(value, int) and value in self.instructions:
                    self.instructions[value].uses.add((instruction.id, index))

    def __repr__(self):
        return f"<HGraph {self.signature}>"


_CONDITIONS = {"if-eq": "eq", "if-ne": "ne", "if-lt": "lt"}
_BINARY = {"add": Kind.ADD, "sub": Kind.SUB, "mul": Kind.MUL, "concat": Kind.CONCAT}


def _callee_return_type(program, ref, arity):
    if ref.intrinsic:
        return INTRINSICS[str(ref)].returns
    return program.method(ref.klass, ref.name, arity).return_type


def _translate(g, block, pc, instr, program):
    op, operands = instr.opcode, instr.operands
    dest = operands[0] if op in ("const-int", "const-str", "move", "new", "sget") else None
    regs = [Reg(r) for r in reads(instr)]

    if op == "const-int":
        g.append(block, Kind.CONST_INT, INT, (), dest, value=operands[1], pc=pc)
    elif op == "const-str":
        g.append(block, Kind.CONST_STR, STR, (), dest, value=operands[1], pc=pc)
    elif op == "move":
        g.append(block, Kind.MOVE, None, regs, dest, pc=pc)
    elif op in _BINARY:
        type_ = STR if op == "concat" else INT
        g.append(block, _BINARY[op], type_, regs, operands[0], pc=pc)
    elif op == "div":
        check = g.append(block, Kind.DIV_ZERO_CHECK, INT, [regs[1]], pc=pc)
        g.append(block, Kind.DIV, INT, [regs[0], check.id], operands[0], pc=pc)
    elif op in _CONDITIONS:
        g.append(block, Kind.IF, VOID, regs, cond=_CONDITIONS[op], pc=pc)
    elif op == "goto":
        g.append(block, Kind.GOTO, VOID, (), pc=pc)
    elif op == "new":
        g.append(block, Kind.NEW_INSTANCE, operands[1], (), dest, pc=pc)
    elif op == "iget":
        ref = operands[2]
        check = g.append(block, Kind.NULL_CHECK, ref.klass, [Reg(operands[1])], pc=pc)
        type_ = program.field(ref).type
        g.append(block, Kind.INSTANCE_GET, type_, [check.id], operands[0], field=str(ref), pc=pc)
    elif op == "iput":
        ref = operands[2]
        check = g.append(block, Kind.NULL_CHECK, ref.klass, [Reg(operands[1])], pc=pc)
        inputs = [check.id, Reg(operands[0])]
        g.append(block, Kind.INSTANCE_SET, VOID, inputs, field=str(ref), pc=pc)
    elif op == "sget":
        ref = operands[1]
        g.append(block, Kind.STATIC_GET, program.field(ref).type, (), dest, field=str(ref), pc=pc)
    elif op == "sput":
        g.append(block, Kind.STATIC_SET, VOID, regs, field=str(operands[1]), pc=pc)
    elif op == "invoke":
        ref = operands[1]
        type_ = _callee_return_type(program, ref, len(regs))
        g.append(block, Kind.INVOKE, type_, regs, operands[0], method=str(ref), pc=pc)
    elif op == "spawn":
        g.append(block, Kind.SPAWN, INT, regs, operands[0], method=str(operands[1]), pc=pc)
    elif op == "join":
        g.append(block, Kind.JOIN, VOID, regs, pc=pc)
    elif op == "return":
        g.append(block, Kind.RETURN, VOID, regs, pc=pc)
    elif op == "return-void":
        g.append(block, Kind.RETURN_VOID, VOID, (), pc=pc)
    elif op == "print":
        g.append(block, Kind.PRINT, VOID, regs, pc=pc)
    else:
        raise BuildError(f'unknown opcode "{op}"', pc=pc)


def build_graph(method, program):
    """
    Build the control-flow graph of a verified method, not yet in SSA form.

    Blocks are split at labels and after branches and returns. Instructions
    read and write virtual registers (Reg operands) and keep their bytecode
    index in aux["pc"]. A null check precedes every object access and a
    division-by-zero check precedes every division.

    :param method: a MexMethod.
    :param program: the MexProgram it belongs to (to resolve types).
    :return: an HGraph.
    """
    body = method.body
    if not body:
        raise BuildError(f"{method.key} has an empty body")

    labels = method.labels
    targets = {labels[i.operands[-1]] for _, i in body if i.opcode in BRANCHES}
    leaders = {0} | {i for i, (label, _) in enumerate(body) if label is not None}
    for index, (_, instr) in enumerate(body):
        if (instr.opcode in BRANCHES or instr.opcode in EXITS) and index + 1 < len(body):
            leaders.add(index + 1)
    starts = sorted(leaders)
    ranges = {start: (start, end) for start, end in zip(starts, starts[1:] + [len(body)])}

    def next_ranges(start):
        last = ranges[start][1] - 1
        result = []
        for succ in successors(method, last):
            if succ == len(body):
                raise BuildError(f"{method.key} falls off its end at index {last}", pc=last)
            result.append(succ)
        return result

    # Ranges reachable from the first instruction, in bytecode order
    reachable, worklist = {0}, [0]
    while worklist:
        for succ in next_ranges(worklist.pop()):
            if succ not in reachable:
                reachable.add(succ)
                worklist.append(succ)

    g = HGraph(method.klass, method.name, method.params, method.return_type)
    entry = g.add_block()
    for index, param in enumerate(method.params):
        g.append(entry.id, Kind.PARAM, param, (), index, index=index)

    block_of = {}
    if 0 in targets:
        # Parameters must not sit in a loop header
        for start in sorted(reachable):
            block_of[start] = g.add_block().id
        g.append(entry.id, Kind.GOTO, VOID)
        g.add_edge(entry.id, block_of[0])
    else:
        block_of[0] = entry.id
        for start in sorted(reachable - {0}):
            block_of[start] = g.add_block().id

    for start in sorted(reachable):
        block = block_of[start]
        first, end = ranges[start]
        for pc in range(first, end):
            _translate(g, block, pc, body[pc][1], program)
        last = body[end - 1][1]
        if last.opcode not in BRANCHES and last.opcode not in EXITS:
            g.append(block, Kind.GOTO, VOID)
        for succ in next_ranges(start):
            g.add_edge(block, block_of[succ])

    logger.debug("built %s: %d blocks, %d instructions", g.key, len(g.blocks), len(g.instructions))
    return g


def dominators(g):
    """
    Immediate dominator of every reachable block; the entry dominates itself.

    :param g: an HGraph.
    :return: a dict mapping block ids to block ids.
    """
    idom = nx.immediate_dominators(g.digraph(), g.entry)
    idom[g.entry] = g.entry
    return dict(sorted(idom.items()))


def dominance_frontier(g):
    """
    :param g: an HGraph.
    :return: a dict mapping block ids to their dominance frontier (a set).
    """
    frontiers = nx.dominance_frontiers(g.digraph(), g.entry)
    return {block: set(frontiers.get(block, ())) for block in sorted(frontiers)}


def _dominates(idom, a, b):
    while True:
        if a == b:
            return True
        if idom[b] == b:
            return False
        b = idom[b]


def ssa_convert(g):
    """
    Turn a freshly built graph into SSA form, in place.

    Phis are placed at the iterated dominance frontiers of every register's
    definitions, registers are renamed along the dominator tree, copies are
    propagated, and phis are pruned: trivial phis (all inputs identical) are
    collapsed and phis without non-phi users removed.

    :param g: an HGraph not in SSA form.
    :return: the same graph.
    """
    if g.in_ssa:
        raise ValueError(f"{g.key} is already in SSA form")

    idom = dominators(g)
    frontiers = dominance_frontier(g)
    children = defaultdict(list)
    for block, parent in idom.items():
        if block != parent:
            children[parent].append(block)

    definitions = defaultdict(set)
    for instruction in g.instructions.values():
        if instruction.dest is not None:
            definitions[instruction.dest].add(instruction.block)

    for register in sorted(definitions):
        placed = set()
        worklist = list(definitions[register])
        while worklist:
            block = worklist.pop()
            for frontier in sorted(frontiers.get(block, ())):
                if frontier in placed:
                    continue
                placed.add(frontier)
                arity = len(g.blocks[frontier].predecessors)
                phi = g.new_instruction(Kind.PHI, None, [None] * arity, register)
                g._attach(phi, frontier, len(g.phis(frontier)))
                if frontier not in definitions[register]:
                    worklist.append(frontier)

    _rename(g, children)
    _drop_poisoned_phis(g)
    _prune_phis(g)

    for instruction in g.instructions.values():
        instruction.dest = None
    g.in_ssa = True
    g.rebuild_uses()
    logger.debug("%s in SSA form: %d phis", g.key, sum(i.is_phi for i in g.instructions.values()))
    return g


def _rename(g, children):
    stacks = defaultdict(list)
    # (block, registers pushed) frames of the dominator tree walk
    walk = [(g.entry, None)]
    while walk:
        block_id, pushed = walk.pop()
        if pushed is not None:
            for register in pushed:
                stacks[register].pop()
            continue

        pushed = []
        block = g.blocks[block_id]
        for instruction in g.block_instructions(block_id):
            if not instruction.is_phi:
                for index, value in enumerate(instruction.inputs):
                    if isinstance(value, Reg):
                        if not stacks[value.index]:
                            raise BuildError(
                                f"{value} is read at index {instruction.pc} of {g.key} "
                                "without a reaching definition",
                                register=value.index,
                                pc=instruction.pc,
                            )
                        g.set_input(instruction, index, stacks[value.index][-1])
            if instruction.kind is Kind.MOVE:
                stacks[instruction.dest].append(instruction.inputs[0])
                pushed.append(instruction.dest)
                g._detach(instruction)
            elif instruction.dest is not None:
                stacks[instruction.dest].append(instruction.id)
                pushed.append(instruction.dest)

        for succ in dict.fromkeys(block.successors):
            predecessors = g.blocks[succ].predecessors
            for phi in g.phis(succ):
                current = stacks[phi.dest][-1] if stacks[phi.dest] else None
                for index, pred in enumerate(predecessors):
                    if pred == block_id:
                        g.set_input(phi, index, current)

        walk.append((block_id, pushed))
        for child in reversed(children[block_id]):
            walk.append((child, None))


def _drop_poisoned_phis(g):
    phis = [i for i in g.instructions.values() if i.is_phi]
    poisoned = {phi.id for phi in phis if None in phi.inputs}
    changed = True
    while changed:
        changed = False
        for phi in phis:
            if phi.id not in poisoned and any(i in poisoned for i in phi.inputs):
                poisoned.add(phi.id)
                changed = True

    for phi_id in poisoned:
        phi = g.instructions[phi_id]
        for user, _ in phi.uses:
            if user not in poisoned:
                pc = g.instructions[user].pc
                raise BuildError(
                    f"v{phi.dest} is read at index {pc} of {g.key} "
                    "without a reaching definition on every path",
                    register=phi.dest,
                    pc=pc,
                )
    _remove_all(g, poisoned)


def _remove_all(g, ids):
    for instruction_id in ids:
        g.instructions[instruction_id].inputs = [
            None if i in ids else i for i in g.instructions[instruction_id].inputs
        ]
    for instruction_id in ids:
        g._detach(g.instructions[instruction_id])


def _prune_phis(g):
    changed = True
    while changed:
        changed = False
        for phi in [i for i in g.instructions.values() if i.is_phi]:
            distinct = {i for i in phi.inputs if i != phi.id}
            if len(distinct) != 1:
                continue
            (value,) = distinct
            for user, index in list(phi.uses):
                if user != phi.id:
                    g.set_input(g.instructions[user], index, value)
            g._detach(phi)
            changed = True

    live = set()
    worklist = [
        i.id
        for i in g.instructions.values()
        if i.is_phi and any(not g.instructions[u].is_phi for u, _ in i.uses)
    ]
    while worklist:
        phi = g.instructions[worklist.pop()]
        if phi.id in live:
            continue
        live.add(phi.id)
        worklist.extend(i for i in phi.inputs if g.instructions[i].is_phi)
    _remove_all(g, {i.id for i in g.instructions.values() if i.is_phi} - live)

    changed = True
    while changed:
        changed = False
        for phi in g.instructions.values():
            if phi.is_phi and phi.type is None:
                types = [g.instructions[i].type for i in phi.inputs]
                known = [t for t in types if t is not None]
                if known:
                    phi.type = known[0]
                    changed = True


class HGraphVisitor:
    """
    Base class of graph visitors. visit_instruction dispatches to a
    visit_<kind> method (e.g. visit_invoke for Kind.INVOKE), falling back to
    visit_default. Visitors never modify the graph while traversing it: they
    queue edits that are applied once the traversal is over.
    """

    def __init__(self, graph):
        self.graph = graph
        self.edits = []

    def queue(self, *edits):
        self.edits.extend(edits)

    def visit_instruction(self, instruction):
        method = getattr(self, "visit_" + instruction.kind.name.lower(), self.visit_default)
        method(instruction)

    def visit_default(self, instruction):
        pass


def visit(g, visitor, apply=True):
    """
    Call the visitor on every instruction, blocks in reverse post-order and
    instructions in block order, then apply the edits it queued.

    :param g: an HGraph.
    :param visitor: an HGraphVisitor.
    :param apply: apply queued edits (default True).
    :return: the visitor.
    """
    for block in g.reverse_post_order():
        for instruction_id in list(g.blocks[block].instructions):
            visitor.visit_instruction(g.instructions[instruction_id])
    if apply and visitor.edits:
        mutate(g, visitor.edits)
    return visitor


def _id(value):
    return value.id if isinstance(value, HInstruction) else value


def insert_before(anchor, instruction):
    return Edit("insert_before", _id(anchor), instruction, None, None)


def insert_after(anchor, instruction):
    return Edit("insert_after", _id(anchor), instruction, None, None)


def replace_input(instruction, index, definition):
    return Edit("replace_input", _id(instruction), None, index, _id(definition))


def remove(instruction):
    return Edit("remove", _id(instruction), None, None, None)


def replace_uses(g, old, new):
    """
    Edits redirecting every use of old to new.
    """
    return [replace_input(user, index, new) for user, index in g.instructions[_id(old)].uses]


def _lookup(g, instruction_id, what):
    try:
        return g.instructions[instruction_id]
    except KeyError:
        raise MutationError(f"unknown {what} {instruction_id} in {g.key}") from None


def _apply(g, edit):
    if edit.op in ("insert_before", "insert_after"):
        anchor = _lookup(g, edit.target, "anchor")
        new = edit.instruction
        if new.id in g.instructions:
            raise MutationError(f"instruction {new.id} is already part of {g.key}")
        if new.kind in TERMINATORS:
            raise MutationError(f"cannot insert terminator {new.kind}")
        block = g.blocks[anchor.block]
        position = block.instructions.index(anchor.id)
        if edit.op == "insert_after":
            if anchor.kind in TERMINATORS:
                raise MutationError(f"cannot insert after terminator {anchor.id}")
            position += 1
        phis = len(g.phis(block.id))
        if new.is_phi and position > phis:
            raise MutationError(f"phi {new.id} must precede non-phi instructions")
        if not new.is_phi and position < phis:
            raise MutationError(f"instruction {new.id} cannot precede phis")
        for value in new.inputs:
            if isinstance(value, int) and value not in g.instructions:
                raise MutationError(f"input {value} of {new.id} is not part of {g.key}")
        g._attach(new, block.id, position)
    elif edit.op == "replace_input":
        instruction = _lookup(g, edit.target, "instruction")
        _lookup(g, edit.value, "definition")
        g.set_input(instruction, edit.index, edit.value)
    elif edit.op == "remove":
        instruction = _lookup(g, edit.target, "instruction")
        uses = [u for u in instruction.uses if u[0] != instruction.id]
        if uses:
            raise MutationError(f"instruction {instruction.id} is still used by {uses}", uses)
        if instruction.kind in TERMINATORS:
            raise MutationError(f"cannot remove terminator {instruction.id}")
        g._detach(instruction)
    else:
        raise MutationError(f'unknown edit "{edit.op}"')


def mutate(g, edits):
    """
    Apply one edit or a sequence of edits, in order.

    :param g: an HGraph.
    :param edits: an Edit or an iterable of Edit.
    :return: the number of applied edits.
    """
    if isinstance(edits, Edit):
        edits = [edits]
    count = 0
    for edit in edits:
        _apply(g, edit)
        count += 1
    return count


_INPUT_TYPES = {
    Kind.ADD: (INT, INT),
    Kind.SUB: (INT, INT),
    Kind.MUL: (INT, INT),
    Kind.DIV: (INT, INT),
    Kind.CONCAT: (STR, STR),
    Kind.DIV_ZERO_CHECK: (INT,),
    Kind.JOIN: (INT,),
    Kind.TAG_PUSH: (TAG,),
}


def _verdicts(g, inputs, limit):
    return len(inputs) <= limit and all(g.instructions[i].kind is Kind.PERM_CHECK for i in inputs)


def _type_violations(g, instruction):
    def type_of(value):
        return g.instructions[value].type

    kind, inputs = instruction.kind, instruction.inputs
    types = [type_of(i) for i in inputs]

    if kind in _INPUT_TYPES:
        expected = _INPUT_TYPES[kind]
        if len(inputs) != len(expected):
            yield f"{kind} expects {len(expected)} inputs"
        elif tuple(types) != expected:
            yield f"{kind} inputs have types {types}, expected {list(expected)}"
    elif kind is Kind.PHI:
        if any(t != instruction.type for t in types):
            yield f"phi of type {instruction.type} has inputs of types {types}"
    elif kind is Kind.IF:
        if len(types) != 2 or types[0] != types[1]:
            yield f"comparison of {types}"
    elif kind is Kind.RETURN:
        if types != [g.return_type]:
            yield f"return of {types} in method returning {g.return_type}"
    elif kind is Kind.PRINT:
        if len(types) != 1 or types[0] not in (INT, STR):
            yield f"print of {types}"
    elif kind in (Kind.NULL_CHECK, Kind.INSTANCE_GET):
        if len(types) != 1 or not is_object_type(types[0]):
            yield f"{kind} expects an object input"
    elif kind is Kind.INSTANCE_SET:
        if len(types) != 2 or not is_object_type(types[0]):
            yield f"{kind} expects an object and a value"
    elif kind is Kind.TAG_FIELD_SET:
        if not types or types[-1] != TAG or len(types) > 2:
            yield f"{kind} expects an optional object and a tag"
    elif kind is Kind.TAG_FIELD_GET:
        if len(types) > 1 or (types and not is_object_type(types[0])):
            yield f"{kind} expects an optional object"
    elif kind is Kind.TAG_COMBINE:
        if types[:2] != [TAG, TAG] or not _verdicts(g, inputs[2:], 1):
            yield f"{kind} expects two tags and an optional permission verdict"
    elif kind is Kind.TAG_CHECK:
        if not types or types[0] != TAG or not _verdicts(g, inputs[1:], 1):
            yield f"{kind} expects a tag and an optional permission verdict"
    elif kind is Kind.TAG_SOURCE:
        if not _verdicts(g, inputs, 1):
            yield f"{kind} expects an optional permission verdict"
    elif kind is Kind.INVOKE and instruction.aux.get("guarded"):
        if not inputs or g.instructions[inputs[-1]].kind is not Kind.PERM_CHECK:
            yield "guarded invocation without permission verdict"


def audit(g):
    """
    Check every structural invariant of a graph: block shapes, def-use
    consistency, input types and, in SSA form, phi arity and dominance of
    every use by its definition.

    :param g: an HGraph.
    :return: a list of Violation, empty if the graph is sound.
    """
    violations = []

    def fail(message, block=None, instruction=None):
        violations.append(Violation(block, instruction, message))

    if g.entry not in g.blocks:
        fail("missing entry block")
        return violations
    if g.blocks[g.entry].predecessors:
        fail("entry block has predecessors", g.entry)

    reachable = set(nx.descendants(g.digraph(), g.entry)) | {g.entry}
    placed = {}
    for block in g.blocks.values():
        if block.id not in reachable:
            fail("unreachable block", block.id)
        for succ in block.successors:
            if succ not in g.blocks or block.successors.count(succ) != g.blocks[
                succ
            ].predecessors.count(block.id):
                fail(f"edge to {succ} is not mirrored", block.id)
        for pred in block.predecessors:
            if pred not in g.blocks or block.id not in g.blocks[pred].successors:
                fail(f"edge from {pred} is not mirrored", block.id)

        if not block.instructions:
            fail("empty block", block.id)
            continue
        seen_non_phi = False
        for position, instruction_id in enumerate(block.instructions):
            if instruction_id in placed:
                fail("instruction placed twice", block.id, instruction_id)
            placed[instruction_id] = (block.id, position)
            instruction = g.instructions.get(instruction_id)
            if instruction is None:
                fail("placed instruction missing from table", block.id, instruction_id)
                continue
            if instruction.block != block.id:
                fail("instruction has wrong block", block.id, instruction_id)
            if instruction.is_phi and seen_non_phi:
                fail("phi after non-phi", block.id, instruction_id)
            seen_non_phi |= not instruction.is_phi
            last = position == len(block.instructions) - 1
            if (instruction.kind in TERMINATORS) != last:
                fail("terminator must end its block", block.id, instruction_id)

        terminator = g.instructions.get(block.terminator)
        if terminator is not None:
            expected = {Kind.IF: 2, Kind.GOTO: 1}.get(terminator.kind, 0)
            if len(block.successors) != expected:
                fail(f"{terminator.kind} with {len(block.successors)} successors", block.id)

    idom = dominators(g) if g.in_ssa and not violations else None

    for instruction in g.instructions.values():
        iid = instruction.id
        if iid not in placed:
            fail("instruction not placed in a block", None, iid)
            continue
        if iid >= g.next_instruction_id:
            fail("id beyond instruction counter", instruction.block, iid)
        if not instruction.inputs and instruction.kind not in NULLARY:
            fail(f"{instruction.kind} without inputs", instruction.block, iid)

        well_formed = True
        for index, value in enumerate(instruction.inputs):
            if not isinstance(value, int) or value not in g.instructions:
                if g.in_ssa or not isinstance(value, Reg):
                    fail(f"input {index} is not a defined value", instruction.block, iid)
                    well_formed = False
                continue
            if (iid, index) not in g.instructions[value].uses:
                fail(f"use ({iid}, {index}) missing on {value}", instruction.block, iid)
        for user, index in instruction.uses:
            user_instruction = g.instructions.get(user)
            if (
                user_instruction is None
                or index >= len(user_instruction.inputs)
                or user_instruction.inputs[index] != iid
            ):
                fail(f"stale use ({user}, {index})", instruction.block, iid)

        if not g.in_ssa or not well_formed:
            continue
        if instruction.kind is Kind.MOVE:
            fail("move in SSA form", instruction.block, iid)
        for message in _type_violations(g, instruction):
            fail(message, instruction.block, iid)

        if idom is None:
            continue
        block, position = placed[iid]
        if instruction.is_phi:
            predecessors = g.blocks[block].predecessors
            if len(instruction.inputs) != len(predecessors):
                fail("phi arity differs from predecessor count", block, iid)
                continue
            for value, pred in zip(instruction.inputs, predecessors):
                if not _dominates(idom, placed[value][0], pred):
                    fail(f"phi input {value} does not dominate edge from {pred}", block, iid)
        else:
            for value in instruction.inputs:
                def_block, def_position = placed[value]
                if def_block == block:
                    if def_position >= position:
                        fail(f"use of {value} before its definition", block, iid)
                elif not _dominates(idom, def_block, block):
                    fail(f"definition {value} does not dominate its use", block, iid)

    return violations


def def_use_pairs(g):
    """
    :param g: an HGraph.
    :return: sorted list of DefUsePair.
    """
    return [
        DefUsePair(instruction.id, use)
        for instruction in g.instructions.values()
        for use in instruction.uses
    ]


def _format_aux(aux):
    return "{" + ", ".join(f"{key!r}: {aux[key]!r}" for key in sorted(aux)) + "}"


def _format_input(value):
    return "_" if value is None else str(value)


def dump(g):
    """
    Deterministic text form of a graph, one instruction per line as
    "id: kind type [inputs] {aux}".

    :param g: an HGraph.
    :return: the dump.
    """
    form = "ssa" if g.in_ssa else "pre"
    lines = [f"graph {g.signature} {form} next={g.next_instruction_id}"]
    for block in g.blocks.values():
        lines.append(f"block {block.id} preds={block.predecessors} succs={block.successors}")
        for instruction in g.block_instructions(block.id):
            inputs = ", ".join(_format_input(i) for i in instruction.inputs)
            type_ = "?" if instruction.type is None else instruction.type
            aux = _format_aux(instruction.aux)
            line = f"  {instruction.id}: {instruction.kind} {type_} [{inputs}] {aux}"
            if instruction.dest is not None:
                line += f" -> v{instruction.dest}"
            lines.append(line)
    return "\n".join(lines) + "\n"


_RE_HEADER = re.compile(
    r"graph (?P<klass>[\w:]+)\.(?P<name>\w+)\((?P<params>[^)]*)\) -> (?P<ret>\w+) "
    r"(?P<form>ssa|pre) next=(?P<next>\d+)$"
)
_RE_BLOCK = re.compile(
    r"block (?P<id>\d+) preds=\[(?P<preds>[^\]]*)\] succs=\[(?P<succs>[^\]]*)\]$"
)
_RE_LINE = re.compile(
    r"\s+(?P<id>\d+): (?P<kind>\w+) (?P<type>[\w?]+) \[(?P<inputs>[^\]]*)\] "
    r"(?P<aux>\{.*\})(?: -> v(?P<dest>\d+))?$"
)


def _parse_ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _parse_input(text):
    text = text.strip()
    if text == "_":
        return None
    if text.startswith("v"):
        return Reg(int(text[1:]))
    return int(text)


def from_dump(text):
    """
    Rebuild a graph from its dump.

    :param text: text produced by dump.
    :return: an HGraph.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or (header := _RE_HEADER.match(lines[0])) is None:
        raise ValueError("graph dump must start with a graph header")

    params = [p.strip() for p in header.group("params").split(",") if p.strip()]
    g = HGraph(header.group("klass"), header.group("name"), params, header.group("ret"))
    g.in_ssa = header.group("form") == "ssa"
    g.next_instruction_id = int(header.group("next"))

    block = None
    for line in lines[1:]:
        if (match := _RE_BLOCK.match(line)) is not None:
            block = HBasicBlock(int(match.group("id")))
            block.predecessors = _parse_ints(match.group("preds"))
            block.successors = _parse_ints(match.group("succs"))
            g.blocks[block.id] = block
        elif (match := _RE_LINE.match(line)) is not None and block is not None:
            type_ = match.group("type")
            dest = match.group("dest")
            inputs = [_parse_input(v) for v in match.group("inputs").split(",") if v.strip()]
            try:
                aux = ast.literal_eval(match.group("aux"))
            except (ValueError, SyntaxError):
                raise ValueError(f'malformed payload in "{line.strip()}"') from None
            instruction = HInstruction(
                int(match.group("id")),
                Kind.from_name(match.group("kind")),
                None if type_ == "?" else type_,
                inputs,
                aux,
                None if dest is None else int(dest),
            )
            instruction.block = block.id
            block.instructions.append(instruction.id)
            g.instructions[instruction.id] = instruction
        else:
            raise ValueError(f'cannot parse "{line.strip()}"')

    g.rebuild_uses()
    return g
