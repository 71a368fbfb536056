"""
Inline reference monitor: every invocation of a protected method is guarded
by a permission check whose verdict decides, at run time, whether the call
happens.
"""

import logging
from collections import namedtuple

from .const import INT, Kind
from .irgraph import insert_before, remove, replace_uses
from .passes import Outcome, Pass

logger = logging.getLogger(__name__)

ProtectedCallSite = namedtuple(
    "ProtectedCallSite", ["method", "instruction", "callee", "permission"]
)


def find_protected_calls(g, policy):
    """
    Invocations of protected methods that are not guarded yet.

    :param g: an HGraph in SSA form.
    :param policy: a PermissionPolicy.
    :return: a list of ProtectedCallSite, in block reverse post-order.
    """
    sites = []
    for block in g.reverse_post_order():
        for instruction in g.block_instructions(block):
            if instruction.kind is not Kind.INVOKE or instruction.aux.get("guarded"):
                continue
            permission = policy.protected.get(instruction.aux["method"])
            if permission is not None:
                sites.append(
                    ProtectedCallSite(g.key, instruction.id, instruction.aux["method"], permission)
                )
    return sites


def inject_checks(g, sites):
    """
    Edits guarding each call site: a permission check right before the call,
    whose verdict becomes the last input of a guarded copy of the invocation.

    :param g: an HGraph in SSA form.
    :param sites: ProtectedCallSite instances of this graph.
    :return: a list of edits.
    """
    edits = []
    for site in sites:
        if site.method != g.key:
            raise ValueError(f"call site of {site.method} cannot be guarded in {g.key}")
        invoke = g.instructions[site.instruction]
        check = g.new_instruction(
            Kind.PERM_CHECK,
            INT,
            permission=site.permission,
            callee=site.callee,
            pc=invoke.pc,
        )
        guarded = g.new_instruction(
            Kind.INVOKE,
            invoke.type,
            invoke.inputs + [check.id],
            **dict(invoke.aux, guarded=True),
        )
        edits += [insert_before(invoke, check), insert_before(invoke, guarded)]
        edits += replace_uses(g, invoke, guarded)
        edits.append(remove(invoke))
    return edits


class PermissionPass(Pass):
    """
    Guard every invocation of a method the policy protects.

    :param policy: a PermissionPolicy.
    """

    name = "perm"
    unique = True
    precedes = frozenset({"taint"})

    def __init__(self, policy):
        self.policy = policy

    def run(self, g):
        sites = find_protected_calls(g, self.policy)
        details = tuple(
            f"guard {g.key}@{g.instructions[s.instruction].pc} {s.permission} {s.callee}"
            for s in sites
        )
        return Outcome(inject_checks(g, sites), len(sites), details)

    def annotate(self, bundle):
        bundle.perm_policy = self.policy
