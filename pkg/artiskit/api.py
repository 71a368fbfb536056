import functools

from .passes import (
    ConstantFolding,
    DeadCodeElimination,
    PassPipeline,
    Redirect,
    StackElision,
    Tracer,
)
from .permmod import PermissionPass
from .taintmod import TaintPass

__all__ = ["create_pass", "create_pipeline", "default_pass_names"]


def partial(wrapped, *args, **kwargs):
    """
    Convenient helper that combines functools.update_wrapper and
    functools.partial. It has exactly the same signature than functools.partial.
    """
    return functools.update_wrapper(functools.partial(wrapped, *args, **kwargs), wrapped)


# Pass names and the classes implementing them
PASSES = {
    ConstantFolding.name: ConstantFolding,
    DeadCodeElimination.name: DeadCodeElimination,
    Tracer.name: Tracer,
    TaintPass.name: TaintPass,
    PermissionPass.name: PermissionPass,
    StackElision.name: StackElision,
    Redirect.name: Redirect,
}


def default_pass_names(*, taint=False, perm=False):
    """
    The recommended pipeline: constant folding and dead code elimination,
    followed by the security modules in use. Permission checks come first so
    that taint instrumentation sees guarded calls.
    """
    names = [ConstantFolding.name, DeadCodeElimination.name]
    if perm:
        names.append(PermissionPass.name)
    if taint:
        names.append(TaintPass.name)
    return names


def create_pass(name, **config):
    """
    Create a pass from its name.

    :param name: a key of PASSES.
    :param config: keyword arguments of the pass class.
    :return: a Pass instance.
    """
    try:
        klass = PASSES[name]
    except KeyError:
        raise ValueError(f'unknown pass "{name}"') from None
    return klass(**config)


def create_pipeline(
    names, *, taint_policy=None, perm_policy=None, redirects=None, require_sinks=False
):
    """
    Create a pipeline from pass names, binding each pass to its
    configuration. Ordering constraints are checked.

    :param names: sequence of pass names.
    :param taint_policy: TaintPolicy of the taint pass.
    :param perm_policy: PermissionPolicy of the perm pass.
    :param redirects: mapping of the redirect pass.
    :param require_sinks: skip taint instrumentation of programs that never
        call a global sink.
    :return: a PassPipeline.
    """
    factories = {
        TaintPass.name: partial(TaintPass, taint_policy, require_sinks=require_sinks),
        PermissionPass.name: partial(PermissionPass, perm_policy),
        Redirect.name: partial(Redirect, redirects or {}),
    }
    passes = []
    for name in names:
        if name == TaintPass.name and taint_policy is None:
            raise ValueError('pass "taint" requires a taint policy')
        if name == PermissionPass.name and perm_policy is None:
            raise ValueError('pass "perm" requires a permission policy')
        passes.append(factories[name]() if name in factories else create_pass(name))
    return PassPipeline(passes)
