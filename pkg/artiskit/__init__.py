import importlib.metadata

from .api import create_pass, create_pipeline, default_pass_names
from .const import Grant, Kind, SinkKind, SinkMode, SourceKind, null
from .io import (
    BundleError,
    dump_bundle,
    load_bundle,
    parse_perm_policy,
    parse_program,
    parse_taint_policy,
    perm_policy_to_string,
    taint_policy_to_string,
    to_string,
)
from .irgraph import (
    BuildError,
    HGraph,
    HGraphVisitor,
    MutationError,
    audit,
    build_graph,
    def_use_pairs,
    dump,
    from_dump,
    mutate,
    ssa_convert,
    visit,
)
from .mexfmt import (
    MergeError,
    MexProgram,
    MexSyntaxError,
    PermissionPolicy,
    PolicyError,
    TaintPolicy,
    merge_programs,
    verify_program,
)
from .passes import Bundle, CompileError, PassPipeline, run_pipeline
from .permmod import PermissionPass, find_protected_calls, inject_checks
from .runtime import MexRuntimeError, execute, interpret, naive_oracle
from .taintmod import TaintPass, backward_slice, collect_sinks_sources, instrument

__all__ = [
    "create_pass",
    "create_pipeline",
    "default_pass_names",
    "Grant",
    "Kind",
    "SinkKind",
    "SinkMode",
    "SourceKind",
    "null",
    "BundleError",
    "dump_bundle",
    "load_bundle",
    "parse_perm_policy",
    "parse_program",
    "parse_taint_policy",
    "perm_policy_to_string",
    "taint_policy_to_string",
    "to_string",
    "BuildError",
    "HGraph",
    "HGraphVisitor",
    "MutationError",
    "audit",
    "build_graph",
    "def_use_pairs",
    "dump",
    "from_dump",
    "mutate",
    "ssa_convert",
    "visit",
    "MergeError",
    "MexProgram",
    "MexSyntaxError",
    "PermissionPolicy",
    "PolicyError",
    "TaintPolicy",
    "merge_programs",
    "verify_program",
    "Bundle",
    "CompileError",
    "PassPipeline",
    "run_pipeline",
    "PermissionPass",
    "find_protected_calls",
    "inject_checks",
    "MexRuntimeError",
    "execute",
    "interpret",
    "naive_oracle",
    "TaintPass",
    "backward_slice",
    "collect_sinks_sources",
    "instrument",
]

__version__ = importlib.metadata.version("artiskit")
