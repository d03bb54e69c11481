"""Threat-modeling language compiler, attack-graph analysis and time-to-compromise simulation."""

from .analysis import (
    CriticalPath,
    DefenseEvaluation,
    critical_path,
    critical_steps,
    evaluate_defenses,
    min_defense_cut,
    reachable_steps,
)
from .compiler import compile
from .distributions import Family, TtcDistribution, parse_distribution, sample_local
from .engine import (
    RiskMatrix,
    SimulationReport,
    StepSummary,
    monte_carlo,
    propagate,
    risk_matrix,
    summarize,
    summary_csv,
)
from .exceptions import (
    ConflictError,
    DslSyntaxError,
    GrammarError,
    GraphError,
    IngestError,
    LanguageError,
    ModelError,
    ResolutionError,
    SimulationError,
    ThreatLangError,
)
from .grammar import (
    Grammar,
    ParseForest,
    ParseTree,
    Rule,
    classify,
    enumerate_language,
    load_grammar,
    parse_bottom_up,
    parse_top_down,
    render_grammar,
    sample,
    string_probability,
)
from .graph import AttackGraph, DefenseNode, StepNode, export, import_graph
from .ingest import TechniqueCatalog, generate_language, load_catalog, split_by_tactic
from .language import LanguageSpec, StepKind, merge_languages, parse_language, render_language
from .model import SystemModel, parse_model
from .views import ConditionGraph, StateGraph, to_condition_view, to_state_enumeration

__version__ = "0.1.0"
__all__ = [
    "AttackGraph",
    "ConditionGraph",
    "ConflictError",
    "CriticalPath",
    "DefenseEvaluation",
    "DefenseNode",
    "DslSyntaxError",
    "Family",
    "Grammar",
    "GrammarError",
    "GraphError",
    "IngestError",
    "LanguageError",
    "LanguageSpec",
    "ModelError",
    "ParseForest",
    "ParseTree",
    "ResolutionError",
    "RiskMatrix",
    "Rule",
    "SimulationError",
    "SimulationReport",
    "StateGraph",
    "StepKind",
    "StepNode",
    "StepSummary",
    "SystemModel",
    "TechniqueCatalog",
    "ThreatLangError",
    "TtcDistribution",
    "classify",
    "compile",
    "critical_path",
    "critical_steps",
    "enumerate_language",
    "evaluate_defenses",
    "export",
    "generate_language",
    "import_graph",
    "load_catalog",
    "load_grammar",
    "merge_languages",
    "min_defense_cut",
    "monte_carlo",
    "parse_bottom_up",
    "parse_distribution",
    "parse_language",
    "parse_model",
    "parse_top_down",
    "propagate",
    "reachable_steps",
    "render_grammar",
    "render_language",
    "risk_matrix",
    "sample",
    "sample_local",
    "split_by_tactic",
    "string_probability",
    "summarize",
    "summary_csv",
    "to_condition_view",
    "to_state_enumeration",
]
