"""Command-line entry point.

Exit codes: 0 on success, 1 on domain errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from collections.abc import Callable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import dotenv

from . import __version__, compiler
from .analysis import critical_path, critical_steps, evaluate_defenses, min_defense_cut
from .engine import MAX_SEED, SimulationReport, monte_carlo, risk_matrix, summarize, summary_csv
from .exceptions import IdentifierCollision, ThreatLangError
from .grammar import (
    ParseLimits,
    enumerate_language,
    load_grammar,
    parse_bottom_up,
    parse_top_down,
    sample,
    sample_many,
    string_probability,
)
from .graph import AttackGraph, export, import_graph
from .ingest import (
    generate_language,
    load_catalog,
    load_mapping,
    sanitize_identifier,
    split_by_tactic,
)
from .language import merge_languages, parse_language
from .model import parse_model
from .views import to_condition_view, to_state_enumeration

_LOGGER = logging.getLogger(__name__)

WORKERS_ENV = "THREATLANG_WORKERS"
LOG_LEVEL_ENV = "THREATLANG_LOG_LEVEL"
DEFAULT_TRIALS = 1000
DEFAULT_STATE_CAP = 10_000


class UsageError(Exception):
    """Invalid combination of command-line values."""


@dataclass(frozen=True)
class CliConfig:
    """Validated command line merged with the environment."""

    command: str
    action: str | None = None
    langs: tuple[Path, ...] = ()
    model: Path | None = None
    graph: Path | None = None
    out: Path | None = None
    trials: int = DEFAULT_TRIALS
    seed: int = 0
    horizon: float | None = None
    fmt: str = "json"
    view: str = "graph"
    cap: int = DEFAULT_STATE_CAP
    report: str | None = None
    target: str | None = None
    mode: str = "exact"
    workers: int = 1
    record: tuple[str, ...] | None = None
    defenses: Mapping[str, bool] = field(default_factory=dict)
    summary_csv: Path | None = None
    sim_report: Path | None = None
    grammar: Path | None = None
    input: str | None = None
    count: int = 1
    strategy: str = "top-down"
    max_depth: int = 100
    max_len: int = 10
    catalog: Path | None = None
    asset: str | None = None
    mapping: Path | None = None
    split_dir: Path | None = None
    log_level: int = logging.WARNING

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace, env: Mapping[str, str]) -> CliConfig:
        """Merge parsed arguments with environment defaults.

        Raises:
            UsageError: For out-of-range or malformed values.
        """
        values = {k: v for k, v in vars(ns).items() if k in cls.__dataclass_fields__}
        values = {k: v for k, v in values.items() if v is not None}
        if "langs" in values:
            values["langs"] = tuple(values["langs"])
        if "record" in values:
            values["record"] = tuple(values["record"])

        workers = values.get("workers", env.get(WORKERS_ENV, "1"))
        try:
            values["workers"] = int(workers)
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {workers!r}") from None
        if values["workers"] < 1:
            raise UsageError("workers must be >= 1")
        if values.get("trials", DEFAULT_TRIALS) < 1:
            raise UsageError("trials must be >= 1")
        if not 0 <= values.get("seed", 0) <= MAX_SEED:
            raise UsageError("seed must be a 64-bit unsigned integer")
        if values.get("cap", DEFAULT_STATE_CAP) < 1 or values.get("count", 1) < 1:
            raise UsageError("cap and count must be >= 1")

        defenses: dict[str, bool] = {}
        for item in getattr(ns, "defense", None) or ():
            name, sep, flag = item.partition("=")
            if not sep or flag.lower() not in ("true", "false"):
                raise UsageError(f"--defense expects ID=true|false, got {item!r}")
            defenses[name] = flag.lower() == "true"
        values["defenses"] = defenses

        verbose = getattr(ns, "verbose", 0)
        if verbose:
            values["log_level"] = logging.DEBUG if verbose > 1 else logging.INFO
        else:
            name = env.get(LOG_LEVEL_ENV, "WARNING").upper()
            level = logging.getLevelName(name)
            if not isinstance(level, int):
                raise UsageError(f"{LOG_LEVEL_ENV} is not a log level: {name!r}")
            values["log_level"] = level
        return cls(**values)


# -----------------------------------------------------------------------------
# Input and output
# -----------------------------------------------------------------------------


def _read(path: Path) -> str:
    return path.read_text(encoding="utf-8")


def write_atomic(path: Path, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    _LOGGER.info("Wrote %s", path)


def _emit(config: CliConfig, text: str) -> None:
    if config.out is None:
        sys.stdout.write(text)
    else:
        write_atomic(config.out, text)


def _dump(doc: Any) -> str:
    return json.dumps(doc, indent=2) + "\n"


def _require(config: CliConfig, name: str) -> Any:
    value = getattr(config, name)
    if value is None or value == ():
        raise UsageError(f"{config.command} requires --{name.replace('_', '-')}")
    return value


def _load_graph(config: CliConfig) -> AttackGraph:
    return import_graph(_read(_require(config, "graph")))


def _report_from_file(path: Path) -> SimulationReport:
    return SimulationReport.from_json(_read(path))


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------


def _compile(config: CliConfig) -> int:
    specs = [parse_language(_read(path)) for path in _require(config, "langs")]
    spec = merge_languages(specs)
    model = parse_model(_read(_require(config, "model")), spec)
    graph = compiler.compile(spec, model)
    write_atomic(_require(config, "out"), graph.to_json())
    return 0


def _simulate(config: CliConfig) -> int:
    graph = _load_graph(config)
    out = _require(config, "out")
    report = monte_carlo(
        graph, config.trials, config.seed, config.defenses, config.record, config.workers
    )
    write_atomic(out, report.to_json())
    if config.summary_csv is not None:
        write_atomic(config.summary_csv, summary_csv(report))
    if config.horizon is not None:
        rows = [summarize(report, t, config.horizon) for t in report.targets]
        sys.stdout.write(_dump([asdict(row) for row in rows]))
    return 0


def _analyze(config: CliConfig) -> int:
    graph = _load_graph(config)
    kind = _require(config, "report")
    doc: Any
    if kind == "risk":
        horizon = _require(config, "horizon")
        if config.sim_report is not None:
            report = _report_from_file(config.sim_report)
        else:
            report = monte_carlo(
                graph, config.trials, config.seed, config.defenses, config.record, config.workers
            )
        doc = risk_matrix(report, horizon).to_document()
    else:
        target = _require(config, "target")
        if kind == "critical-path":
            path = critical_path(graph, target, defenses=config.defenses)
            doc = {"target": target, "path": list(path.steps), "cost": path.cost}
        elif kind == "critical-steps":
            ranking = critical_steps(graph, target, config.trials, config.seed, config.workers)
            doc = [{"step": s, "frequency": f} for s, f in ranking]
        elif kind == "min-cut":
            cut = min_defense_cut(graph, target, config.mode)
            doc = {"target": target, "mode": config.mode, "defenses": sorted(cut)}
        else:
            rows = evaluate_defenses(
                graph,
                target,
                trials=config.trials,
                seed=config.seed,
                horizon=config.horizon,
                workers=config.workers,
            )
            doc = [{"defense": row.defense, **asdict(row.summary)} for row in rows]
    _emit(config, _dump(doc))
    return 0


def _export(config: CliConfig) -> int:
    graph = _load_graph(config)
    if config.view == "conditions":
        _emit(config, export(to_condition_view(graph), config.fmt))
    elif config.view == "states":
        _emit(config, export(to_state_enumeration(graph, config.cap), config.fmt))
    else:
        _emit(config, export(graph, config.fmt))
    return 0


def _grammar(config: CliConfig) -> int:
    g = load_grammar(_read(_require(config, "grammar")))
    doc: Any
    if config.action == "sample":
        if config.count == 1:
            drawn = sample(g, config.seed, config.max_depth)
            doc = {
                "string": drawn.string,
                "probability": drawn.probability,
                "tree": str(drawn.tree),
            }
        else:
            doc = sample_many(g, config.count, config.seed, config.max_depth)
    elif config.action == "enumerate":
        listing = enumerate_language(g, config.max_len)
        doc = {
            "truncated": listing.truncated,
            "strings": [{"string": s, "probability": p} for s, p in listing.entries],
        }
    else:
        text = _require(config, "input")
        if config.action == "prob":
            doc = {"input": text, "probability": string_probability(g, text)}
        else:
            parse = parse_top_down if config.strategy == "top-down" else parse_bottom_up
            forest = parse(g, text, ParseLimits())
            doc = {
                "input": text,
                "accepted": forest.accepted,
                "truncated": forest.truncated,
                "trees": [str(t) for t in forest.trees],
            }
    _emit(config, _dump(doc))
    return 0


def _ingest(config: CliConfig) -> int:
    catalog = load_catalog(_read(_require(config, "catalog")))
    mapping = load_mapping(_read(config.mapping)) if config.mapping else None
    text = generate_language(catalog, _require(config, "asset"), mapping)
    split_dir = config.split_dir or Path()
    files: dict[str, tuple[str, str]] = {}
    if config.split_dir is not None:
        for tactic, part in split_by_tactic(catalog).items():
            name = sanitize_identifier(tactic)
            if name in files:
                raise IdentifierCollision(
                    f"tactics {files[name][0]!r} and {tactic!r} both sanitize to {name!r}"
                )
            files[name] = (tactic, generate_language(part, name, mapping))
    write_atomic(_require(config, "out"), text)
    for name, (_, part_text) in files.items():
        write_atomic(split_dir / f"{name}.tl", part_text)
    return 0


_COMMANDS: dict[str, Callable[[CliConfig], int]] = {
    "compile": _compile,
    "simulate": _simulate,
    "analyze": _analyze,
    "export": _export,
    "grammar": _grammar,
    "ingest": _ingest,
}


# -----------------------------------------------------------------------------
# Parser
# -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="threatlang",
        description="Compile threat models, simulate time to compromise and analyze attack graphs",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="INFO with -v, DEBUG with -vv"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def simulation_flags(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--trials", type=int, help=f"Trials (default: {DEFAULT_TRIALS})")
        sub.add_argument("--seed", type=int, help="64-bit unsigned master seed (default: 0)")
        sub.add_argument("--horizon", type=float, help="Time horizon for P(TTC <= horizon)")
        sub.add_argument("--workers", type=int, help=f"Workers (default: ${WORKERS_ENV} or 1)")
        sub.add_argument(
            "--defense", action="append", metavar="ID=true|false", help="Force a defense on or off"
        )
        sub.add_argument("--record", nargs="+", metavar="STEP", help="Steps whose samples to keep")

    compile_parser = subparsers.add_parser("compile", parents=[common], help="Compile a model")
    compile_parser.add_argument(
        "--lang", dest="langs", type=Path, nargs="+", required=True, help="Language files to merge"
    )
    compile_parser.add_argument("--model", type=Path, required=True, help="System model JSON")
    compile_parser.add_argument("--out", type=Path, required=True, help="Graph JSON to write")

    simulate_parser = subparsers.add_parser("simulate", parents=[common], help="Run Monte Carlo")
    simulate_parser.add_argument("--graph", type=Path, required=True, help="Graph JSON")
    simulate_parser.add_argument("--out", type=Path, required=True, help="Report JSON to write")
    simulate_parser.add_argument("--summary-csv", type=Path, help="Also write a summary CSV")
    simulation_flags(simulate_parser)

    analyze_parser = subparsers.add_parser("analyze", parents=[common], help="Analyze a graph")
    analyze_parser.add_argument("--graph", type=Path, required=True, help="Graph JSON")
    analyze_parser.add_argument(
        "--report",
        required=True,
        choices=["critical-steps", "critical-path", "min-cut", "risk", "evaluate"],
    )
    analyze_parser.add_argument("--target", help="Target step id")
    analyze_parser.add_argument("--mode", choices=["exact", "greedy"], help="min-cut search mode")
    analyze_parser.add_argument("--out", type=Path, help="Write the result here instead of stdout")
    analyze_parser.add_argument(
        "--sim", dest="sim_report", type=Path, help="Existing report for --report risk"
    )
    simulation_flags(analyze_parser)

    export_parser = subparsers.add_parser("export", parents=[common], help="Export a graph or view")
    export_parser.add_argument("--graph", type=Path, required=True, help="Graph JSON")
    export_parser.add_argument("--format", dest="fmt", choices=["dot", "json"], required=True)
    export_parser.add_argument("--view", choices=["graph", "conditions", "states"])
    export_parser.add_argument("--cap", type=int, help=f"State cap (default: {DEFAULT_STATE_CAP})")
    export_parser.add_argument("--out", type=Path, help="Write here instead of stdout")

    grammar_parser = subparsers.add_parser("grammar", parents=[common], help="Grammar utilities")
    grammar_parser.add_argument("action", choices=["sample", "parse", "prob", "enumerate"])
    grammar_parser.add_argument("--grammar", type=Path, required=True, help="Grammar file")
    grammar_parser.add_argument("--seed", type=int, help="Sampling seed (default: 0)")
    grammar_parser.add_argument("--input", help="String to parse or score")
    grammar_parser.add_argument("--count", type=int, help="Number of samples (default: 1)")
    grammar_parser.add_argument("--strategy", choices=["top-down", "bottom-up"])
    grammar_parser.add_argument("--max-depth", type=int, help="Sampling depth bound")
    grammar_parser.add_argument("--max-len", type=int, help="Enumeration length bound")
    grammar_parser.add_argument("--out", type=Path, help="Write here instead of stdout")

    ingest_parser = subparsers.add_parser("ingest", parents=[common], help="Generate a language")
    ingest_parser.add_argument("--catalog", type=Path, required=True, help="Technique catalog")
    ingest_parser.add_argument("--asset", required=True, help="Asset name for the techniques")
    ingest_parser.add_argument("--out", type=Path, required=True, help="Language file to write")
    ingest_parser.add_argument("--mapping", type=Path, help="Kind/TTC overrides per technique")
    ingest_parser.add_argument("--split-dir", type=Path, help="Also write one file per tactic")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    """Run the command line and return its exit code."""
    dotenv.load_dotenv()
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        try:
            config = CliConfig.from_namespace(ns, os.environ)
        except UsageError as err:
            parser.error(str(err))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    logging.basicConfig(
        level=config.log_level,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return _COMMANDS[config.command](config)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"threatlang: error: {err}", file=sys.stderr)
        return 2
    except (ThreatLangError, OSError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())

