"""Attack graphs: step and defense nodes, the engine index, JSON and DOT formats."""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Protocol

import networkx as nx
import numpy as np
import numpy.typing as npt

from .distributions import CONSTANT_ZERO, Family, TtcDistribution, parse_distribution
from .exceptions import GraphSchemaError, InvalidParameters, UnsupportedFormat
from .language import StepKind

_LOGGER = logging.getLogger(__name__)

IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]
FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class StepNode:
    id: str
    kind: StepKind
    ttc: TtcDistribution = CONSTANT_ZERO
    entry: bool = False
    target: bool = False
    impact: int | None = None


@dataclass(frozen=True)
class DefenseNode:
    """A defense; ``enablement`` is the Bernoulli probability drawn per trial, if any."""

    id: str
    protects: tuple[str, ...]
    enabled: bool = False
    enablement: float | None = None


def segments(ptr: IntArray, nodes: IntArray) -> IntArray:
    """Positions of the CSR rows of ``nodes``, concatenated."""
    starts = ptr[nodes]
    counts = ptr[nodes + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    offsets = np.cumsum(counts) - counts
    return np.repeat(starts - offsets, counts) + np.arange(total, dtype=np.int64)


def _csr(keys: IntArray, values: IntArray, n: int) -> tuple[IntArray, IntArray]:
    order = np.lexsort((values, keys))
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=ptr[1:])
    return ptr, values[order]


@dataclass(frozen=True)
class Level:
    """Non-entry steps of one topological generation, with their concatenated parents."""

    or_nodes: IntArray
    or_parents: IntArray
    or_starts: IntArray
    and_nodes: IntArray
    and_parents: IntArray
    and_starts: IntArray


class GraphIndex:
    """Integer-indexed view of an attack graph used by the engine and analyses.

    Steps are numbered in id order, so comparing indices compares ids.
    """

    def __init__(self, graph: AttackGraph) -> None:
        self.ids = tuple(s.id for s in graph.steps)
        self.position = {sid: i for i, sid in enumerate(self.ids)}
        n = self.size = len(self.ids)
        self.is_and = np.array([s.kind is StepKind.AND for s in graph.steps], dtype=np.bool_)
        self.entry = np.array([s.entry for s in graph.steps], dtype=np.bool_)

        src = np.array([self.position[p] for p, _ in graph.edges], dtype=np.int64)
        dst = np.array([self.position[c] for _, c in graph.edges], dtype=np.int64)
        self.parent_ptr, self.parent_idx = _csr(dst, src, n)
        self.child_ptr, self.child_idx = _csr(src, dst, n)
        self.indegree = np.diff(self.parent_ptr)

        # deterministic locals go into the base vector, the rest are grouped by distribution
        self.base_local = np.zeros(n)
        groups: dict[TtcDistribution, list[int]] = {}
        for i, step in enumerate(graph.steps):
            if step.ttc.is_deterministic:
                self.base_local[i] = step.ttc.mean
            else:
                groups.setdefault(step.ttc, []).append(i)
        self.groups = tuple((d, np.array(idx, dtype=np.int64)) for d, idx in groups.items())

        self.defense_ids = tuple(d.id for d in graph.defenses)
        self.defense_enabled = np.array([d.enabled for d in graph.defenses], dtype=np.bool_)
        self.random_defenses = np.array(
            [k for k, d in enumerate(graph.defenses) if d.enablement is not None], dtype=np.int64
        )
        self.enablement = np.array(
            [graph.defenses[k].enablement for k in self.random_defenses], dtype=np.float64
        )
        protect_counts = [len(d.protects) for d in graph.defenses]
        self.protect_ptr = np.zeros(len(graph.defenses) + 1, dtype=np.int64)
        np.cumsum(protect_counts, out=self.protect_ptr[1:])
        self.protect_idx = np.array(
            [self.position[s] for d in graph.defenses for s in d.protects], dtype=np.int64
        )

        self.level = np.full(n, -1, dtype=np.int64)
        self.levels = self._layer()
        self.acyclic = bool((self.level >= 0).all())

    def _layer(self) -> tuple[Level, ...]:
        remaining = self.indegree.copy()
        frontier = np.flatnonzero(remaining == 0)
        generations: list[IntArray] = []
        while frontier.size:
            self.level[frontier] = len(generations)
            generations.append(frontier)
            kids = self.child_idx[segments(self.child_ptr, frontier)]
            remaining -= np.bincount(kids, minlength=self.size)
            reached = np.unique(kids)
            frontier = reached[remaining[reached] == 0]

        levels: list[Level] = []
        for nodes in generations:
            live = nodes[(~self.entry[nodes]) & (self.indegree[nodes] > 0)]
            parts: list[IntArray] = []
            for mask in (~self.is_and[live], self.is_and[live]):
                group = live[mask]
                counts = self.indegree[group]
                parts += [
                    group,
                    self.parent_idx[segments(self.parent_ptr, group)],
                    np.cumsum(counts) - counts,
                ]
            levels.append(Level(*parts))
        return tuple(levels)

    @cached_property
    def adjacency(self) -> tuple[list[int], list[int]]:
        """Child CSR as plain lists for per-node Python loops."""
        return self.child_ptr.tolist(), self.child_idx.tolist()

    def parents(self, i: int) -> IntArray:
        return self.parent_idx[self.parent_ptr[i] : self.parent_ptr[i + 1]]

    def children(self, i: int) -> IntArray:
        return self.child_idx[self.child_ptr[i] : self.child_ptr[i + 1]]

    def protected(self, k: int) -> IntArray:
        return self.protect_idx[self.protect_ptr[k] : self.protect_ptr[k + 1]]

    def blocked_mask(self, enabled: BoolArray) -> BoolArray:
        """Steps protected by at least one enabled defense."""
        mask = np.zeros(self.size, dtype=np.bool_)
        mask[self.protect_idx[segments(self.protect_ptr, np.flatnonzero(enabled))]] = True
        return mask

    def defense_vector(self, overrides: Mapping[str, bool] | None = None) -> BoolArray:
        """Fixed enablement flags with ``overrides`` applied."""
        enabled = self.defense_enabled.copy()
        for defense_id, value in (overrides or {}).items():
            enabled[self.defense_ids.index(defense_id)] = value
        return enabled


@dataclass(frozen=True)
class AttackGraph:
    """Exploit-dependency graph over instance steps.

    Steps, defenses and edges are kept sorted by id, so two graphs with the same
    content compare and serialize equal.
    """

    steps: tuple[StepNode, ...] = ()
    defenses: tuple[DefenseNode, ...] = ()
    edges: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(sorted(self.steps, key=lambda s: s.id)))
        object.__setattr__(self, "defenses", tuple(sorted(self.defenses, key=lambda d: d.id)))
        object.__setattr__(self, "edges", tuple(sorted(set(self.edges))))
        step_ids = [s.id for s in self.steps]
        if len(set(step_ids)) != len(step_ids):
            raise GraphSchemaError("duplicate step id")
        known = set(step_ids)
        defense_ids = {d.id for d in self.defenses}
        if len(defense_ids) != len(self.defenses) or defense_ids & known:
            raise GraphSchemaError("defense ids must be unique and distinct from step ids")
        for parent, child in self.edges:
            if parent not in known or child not in known:
                raise GraphSchemaError(f"edge {parent} -> {child} has an unknown endpoint")
        for defense in self.defenses:
            if not defense.protects:
                raise GraphSchemaError(f"defense {defense.id} protects no step")
            missing = [s for s in defense.protects if s not in known]
            if missing:
                raise GraphSchemaError(f"defense {defense.id} protects unknown steps {missing}")

    @cached_property
    def step_map(self) -> dict[str, StepNode]:
        return {s.id: s for s in self.steps}

    @cached_property
    def defense_map(self) -> dict[str, DefenseNode]:
        return {d.id: d for d in self.defenses}

    @property
    def entries(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.steps if s.entry)

    @property
    def targets(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.steps if s.target)

    @cached_property
    def index(self) -> GraphIndex:
        index = GraphIndex(self)
        _LOGGER.debug(
            "Indexed %d steps, %d edges, %d levels (acyclic=%s)",
            index.size,
            len(self.edges),
            len(index.levels),
            index.acyclic,
        )
        return index

    @cached_property
    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON form."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def to_networkx(self) -> nx.DiGraph:
        """Directed graph of steps and defenses; defense arcs carry ``kind="defense"``."""
        graph = nx.DiGraph()
        for step in self.steps:
            graph.add_node(step.id, type="step", kind=step.kind.value, ttc=str(step.ttc))
        for defense in self.defenses:
            graph.add_node(defense.id, type="defense", enabled=defense.enabled)
            graph.add_edges_from(((defense.id, s) for s in defense.protects), kind="defense")
        graph.add_edges_from(self.edges, kind="step")
        return graph

    def to_document(self) -> dict[str, Any]:
        return {
            "steps": [
                {
                    "id": s.id,
                    "kind": s.kind.value,
                    "ttc": str(s.ttc),
                    "entry": s.entry,
                    "target": s.target,
                    "impact": s.impact,
                }
                for s in self.steps
            ],
            "defenses": [
                {
                    "id": d.id,
                    "protects": list(d.protects),
                    "enabled": d.enabled,
                    "enablement": d.enablement,
                }
                for d in self.defenses
            ],
            "edges": [list(e) for e in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2) + "\n"

    def to_dot(self) -> str:
        lines = ["digraph attack_graph {", "  rankdir=LR;"]
        for step in self.steps:
            shape = "box" if step.kind is StepKind.AND else "ellipse"
            attrs = [f"shape={shape}", f"label={quote_dot(step.id)}"]
            if step.entry:
                attrs.append("penwidth=2")
            if step.target:
                attrs.append("peripheries=2")
            lines.append(f"  {quote_dot(step.id)} [{', '.join(attrs)}];")
        for defense in self.defenses:
            style = "filled" if defense.enabled else "solid"
            lines.append(
                f"  {quote_dot(defense.id)} [shape=triangle, style={style}, "
                f"label={quote_dot(defense.id)}];"
            )
        for parent, child in self.edges:
            lines.append(f"  {quote_dot(parent)} -> {quote_dot(child)};")
        for defense in self.defenses:
            for step_id in defense.protects:
                lines.append(
                    f"  {quote_dot(defense.id)} -> {quote_dot(step_id)} "
                    "[style=dashed, arrowhead=tee];"
                )
        lines.append("}")
        return "\n".join(lines) + "\n"


def quote_dot(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _field(raw: Mapping[str, Any], key: str, kind: type | tuple[type, ...], where: str) -> Any:
    value = raw.get(key)
    if not isinstance(value, kind):
        raise GraphSchemaError(f"{where}: field {key!r} has the wrong type")
    return value


def import_graph(doc: str | Mapping[str, Any]) -> AttackGraph:
    """Read the canonical JSON graph schema.

    Raises:
        GraphSchemaError: For malformed documents or graphs violating the invariants.
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as err:
            raise GraphSchemaError(f"invalid JSON: {err}") from err
    if not isinstance(doc, Mapping):
        raise GraphSchemaError("graph must be a JSON object")

    steps: list[StepNode] = []
    for i, raw in enumerate(_field(doc, "steps", list, "graph")):
        where = f"steps[{i}]"
        if not isinstance(raw, Mapping):
            raise GraphSchemaError(f"{where} must be an object")
        try:
            kind = StepKind(_field(raw, "kind", str, where))
            ttc = parse_distribution(_field(raw, "ttc", str, where))
        except (ValueError, InvalidParameters) as err:
            raise GraphSchemaError(f"{where}: {err}") from err
        if ttc.family is Family.BERNOULLI:
            raise GraphSchemaError(f"{where}: Bernoulli is not a step TTC")
        impact = raw.get("impact")
        if impact is not None and (isinstance(impact, bool) or not isinstance(impact, int)):
            raise GraphSchemaError(f"{where}: impact must be an integer or null")
        steps.append(
            StepNode(
                _field(raw, "id", str, where),
                kind,
                ttc,
                bool(_field(raw, "entry", bool, where)),
                bool(_field(raw, "target", bool, where)),
                impact,
            )
        )

    defenses: list[DefenseNode] = []
    for i, raw in enumerate(doc.get("defenses", [])):
        where = f"defenses[{i}]"
        if not isinstance(raw, Mapping):
            raise GraphSchemaError(f"{where} must be an object")
        enablement = raw.get("enablement")
        if enablement is not None:
            if isinstance(enablement, bool) or not isinstance(enablement, int | float):
                raise GraphSchemaError(f"{where}: enablement must be a number or null")
            if not 0.0 <= enablement <= 1.0:
                raise GraphSchemaError(f"{where}: enablement outside [0, 1]")
            enablement = float(enablement)
        protects = _field(raw, "protects", list, where)
        if not all(isinstance(p, str) for p in protects):
            raise GraphSchemaError(f"{where}: protects must list step ids")
        defenses.append(
            DefenseNode(
                _field(raw, "id", str, where),
                tuple(protects),
                bool(_field(raw, "enabled", bool, where)),
                enablement,
            )
        )

    edges: list[tuple[str, str]] = []
    for i, raw in enumerate(doc.get("edges", [])):
        if not (isinstance(raw, list) and len(raw) == 2 and all(isinstance(e, str) for e in raw)):
            raise GraphSchemaError(f"edges[{i}] must be a [parent, child] pair")
        edges.append((raw[0], raw[1]))

    return AttackGraph(tuple(steps), tuple(defenses), tuple(edges))


class Exportable(Protocol):
    def to_dot(self) -> str: ...

    def to_json(self) -> str: ...


EXPORT_FORMATS = ("dot", "json")


def export(obj: Exportable, fmt: str) -> str:
    """Render a graph or a view as ``dot`` or ``json``.

    Raises:
        UnsupportedFormat: For any other format name.
    """
    if fmt == "dot":
        return obj.to_dot()
    if fmt == "json":
        return obj.to_json()
    raise UnsupportedFormat(f"unsupported format {fmt!r} (supported: {', '.join(EXPORT_FORMATS)})")
