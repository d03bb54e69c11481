"""Derived views of an attack graph: state enumeration and attack-result conditions."""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass

import networkx as nx

from .exceptions import GraphError, StateSpaceExceeded
from .graph import AttackGraph, quote_dot
from .language import StepKind

_LOGGER = logging.getLogger(__name__)

NO_SOURCE = "-"


def split_step_id(step_id: str) -> tuple[str, str]:
    """``instance.step`` into its instance and step name."""
    instance, _, name = step_id.rpartition(".")
    return instance, name


@dataclass(frozen=True)
class StateVertex:
    """Triplet (source instance, destination instance, step) plus the reached steps."""

    source: str | None
    destination: str | None
    step: str | None
    reached: frozenset[str] = frozenset()

    @property
    def is_root(self) -> bool:
        return self.step is None

    def label(self) -> str:
        if self.is_root:
            return "root"
        return f"({self.source or NO_SOURCE}, {self.destination}, {self.step})"

    def key(self) -> str:
        return f"{self.label()} {{{', '.join(sorted(self.reached))}}}"


@dataclass(frozen=True)
class StateGraph:
    graph: nx.DiGraph
    root: StateVertex

    @property
    def vertices(self) -> list[StateVertex]:
        return sorted(self.graph.nodes, key=lambda v: (len(v.reached), v.key()))

    @property
    def arcs(self) -> list[tuple[StateVertex, StateVertex]]:
        return sorted(self.graph.edges, key=lambda e: (e[0].key(), e[1].key()))

    def to_json(self) -> str:
        ids = {v: i for i, v in enumerate(self.vertices)}
        doc = {
            "vertices": [
                {
                    "id": ids[v],
                    "source": v.source,
                    "destination": v.destination,
                    "step": v.step,
                    "reached": sorted(v.reached),
                }
                for v in self.vertices
            ],
            "arcs": [[ids[a], ids[b]] for a, b in self.arcs],
        }
        return json.dumps(doc, indent=2) + "\n"

    def to_dot(self) -> str:
        ids = {v: i for i, v in enumerate(self.vertices)}
        lines = ["digraph states {"]
        for vertex, i in ids.items():
            lines.append(f"  s{i} [label={quote_dot(vertex.label())}];")
        for a, b in self.arcs:
            lines.append(f"  s{ids[a]} -> s{ids[b]};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def to_state_enumeration(g: AttackGraph, cap: int) -> StateGraph:
    """Breadth-first enumeration of attacker knowledge states.

    Every vertex applies one enabled step to its predecessor's reached set; the
    source of a triplet is the instance of the smallest reached parent, or none
    for entry steps. Defenses are taken at their fixed flags.

    Raises:
        StateSpaceExceeded: If more than ``cap`` vertices would be created.
    """
    if cap < 1:
        raise GraphError(f"state cap must be >= 1, got {cap}")
    parents: dict[str, list[str]] = {s.id: [] for s in g.steps}
    for parent, child in g.edges:
        parents[child].append(parent)
    blocked = {s for d in g.defenses if d.enabled for s in d.protects}
    candidates = [s for s in g.steps if s.id not in blocked]

    def enabled(reached: frozenset[str]) -> list[tuple[str, str | None]]:
        found: list[tuple[str, str | None]] = []
        for step in candidates:
            if step.id in reached:
                continue
            if step.entry:
                found.append((step.id, None))
                continue
            live = [p for p in parents[step.id] if p in reached]
            if not live:
                continue
            if step.kind is StepKind.AND and len(live) < len(parents[step.id]):
                continue
            found.append((step.id, split_step_id(min(live))[0]))
        return found

    root = StateVertex(None, None, None)
    graph = nx.DiGraph()
    graph.add_node(root)
    queue = deque([root])
    while queue:
        vertex = queue.popleft()
        for step_id, source in enabled(vertex.reached):
            instance, name = split_step_id(step_id)
            successor = StateVertex(source, instance, name, vertex.reached | {step_id})
            if successor not in graph:
                if graph.number_of_nodes() >= cap:
                    raise StateSpaceExceeded(f"state enumeration exceeds {cap} vertices")
                graph.add_node(successor)
                queue.append(successor)
            graph.add_edge(vertex, successor)
    _LOGGER.debug(
        "Enumerated %d states and %d transitions", graph.number_of_nodes(), graph.number_of_edges()
    )
    return StateGraph(graph, root)


@dataclass(frozen=True)
class ConditionGraph:
    """Condition-oriented view: one vertex per step, arcs labelled by the producing step."""

    graph: nx.MultiDiGraph

    @property
    def conditions(self) -> list[str]:
        return sorted(self.graph.nodes)

    @property
    def arcs(self) -> list[tuple[str, str, str]]:
        return sorted((a, b, label) for a, b, label in self.graph.edges(data="label"))

    def to_json(self) -> str:
        doc = {
            "conditions": [f"compromised: {c}" for c in self.conditions],
            "arcs": [{"from": a, "to": b, "label": label} for a, b, label in self.arcs],
        }
        return json.dumps(doc, indent=2) + "\n"

    def to_dot(self) -> str:
        lines = ["digraph conditions {"]
        for condition in self.conditions:
            label = quote_dot(f"compromised: {condition}")
            lines.append(f"  {quote_dot(condition)} [label={label}];")
        for a, b, label in self.arcs:
            lines.append(f"  {quote_dot(a)} -> {quote_dot(b)} [label={quote_dot(label)}];")
        lines.append("}")
        return "\n".join(lines) + "\n"


def to_condition_view(g: AttackGraph) -> ConditionGraph:
    """One condition per step; one arc per edge labelled with the step it produces."""
    graph = nx.MultiDiGraph()
    graph.add_nodes_from(s.id for s in g.steps)
    for parent, child in g.edges:
        graph.add_edge(parent, child, label=child)
    return ConditionGraph(graph)
