"""Compile a language and a system model into an attack graph."""

from __future__ import annotations

import logging

from .exceptions import ExpansionError
from .graph import AttackGraph, DefenseNode, StepNode
from .language import LanguageSpec, StepKind
from .model import SystemModel

_LOGGER = logging.getLogger(__name__)


def compile(spec: LanguageSpec, model: SystemModel) -> AttackGraph:
    """Instantiate every step and defense of every instance and expand references.

    A ``role.step`` reference becomes one edge per instance linked in that role.
    Defenses with an explicit assignment in the model are fixed; the others keep
    the language default and their Bernoulli enablement, if declared. A defense
    whose references expand to no instance step is left out of the graph.

    Raises:
        ExpansionError: If a role reference of some instance matched no linked
            instance and an AND step it points at, not an entry, is left without
            any incoming edge.
    """
    entries = set(model.entries)
    targets = set(model.targets)
    steps: list[StepNode] = []
    defenses: list[DefenseNode] = []
    edges: set[tuple[str, str]] = set()
    # (asset, step) pointed at by a role reference that matched no instance
    unmatched: set[tuple[str, str]] = set()

    for instance in model.instances:
        asset = spec.assets[instance.asset]
        for decl in asset.steps:
            step_id = f"{instance.id}.{decl.name}"
            steps.append(
                StepNode(
                    step_id,
                    decl.kind,
                    decl.local_ttc,
                    step_id in entries,
                    step_id in targets,
                    model.impacts.get(step_id),
                )
            )
            for ref in decl.children:
                linked = model.expand(spec, instance, ref)
                if not linked and ref.role is not None:
                    unmatched.add((spec.target_asset(asset.name, ref), ref.step))
                for other in linked:
                    edges.add((step_id, f"{other}.{ref.step}"))
        for defense in asset.defenses:
            defense_id = f"{instance.id}.{defense.name}"
            protects = tuple(
                sorted(
                    {
                        f"{other}.{ref.step}"
                        for ref in defense.protects
                        for other in model.expand(spec, instance, ref)
                    }
                )
            )
            if not protects:
                _LOGGER.debug("Dropping defense %s: it protects no instance step", defense_id)
                continue
            assigned = instance.defenses.get(defense.name)
            if assigned is None:
                defenses.append(
                    DefenseNode(defense_id, protects, defense.default_enabled, defense.enablement)
                )
            else:
                defenses.append(DefenseNode(defense_id, protects, assigned))

    has_parent = {child for _, child in edges}
    for step in steps:
        if step.kind is not StepKind.AND or step.entry or step.id in has_parent:
            continue
        instance_id, name = step.id.rsplit(".", 1)
        if (model.instance_map[instance_id].asset, name) in unmatched:
            raise ExpansionError(
                f"AND step {step.id} has no parents: its role references match no instance"
            )

    graph = AttackGraph(tuple(steps), tuple(defenses), tuple(edges))
    _LOGGER.debug(
        "Compiled %d steps, %d defenses and %d edges",
        len(graph.steps),
        len(graph.defenses),
        len(graph.edges),
    )
    return graph
