"""System models: instances of a language's assets, their links and the scenario."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

from .exceptions import BadLink, ModelSchemaError, UnknownAsset, UnknownDefense, UnresolvedEntry
from .language import LanguageSpec, StepRef

_LOGGER = logging.getLogger(__name__)

MIN_IMPACT = 1
MAX_IMPACT = 5


@dataclass(frozen=True)
class Instance:
    """One asset instance; ``defenses`` holds explicit enablement assignments."""

    id: str
    asset: str
    defenses: Mapping[str, bool] = field(default_factory=dict)


@dataclass(frozen=True)
class Link:
    association: str
    left: str
    right: str


@dataclass(frozen=True)
class SystemModel:
    """A validated system model.

    ``entries`` and ``targets`` hold ``instance.step`` ids; ``impacts`` maps target
    ids to a 1..5 severity used by the risk matrix.
    """

    instances: tuple[Instance, ...]
    links: tuple[Link, ...] = ()
    entries: tuple[str, ...] = ()
    targets: tuple[str, ...] = ()
    impacts: Mapping[str, int] = field(default_factory=dict)

    @cached_property
    def instance_map(self) -> dict[str, Instance]:
        return {i.id: i for i in self.instances}

    @cached_property
    def _neighbors(self) -> dict[tuple[str, str, bool], list[str]]:
        table: dict[tuple[str, str, bool], list[str]] = defaultdict(list)
        for link in self.links:
            table[(link.association, link.left, True)].append(link.right)
            table[(link.association, link.right, False)].append(link.left)
        return {key: sorted(ids) for key, ids in table.items()}

    def expand(self, spec: LanguageSpec, instance: Instance, ref: StepRef) -> list[str]:
        """Instance ids a reference made from ``instance`` resolves to, sorted."""
        if ref.role is None:
            return [instance.id]
        binding = spec.roles[instance.asset][ref.role]
        key = (binding.association.name, instance.id, binding.towards_right)
        return self._neighbors.get(key, [])


def _require(doc: Mapping[str, Any], key: str, kind: type, where: str) -> Any:
    value = doc.get(key)
    if not isinstance(value, kind):
        raise ModelSchemaError(f"{where}: {key!r} must be a {kind.__name__}")
    return value


def _as_bool(value: Any, where: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.upper() in ("TRUE", "FALSE"):
        return value.upper() == "TRUE"
    raise ModelSchemaError(f"{where}: expected true/false, got {value!r}")


def _step_id(
    spec: LanguageSpec, model_instances: Mapping[str, Instance], text: Any, what: str
) -> str:
    if not isinstance(text, str) or "." not in text:
        raise UnresolvedEntry(f"{what} {text!r} is not of the form instance.step")
    instance_id, step = text.rsplit(".", 1)
    instance = model_instances.get(instance_id)
    if instance is None:
        raise UnresolvedEntry(f"{what} {text!r}: no instance {instance_id!r}")
    if step not in spec.assets[instance.asset].step_map:
        raise UnresolvedEntry(f"{what} {text!r}: asset {instance.asset} has no step {step!r}")
    return text


def _check_multiplicities(spec: LanguageSpec, model: SystemModel) -> None:
    for assoc in spec.associations:
        links = [link for link in model.links if link.association == assoc.name]
        left_per_right: dict[str, int] = defaultdict(int)
        right_per_left: dict[str, int] = defaultdict(int)
        for link in links:
            left_per_right[link.right] += 1
            right_per_left[link.left] += 1
        for inst in model.instances:
            if inst.asset == assoc.right.asset:
                count = left_per_right[inst.id]
                if not assoc.left.multiplicity.admits(count):
                    raise BadLink(
                        f"{inst.id} has {count} {assoc.left.role} via {assoc.name}, "
                        f"multiplicity is {assoc.left.multiplicity.value}"
                    )
            if inst.asset == assoc.left.asset:
                count = right_per_left[inst.id]
                if not assoc.right.multiplicity.admits(count):
                    raise BadLink(
                        f"{inst.id} has {count} {assoc.right.role} via {assoc.name}, "
                        f"multiplicity is {assoc.right.multiplicity.value}"
                    )


def parse_model(doc: str | Mapping[str, Any], spec: LanguageSpec) -> SystemModel:
    """Validate a system-model document against a language.

    Args:
        doc: JSON text or an already decoded mapping.
        spec: Language the instances are typed by.

    Raises:
        ModelSchemaError: For structural problems in the document.
        UnknownAsset: For an instance of an undeclared asset type.
        UnknownDefense: For a defense assignment the asset does not declare.
        BadLink: For links violating association types or multiplicities.
        UnresolvedEntry: For entries, targets or impacts naming no instance step.
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as err:
            raise ModelSchemaError(f"invalid JSON: {err}") from err
    if not isinstance(doc, Mapping):
        raise ModelSchemaError("model must be a JSON object")

    instances: dict[str, Instance] = {}
    for i, raw in enumerate(_require(doc, "instances", list, "model")):
        where = f"instances[{i}]"
        if not isinstance(raw, Mapping):
            raise ModelSchemaError(f"{where} must be an object")
        inst_id = _require(raw, "id", str, where)
        asset_name = _require(raw, "asset", str, where)
        if not inst_id or "." in inst_id:
            raise ModelSchemaError(f"{where}: id {inst_id!r} must be non-empty and dot-free")
        if inst_id in instances:
            raise ModelSchemaError(f"{where}: duplicate instance id {inst_id!r}")
        asset = spec.assets.get(asset_name)
        if asset is None:
            raise UnknownAsset(f"{inst_id}: unknown asset type {asset_name!r}")
        assignments = raw.get("defenses", {})
        if not isinstance(assignments, Mapping):
            raise ModelSchemaError(f"{where}: 'defenses' must be an object")
        defenses: dict[str, bool] = {}
        for name, value in assignments.items():
            if name not in asset.defense_map:
                raise UnknownDefense(f"{inst_id}: asset {asset_name} has no defense {name!r}")
            defenses[name] = _as_bool(value, f"{where}.defenses.{name}")
        instances[inst_id] = Instance(inst_id, asset_name, defenses)

    links: list[Link] = []
    seen_links: set[Link] = set()
    for i, raw in enumerate(doc.get("links", [])):
        where = f"links[{i}]"
        if not isinstance(raw, Mapping):
            raise ModelSchemaError(f"{where} must be an object")
        link = Link(
            _require(raw, "association", str, where),
            _require(raw, "left", str, where),
            _require(raw, "right", str, where),
        )
        assoc = spec.association_map.get(link.association)
        if assoc is None:
            raise BadLink(f"{where}: unknown association {link.association!r}")
        for side, end in ((link.left, assoc.left), (link.right, assoc.right)):
            inst = instances.get(side)
            if inst is None:
                raise BadLink(f"{where}: unknown instance {side!r}")
            if inst.asset != end.asset:
                raise BadLink(
                    f"{where}: {side} is a {inst.asset}, {assoc.name} expects {end.asset}"
                )
        if link in seen_links:
            raise BadLink(f"{where}: duplicate link {link.left} <-> {link.right}")
        seen_links.add(link)
        links.append(link)

    entries = tuple(
        _step_id(spec, instances, e, "entry") for e in doc.get("entries", [])
    )
    targets = tuple(
        _step_id(spec, instances, t, "target") for t in doc.get("targets", [])
    )
    raw_impacts = doc.get("impacts", {})
    if not isinstance(raw_impacts, Mapping):
        raise ModelSchemaError("'impacts' must be an object")
    impacts: dict[str, int] = {}
    for key, value in raw_impacts.items():
        _step_id(spec, instances, key, "impact")
        if isinstance(value, bool) or not isinstance(value, int) or not (
            MIN_IMPACT <= value <= MAX_IMPACT
        ):
            raise ModelSchemaError(f"impact of {key} must be an integer in 1..5, got {value!r}")
        impacts[key] = value

    model = SystemModel(
        tuple(instances.values()),
        tuple(links),
        tuple(dict.fromkeys(entries)),
        tuple(dict.fromkeys(targets)),
        impacts,
    )
    _check_multiplicities(spec, model)
    _LOGGER.debug("Parsed model with %d instances and %d links", len(instances), len(links))
    return model
