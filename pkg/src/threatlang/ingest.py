"""ATT&CK-style technique catalogs and language generation from them."""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any

from .distributions import CONSTANT_ZERO, Family, TtcDistribution, parse_distribution
from .exceptions import (
    DanglingPrerequisite,
    DuplicateTechnique,
    EmptyCatalog,
    IdentifierCollision,
    InvalidParameters,
    SchemaError,
)
from .language import (
    AssetType,
    DefenseDecl,
    LanguageSpec,
    StepDecl,
    StepKind,
    StepRef,
    render_language,
)

_LOGGER = logging.getLogger(__name__)

_NOT_IDENTIFIER = re.compile(r"[^A-Za-z0-9_]")
_RESERVED = frozenset({"asset", "assoc"})


@dataclass(frozen=True)
class Mitigation:
    id: str
    name: str


@dataclass(frozen=True)
class Technique:
    id: str
    name: str
    tactic: str
    kind: StepKind = StepKind.OR
    prerequisites: tuple[str, ...] = ()
    mitigations: tuple[Mitigation, ...] = ()


@dataclass(frozen=True)
class TechniqueCatalog:
    name: str
    version: str
    techniques: tuple[Technique, ...] = ()


@dataclass(frozen=True)
class TechniqueOverride:
    """Kind and TTC to use instead of the generation defaults."""

    kind: StepKind | None = None
    ttc: TtcDistribution | None = None


class _Loader:
    def __init__(self, where: str) -> None:
        self.where = where

    def get(self, doc: Mapping[str, Any], key: str, kind: type, default: Any = None) -> Any:
        if key not in doc and default is not None:
            return default
        value = doc.get(key)
        if not isinstance(value, kind):
            raise SchemaError(f"{self.where}: {key!r} must be a {kind.__name__}")
        return value


def _decode(doc: str | Mapping[str, Any], what: str) -> Mapping[str, Any]:
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as err:
            raise SchemaError(f"{what} is not valid JSON: {err}") from err
    if not isinstance(doc, Mapping):
        raise SchemaError(f"{what} must be a JSON object")
    return doc


def _kind(value: str, where: str) -> StepKind:
    try:
        return StepKind(value)
    except ValueError:
        raise SchemaError(f"{where}: kind must be OR or AND, got {value!r}") from None


def load_catalog(doc: str | Mapping[str, Any]) -> TechniqueCatalog:
    """Validate a catalog document.

    Raises:
        SchemaError: For missing fields or wrong types.
        DuplicateTechnique: If two techniques share an id.
        DanglingPrerequisite: If a prerequisite is not in the catalog.
    """
    root = _decode(doc, "catalog")
    top = _Loader("catalog")
    techniques: list[Technique] = []
    seen: set[str] = set()
    for i, raw in enumerate(top.get(root, "techniques", list)):
        load = _Loader(f"techniques[{i}]")
        if not isinstance(raw, Mapping):
            raise SchemaError(f"{load.where} must be an object")
        technique_id = load.get(raw, "id", str)
        if technique_id in seen:
            raise DuplicateTechnique(f"technique id {technique_id!r} appears twice")
        seen.add(technique_id)
        prerequisites = load.get(raw, "prerequisites", list, [])
        if not all(isinstance(p, str) for p in prerequisites):
            raise SchemaError(f"{load.where}: prerequisites must be technique ids")
        mitigations: list[Mitigation] = []
        for j, entry in enumerate(load.get(raw, "mitigations", list, [])):
            inner = _Loader(f"{load.where}.mitigations[{j}]")
            if not isinstance(entry, Mapping):
                raise SchemaError(f"{inner.where} must be an object")
            mitigations.append(
                Mitigation(inner.get(entry, "id", str), inner.get(entry, "name", str))
            )
        techniques.append(
            Technique(
                technique_id,
                load.get(raw, "name", str),
                load.get(raw, "tactic", str),
                _kind(load.get(raw, "kind", str, "OR"), load.where),
                tuple(prerequisites),
                tuple(mitigations),
            )
        )
    for technique in techniques:
        for prerequisite in technique.prerequisites:
            if prerequisite not in seen:
                raise DanglingPrerequisite(
                    f"{technique.id} requires {prerequisite!r}, which is not in the catalog"
                )
    catalog = TechniqueCatalog(
        top.get(root, "name", str, "catalog"),
        top.get(root, "version", str, "0"),
        tuple(techniques),
    )
    _LOGGER.debug("Loaded catalog %s with %d techniques", catalog.name, len(techniques))
    return catalog


def load_mapping(doc: str | Mapping[str, Any]) -> dict[str, TechniqueOverride]:
    """Read ``{technique id: {"kind": "OR"|"AND", "ttc": "<dist>"}}`` overrides.

    Raises:
        SchemaError: For malformed entries or a Bernoulli TTC.
    """
    overrides: dict[str, TechniqueOverride] = {}
    for technique_id, raw in _decode(doc, "mapping").items():
        where = f"mapping[{technique_id!r}]"
        if not isinstance(raw, Mapping):
            raise SchemaError(f"{where} must be an object")
        kind = raw.get("kind")
        ttc = raw.get("ttc")
        if kind is not None and not isinstance(kind, str):
            raise SchemaError(f"{where}: kind must be a string")
        if ttc is not None and not isinstance(ttc, str):
            raise SchemaError(f"{where}: ttc must be a distribution string")
        try:
            dist = parse_distribution(ttc) if ttc is not None else None
        except InvalidParameters as err:
            raise SchemaError(f"{where}: {err}") from err
        if dist is not None and dist.family is Family.BERNOULLI:
            raise SchemaError(f"{where}: Bernoulli is not a step TTC")
        overrides[technique_id] = TechniqueOverride(
            _kind(kind, where) if kind is not None else None, dist
        )
    return overrides


def sanitize_identifier(text: str) -> str:
    """Map a catalog name to a language identifier.

    Characters outside ``[A-Za-z0-9_]`` become ``_``; names starting with a digit
    or equal to a language keyword get a ``t_`` prefix.
    """
    name = _NOT_IDENTIFIER.sub("_", text) or "_"
    if name[0].isdigit() or name in _RESERVED:
        name = f"t_{name}"
    return name


def _build_asset(
    catalog: TechniqueCatalog,
    asset_name: str,
    mapping: Mapping[str, TechniqueOverride],
) -> AssetType:
    if not catalog.techniques:
        raise EmptyCatalog(f"catalog {catalog.name} has no techniques")

    owners: dict[str, str] = {}

    def claim(identifier: str, original: str) -> str:
        previous = owners.get(identifier)
        if previous is not None:
            raise IdentifierCollision(
                f"{previous!r} and {original!r} both sanitize to {identifier!r}"
            )
        owners[identifier] = original
        return identifier

    names = {t.id: claim(sanitize_identifier(t.name), t.name) for t in catalog.techniques}
    children: dict[str, list[str]] = {t.id: [] for t in catalog.techniques}
    for technique in catalog.techniques:
        for prerequisite in technique.prerequisites:
            if prerequisite in children:
                children[prerequisite].append(technique.id)

    steps = []
    for technique in catalog.techniques:
        override = mapping.get(technique.id, TechniqueOverride())
        steps.append(
            StepDecl(
                names[technique.id],
                override.kind or technique.kind,
                override.ttc or CONSTANT_ZERO,
                tuple(StepRef(names[c]) for c in children[technique.id]),
            )
        )

    # mitigations are shared across techniques by id
    protected: dict[str, list[str]] = {}
    labels: dict[str, str] = {}
    for technique in catalog.techniques:
        for mitigation in technique.mitigations:
            known = labels.setdefault(mitigation.id, mitigation.name)
            if known != mitigation.name:
                raise SchemaError(
                    f"mitigation {mitigation.id} is named both {known!r} and {mitigation.name!r}"
                )
            targets = protected.setdefault(mitigation.id, [])
            if names[technique.id] not in targets:
                targets.append(names[technique.id])
    defenses = tuple(
        DefenseDecl(
            claim(sanitize_identifier(labels[m]), labels[m]),
            tuple(StepRef(step) for step in protected[m]),
        )
        for m in protected
    )
    return AssetType(sanitize_identifier(asset_name), tuple(steps), defenses)


def generate_language(
    catalog: TechniqueCatalog,
    asset_name: str,
    mapping: Mapping[str, TechniqueOverride] | None = None,
) -> str:
    """Language source with one asset holding one step per technique.

    Prerequisites become parent-to-child references, mitigations become defenses
    protecting their techniques. Steps default to OR and Constant(0) unless the
    catalog or ``mapping`` says otherwise.

    Raises:
        EmptyCatalog: If the catalog has no techniques.
        IdentifierCollision: If two names sanitize to the same identifier.
    """
    asset = _build_asset(catalog, asset_name, mapping or {})
    _LOGGER.debug(
        "Generated asset %s with %d steps and %d defenses",
        asset.name,
        len(asset.steps),
        len(asset.defenses),
    )
    return render_language(LanguageSpec({asset.name: asset}))


def split_by_tactic(catalog: TechniqueCatalog) -> dict[str, TechniqueCatalog]:
    """One sub-catalog per tactic, in first-appearance order.

    Prerequisites pointing at another tactic are dropped.
    """
    tactics: dict[str, list[Technique]] = {}
    for technique in catalog.techniques:
        tactics.setdefault(technique.tactic, []).append(technique)
    split: dict[str, TechniqueCatalog] = {}
    for tactic, members in tactics.items():
        ids = {t.id for t in members}
        split[tactic] = TechniqueCatalog(
            f"{catalog.name}/{tactic}",
            catalog.version,
            tuple(
                Technique(
                    t.id,
                    t.name,
                    t.tactic,
                    t.kind,
                    tuple(p for p in t.prerequisites if p in ids),
                    t.mitigations,
                )
                for t in members
            ),
        )
    return split
