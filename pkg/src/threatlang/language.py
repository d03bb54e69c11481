"""Threat-modeling language: types, parser, canonical renderer and merging.

A language declares asset types whose attack steps are OR (``|``) or AND (``&``),
defenses (``#``) that protect steps, and associations that give assets named roles
through which steps reference each other across instances.
"""

from __future__ import annotations

import difflib
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

from lark import Lark, Token, Tree
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, UnexpectedToken

from .distributions import CONSTANT_ZERO, Family, TtcDistribution
from .exceptions import (
    ConflictError,
    DslSyntaxError,
    DuplicateName,
    InvalidParameters,
    LanguageError,
    ResolutionError,
    SourceLocation,
)

_LOGGER = logging.getLogger(__name__)


class StepKind(Enum):
    """Attack-step kinds."""

    OR = "OR"
    AND = "AND"

    @property
    def symbol(self) -> str:
        return "|" if self is StepKind.OR else "&"


class Multiplicity(Enum):
    """Association multiplicities."""

    ONE = "1"
    ZERO_OR_ONE = "0..1"
    ANY = "0..*"
    ONE_OR_MORE = "1..*"

    def admits(self, count: int) -> bool:
        low = 1 if self in (Multiplicity.ONE, Multiplicity.ONE_OR_MORE) else 0
        high = 1 if self in (Multiplicity.ONE, Multiplicity.ZERO_OR_ONE) else None
        return count >= low and (high is None or count <= high)


@dataclass(frozen=True)
class StepRef:
    """Reference to a local step, or to ``role.step`` on associated instances."""

    step: str
    role: str | None = None
    location: SourceLocation | None = field(default=None, compare=False)

    def __str__(self) -> str:
        return f"{self.role}.{self.step}" if self.role else self.step


@dataclass(frozen=True)
class StepDecl:
    name: str
    kind: StepKind
    local_ttc: TtcDistribution = CONSTANT_ZERO
    children: tuple[StepRef, ...] = ()
    location: SourceLocation | None = field(default=None, compare=False)


@dataclass(frozen=True)
class DefenseDecl:
    name: str
    protects: tuple[StepRef, ...]
    default_enabled: bool = False
    enablement: float | None = None
    location: SourceLocation | None = field(default=None, compare=False)


@dataclass(frozen=True)
class AssetType:
    name: str
    steps: tuple[StepDecl, ...] = ()
    defenses: tuple[DefenseDecl, ...] = ()
    location: SourceLocation | None = field(default=None, compare=False)

    @cached_property
    def step_map(self) -> dict[str, StepDecl]:
        return {s.name: s for s in self.steps}

    @cached_property
    def defense_map(self) -> dict[str, DefenseDecl]:
        return {d.name: d for d in self.defenses}


@dataclass(frozen=True)
class AssociationEnd:
    asset: str
    role: str
    multiplicity: Multiplicity = Multiplicity.ANY


@dataclass(frozen=True)
class Association:
    """Relation between two asset types; each end's role names that end's instances."""

    name: str
    left: AssociationEnd
    right: AssociationEnd
    location: SourceLocation | None = field(default=None, compare=False)


@dataclass(frozen=True)
class RoleBinding:
    """What a role means from one asset's point of view."""

    association: Association
    target_asset: str
    # True when the role names the right-hand end, so targets are the links' right ids
    towards_right: bool


@dataclass(frozen=True)
class LanguageSpec:
    """Semantic model of a threat-modeling language."""

    assets: Mapping[str, AssetType]
    associations: tuple[Association, ...] = ()

    @cached_property
    def roles(self) -> dict[str, dict[str, RoleBinding]]:
        """Per asset, role name to binding."""
        table: dict[str, dict[str, RoleBinding]] = {name: {} for name in self.assets}
        for assoc in self.associations:
            table.setdefault(assoc.left.asset, {})[assoc.right.role] = RoleBinding(
                assoc, assoc.right.asset, True
            )
            table.setdefault(assoc.right.asset, {})[assoc.left.role] = RoleBinding(
                assoc, assoc.left.asset, False
            )
        return table

    @cached_property
    def association_map(self) -> dict[str, Association]:
        return {a.name: a for a in self.associations}

    def target_asset(self, asset: str, ref: StepRef) -> str:
        """Asset type a reference made from ``asset`` points into."""
        if ref.role is None:
            return asset
        return self.roles[asset][ref.role].target_asset


# -----------------------------------------------------------------------------
# Validation
# -----------------------------------------------------------------------------


def _suggest(word: str, options: Iterable[str]) -> list[str]:
    return difflib.get_close_matches(word, sorted(options), n=3)


def _check_ref(spec: LanguageSpec, asset: AssetType, ref: StepRef) -> None:
    if ref.role is None:
        if ref.step not in asset.step_map:
            raise ResolutionError(
                f"asset {asset.name} has no step {ref.step!r}",
                ref.location,
                _suggest(ref.step, asset.step_map),
            )
        return
    roles = spec.roles.get(asset.name, {})
    if ref.role not in roles:
        raise ResolutionError(
            f"asset {asset.name} has no role {ref.role!r}", ref.location, _suggest(ref.role, roles)
        )
    target = spec.assets[roles[ref.role].target_asset]
    if ref.step not in target.step_map:
        raise ResolutionError(
            f"asset {target.name} (role {ref.role}) has no step {ref.step!r}",
            ref.location,
            _suggest(ref.step, target.step_map),
        )


def validate_language(spec: LanguageSpec) -> None:
    """Check that names are unique and every reference resolves.

    Raises:
        DuplicateName: For clashing asset, member, association or role names.
        ResolutionError: For references to undeclared assets, roles or steps.
        LanguageError: For distributions used where they are not allowed.
    """
    for asset in spec.assets.values():
        seen: set[str] = set()
        for member in (*asset.steps, *asset.defenses):
            if member.name in seen:
                raise DuplicateName(
                    f"asset {asset.name} declares {member.name!r} twice", member.location
                )
            seen.add(member.name)
        for step in asset.steps:
            if step.local_ttc.family is Family.BERNOULLI:
                raise LanguageError(
                    f"step {asset.name}.{step.name}: Bernoulli is only valid on defenses",
                    step.location,
                )
        for defense in asset.defenses:
            if defense.enablement is not None and not 0.0 <= defense.enablement <= 1.0:
                raise LanguageError(
                    f"defense {asset.name}.{defense.name}: enablement outside [0, 1]",
                    defense.location,
                )

    names: set[str] = set()
    role_owners: dict[tuple[str, str], str] = {}
    for assoc in spec.associations:
        if assoc.name in names:
            raise DuplicateName(f"association {assoc.name!r} declared twice", assoc.location)
        names.add(assoc.name)
        for end in (assoc.left, assoc.right):
            if end.asset not in spec.assets:
                raise ResolutionError(
                    f"association {assoc.name} refers to undeclared asset {end.asset!r}",
                    assoc.location,
                    _suggest(end.asset, spec.assets),
                )
        if assoc.left.role == assoc.right.role:
            raise DuplicateName(
                f"association {assoc.name} uses role {assoc.left.role!r} on both ends",
                assoc.location,
            )
        # the role on one end is visible from the asset on the other end
        visible = ((assoc.left.asset, assoc.right.role), (assoc.right.asset, assoc.left.role))
        for owner, role in visible:
            previous = role_owners.get((owner, role))
            if previous is not None:
                raise DuplicateName(
                    f"role {role!r} of asset {owner} is declared by {previous} and {assoc.name}",
                    assoc.location,
                )
            role_owners[(owner, role)] = assoc.name

    for asset in spec.assets.values():
        for step in asset.steps:
            for ref in step.children:
                _check_ref(spec, asset, ref)
        for defense in asset.defenses:
            if not defense.protects:
                raise LanguageError(
                    f"defense {asset.name}.{defense.name} protects nothing", defense.location
                )
            for ref in defense.protects:
                _check_ref(spec, asset, ref)


# -----------------------------------------------------------------------------
# Parsing
# -----------------------------------------------------------------------------

_DSL_SYNTAX = r"""
    start: (asset | assoc)*
    asset: "asset" NAME "{" (step | defense)* "}"
    step: KIND NAME ("[" dist "]")? ("->" ref ("," ref)*)?
    defense: "#" NAME ("[" dist "]")? "->" ref ("," ref)*
    assoc: "assoc" NAME "[" NAME MULT "]" NAME "<->" "[" NAME MULT "]" NAME
    dist: NAME "(" (NUMBER ("," NUMBER)*)? ")"
    ref: NAME ("." NAME)?

    KIND: "|" | "&"
    MULT: "0..1" | "0..*" | "1..*" | "1"
    NAME: /[A-Za-z_][A-Za-z0-9_]*/
    NUMBER: /[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?/

    COMMENT: /\/\/[^\n]*/
    %ignore COMMENT
    %ignore /\s+/
"""

_dsl_parser = Lark(_DSL_SYNTAX, parser="lalr", propagate_positions=True)


def _describe_terminal(name: str) -> str:
    if name == "$END":
        return "end of input"
    try:
        pattern = _dsl_parser.get_terminal(name).pattern
    except KeyError:
        return name
    return repr(pattern.value) if pattern.type == "str" else name.lower()


def _end_location(text: str) -> SourceLocation:
    lines = text.split("\n")
    return SourceLocation(len(lines), len(lines[-1]) + 1)


def _syntax_error(err: UnexpectedInput, text: str) -> DslSyntaxError:
    expected: set[str] = set()
    if isinstance(err, UnexpectedToken | UnexpectedEOF):
        expected = set(err.expected)
    elif isinstance(err, UnexpectedCharacters):
        expected = set(err.allowed or ())
    described = sorted({_describe_terminal(name) for name in expected})
    token = getattr(err, "token", None)
    if isinstance(err, UnexpectedEOF) or (isinstance(token, Token) and token.type == "$END"):
        return DslSyntaxError("unexpected end of input", _end_location(text), described)
    location = SourceLocation(err.line, err.column)
    if isinstance(token, Token):
        return DslSyntaxError(f"unexpected {token.value!r}", location, described)
    return DslSyntaxError("unexpected character", location, described)


def _loc(item: Tree[Token] | Token) -> SourceLocation:
    if isinstance(item, Token):
        return SourceLocation(item.line or 0, item.column or 0)
    return SourceLocation(item.meta.line, item.meta.column)


def _tokens(node: Tree[Token]) -> list[Token]:
    return [c for c in node.children if isinstance(c, Token)]


def _subtrees(node: Tree[Token], data: str) -> list[Tree[Token]]:
    return [c for c in node.children if isinstance(c, Tree) and c.data == data]


def _build_ref(node: Tree[Token]) -> StepRef:
    names = [t.value for t in _tokens(node)]
    if len(names) == 2:
        return StepRef(names[1], names[0], _loc(node))
    return StepRef(names[0], None, _loc(node))


def _build_dist(node: Tree[Token]) -> TtcDistribution:
    name, *numbers = _tokens(node)
    try:
        return TtcDistribution.from_parts(name.value, tuple(float(n) for n in numbers))
    except InvalidParameters as err:
        raise LanguageError(str(err), _loc(node)) from err


def _build_asset(node: Tree[Token]) -> AssetType:
    name = _tokens(node)[0].value
    steps: list[StepDecl] = []
    defenses: list[DefenseDecl] = []
    for member in node.children:
        if not isinstance(member, Tree):
            continue
        member_name = [t for t in _tokens(member) if t.type == "NAME"][0].value
        dists = _subtrees(member, "dist")
        refs = tuple(_build_ref(r) for r in _subtrees(member, "ref"))
        if member.data == "step":
            kind = StepKind.OR if _tokens(member)[0].value == "|" else StepKind.AND
            ttc = _build_dist(dists[0]) if dists else CONSTANT_ZERO
            steps.append(StepDecl(member_name, kind, ttc, refs, _loc(member)))
            continue
        enablement: float | None = None
        if dists:
            dist = _build_dist(dists[0])
            if dist.family is not Family.BERNOULLI:
                raise LanguageError(
                    f"defense {name}.{member_name} takes a Bernoulli enablement, got {dist}",
                    _loc(dists[0]),
                )
            enablement = dist.params[0]
        defenses.append(DefenseDecl(member_name, refs, False, enablement, _loc(member)))
    return AssetType(name, tuple(steps), tuple(defenses), _loc(node))


def _build_assoc(node: Tree[Token]) -> Association:
    name, left_asset, left_mult, left_role, right_asset, right_mult, right_role = (
        t.value for t in _tokens(node)
    )
    return Association(
        name,
        AssociationEnd(left_asset, left_role, Multiplicity(left_mult)),
        AssociationEnd(right_asset, right_role, Multiplicity(right_mult)),
        _loc(node),
    )


def parse_language(text: str) -> LanguageSpec:
    """Parse and validate threat-modeling language source.

    Args:
        text: Language source.

    Returns:
        The validated language; declarations keep their source locations.

    Raises:
        DslSyntaxError: With line, column and the expected tokens.
        ResolutionError: For unknown references, with close-match candidates.
        DuplicateName: For names declared twice.
    """
    try:
        tree = _dsl_parser.parse(text)
    except UnexpectedInput as err:
        raise _syntax_error(err, text) from err

    assets: dict[str, AssetType] = {}
    associations: list[Association] = []
    for node in tree.children:
        assert isinstance(node, Tree)
        if node.data == "asset":
            asset = _build_asset(node)
            if asset.name in assets:
                raise DuplicateName(f"asset {asset.name!r} declared twice", asset.location)
            assets[asset.name] = asset
        else:
            associations.append(_build_assoc(node))

    spec = LanguageSpec(assets, tuple(associations))
    validate_language(spec)
    _LOGGER.debug(
        "Parsed language with %d assets and %d associations", len(assets), len(associations)
    )
    return spec


# -----------------------------------------------------------------------------
# Rendering and merging
# -----------------------------------------------------------------------------


def _render_refs(refs: Iterable[StepRef]) -> str:
    return ", ".join(str(r) for r in refs)


def render_language(spec: LanguageSpec) -> str:
    """Render a language in canonical source form; parsing the result gives ``spec`` back."""
    blocks: list[str] = []
    for asset in spec.assets.values():
        lines = [f"asset {asset.name} {{"]
        for step in asset.steps:
            line = f"  {step.kind.symbol} {step.name}"
            if step.local_ttc != CONSTANT_ZERO:
                line += f" [{step.local_ttc}]"
            if step.children:
                line += f" -> {_render_refs(step.children)}"
            lines.append(line)
        for defense in asset.defenses:
            line = f"  # {defense.name}"
            if defense.enablement is not None:
                line += f" [{TtcDistribution.bernoulli(defense.enablement)}]"
            lines.append(f"{line} -> {_render_refs(defense.protects)}")
        lines.append("}")
        blocks.append("\n".join(lines))
    for assoc in spec.associations:
        left, right = assoc.left, assoc.right
        blocks.append(
            f"assoc {assoc.name} [{left.asset} {left.multiplicity.value}] {left.role} <-> "
            f"[{right.asset} {right.multiplicity.value}] {right.role}"
        )
    return "\n\n".join(blocks) + "\n"


def _first_difference(first: AssetType, second: AssetType) -> str:
    names_a = [s.name for s in first.steps] + [d.name for d in first.defenses]
    names_b = [s.name for s in second.steps] + [d.name for d in second.defenses]
    for name in names_a:
        if name not in names_b:
            return f"{name!r} only in the first declaration"
    for name in names_b:
        if name not in names_a:
            return f"{name!r} only in the second declaration"
    for a, b in zip(first.steps, second.steps, strict=False):
        if a != b:
            if a.name != b.name:
                return f"steps declared in a different order at {a.name!r}/{b.name!r}"
            if a.kind is not b.kind:
                return f"step {a.name!r} is {a.kind.value} vs {b.kind.value}"
            if a.local_ttc != b.local_ttc:
                return f"step {a.name!r} has TTC {a.local_ttc} vs {b.local_ttc}"
            return f"step {a.name!r} has children {_render_refs(a.children)} vs " + _render_refs(
                b.children
            )
    for d, e in zip(first.defenses, second.defenses, strict=False):
        if d != e:
            return f"defense {d.name!r} differs"
    return "declarations differ"


def merge_languages(specs: Iterable[LanguageSpec]) -> LanguageSpec:
    """Unify several languages into one.

    Structurally identical duplicate assets and associations are kept once; the
    result lists assets and associations by name.

    Raises:
        ConflictError: When two declarations share a name but differ, naming the
            first structural difference.
    """
    assets: dict[str, AssetType] = {}
    associations: dict[str, Association] = {}
    for spec in specs:
        for name, asset in spec.assets.items():
            known = assets.get(name)
            if known is None:
                assets[name] = asset
            elif known != asset:
                raise ConflictError(
                    f"asset {name} conflicts: {_first_difference(known, asset)}", asset.location
                )
        for assoc in spec.associations:
            seen = associations.get(assoc.name)
            if seen is None:
                associations[assoc.name] = assoc
            elif seen != assoc:
                raise ConflictError(
                    f"association {assoc.name} conflicts: ends differ", assoc.location
                )
    merged = LanguageSpec(
        {name: assets[name] for name in sorted(assets)},
        tuple(associations[name] for name in sorted(associations)),
    )
    validate_language(merged)
    _LOGGER.debug("Merged language has %d assets", len(merged.assets))
    return merged
