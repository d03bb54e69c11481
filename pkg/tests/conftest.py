"""Shared fixtures and random generators."""

from __future__ import annotations

import math
import random
from pathlib import Path

import pytest

from threatlang.compiler import compile
from threatlang.distributions import TtcDistribution
from threatlang.grammar import Grammar, Rule, load_grammar
from threatlang.graph import AttackGraph, DefenseNode, StepNode
from threatlang.language import LanguageSpec, StepKind, parse_language
from threatlang.model import SystemModel, parse_model

SAMPLES = Path(__file__).resolve().parent.parent / "samples"

G1_TEXT = "S -> a A | b B\nA -> a b\nB -> b a\n"


@pytest.fixture
def samples() -> Path:
    return SAMPLES


@pytest.fixture
def stem_loop() -> Grammar:
    """Stochastic stem-loop grammar over A, C, G, U."""
    return load_grammar((SAMPLES / "stem_loop.grammar").read_text())


@pytest.fixture
def g1() -> Grammar:
    return load_grammar(G1_TEXT)


@pytest.fixture
def enterprise() -> LanguageSpec:
    return parse_language((SAMPLES / "enterprise.tl").read_text())


@pytest.fixture
def enterprise_model(enterprise: LanguageSpec) -> SystemModel:
    return parse_model((SAMPLES / "model.json").read_text(), enterprise)


@pytest.fixture
def enterprise_graph(enterprise: LanguageSpec, enterprise_model: SystemModel) -> AttackGraph:
    return compile(enterprise, enterprise_model)


# -----------------------------------------------------------------------------
# Graph helpers
# -----------------------------------------------------------------------------


def const(value: float) -> TtcDistribution:
    return TtcDistribution.constant(value)


def step(
    step_id: str,
    kind: StepKind = StepKind.OR,
    ttc: TtcDistribution | float = 0.0,
    entry: bool = False,
    target: bool = False,
    impact: int | None = None,
) -> StepNode:
    if not isinstance(ttc, TtcDistribution):
        ttc = const(ttc)
    return StepNode(step_id, kind, ttc, entry, target, impact)


def diamond(target_kind: StepKind = StepKind.OR) -> AttackGraph:
    """e(1) -> {b(2), c(4)} -> t(1)."""
    return AttackGraph(
        (
            step("h.e", ttc=1, entry=True),
            step("h.b", ttc=2),
            step("h.c", ttc=4),
            step("h.t", target_kind, ttc=1, target=True),
        ),
        (),
        (("h.e", "h.b"), ("h.e", "h.c"), ("h.b", "h.t"), ("h.c", "h.t")),
    )


def random_dag(
    rng: random.Random,
    max_steps: int = 12,
    defenses: int = 0,
    edge_probability: float = 0.3,
) -> AttackGraph:
    """Random mixed OR/AND DAG with constant locals and unassigned defenses.

    Steps are named in topological order; edges only go from lower to higher names.
    """
    n = rng.randint(2, max_steps)
    ids = [f"h.s{i:02d}" for i in range(n)]
    entries = set(rng.sample(range(n), rng.randint(1, max(1, n // 3))))
    steps = [
        step(
            sid,
            rng.choice([StepKind.OR, StepKind.AND]),
            float(rng.randint(0, 9)),
            entry=i in entries,
            target=i == n - 1,
        )
        for i, sid in enumerate(ids)
    ]
    edges = [
        (ids[i], ids[j])
        for i in range(n)
        for j in range(i + 1, n)
        if rng.random() < edge_probability
    ]
    guards = [
        DefenseNode(f"d.x{k:02d}", tuple(sorted(rng.sample(ids, rng.randint(1, 2)))))
        for k in range(defenses)
    ]
    return AttackGraph(tuple(steps), tuple(guards), tuple(edges))


def constant_locals(g: AttackGraph) -> dict[str, float]:
    return {s.id: s.ttc.mean for s in g.steps}


def fixpoint_oracle(
    g: AttackGraph, locals_: dict[str, float], blocked: frozenset[str] = frozenset()
) -> dict[str, float]:
    """Iterate the OR/AND equations from infinity until nothing changes."""
    parents: dict[str, list[str]] = {s.id: [] for s in g.steps}
    for parent, child in g.edges:
        parents[child].append(parent)
    totals = {s.id: math.inf for s in g.steps}
    changed = True
    while changed:
        changed = False
        for s in g.steps:
            local = math.inf if s.id in blocked else locals_[s.id]
            if s.entry:
                value = local
            elif not parents[s.id]:
                value = math.inf
            elif s.kind is StepKind.AND:
                value = max(totals[p] for p in parents[s.id]) + local
            else:
                value = min(totals[p] for p in parents[s.id]) + local
            if value != totals[s.id]:
                totals[s.id] = value
                changed = True
    return totals


# -----------------------------------------------------------------------------
# Grammar helpers
# -----------------------------------------------------------------------------


def random_grammar(rng: random.Random) -> Grammar:
    """Random context-free grammar over terminals a and b, start S."""
    nonterminals = ["S", "A", "B", "C", "D"][: rng.randint(1, 5)]
    symbols = nonterminals + ["a", "b"]
    seen: set[tuple[str, tuple[str, ...]]] = set()
    rules: list[Rule] = []
    for i in range(rng.randint(1, 10)):
        lhs = "S" if i == 0 else rng.choice(nonterminals)
        rhs = tuple(rng.choice(symbols) for _ in range(rng.randint(0, 3)))
        if (lhs, rhs) in seen:
            continue
        seen.add((lhs, rhs))
        rules.append(Rule((lhs,), rhs))
    return Grammar.build(rules, terminals={"a", "b"}, start="S")


def random_string(rng: random.Random, max_len: int = 8) -> str:
    return "".join(rng.choice("ab") for _ in range(rng.randint(0, max_len)))
