"""Formal grammars for attack scenarios.

Classification, two parsing strategies (Earley-style top-down and reduction-based
bottom-up), stochastic sampling, derivation probabilities and bounded language
enumeration over a grammar G = (V_N, V_T, S, P).
"""

from __future__ import annotations

import logging
import math
import re
from collections import defaultdict, deque
from collections.abc import Callable, Iterable, Iterator, Sequence
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Any, NamedTuple, TypeAlias

import numpy as np
from lark import Lark, Token, Tree
from lark.exceptions import UnexpectedInput

from .exceptions import (
    DepthExceeded,
    GrammarSyntaxError,
    InvalidGrammar,
    LimitExceeded,
    NotContextFree,
    NotNormalized,
)

_LOGGER = logging.getLogger(__name__)

EPSILON = "ε"
NORMALIZATION_TOLERANCE = 1e-9
RESAMPLE_ATTEMPTS = 100

_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_']*")


class GrammarClass(Enum):
    """Operative grammar classes."""

    CONTEXT_FREE = "ContextFree"
    NOT_CONTEXT_FREE = "NotContextFree"


@dataclass(frozen=True)
class Rule:
    """Inference rule `lhs -> rhs`, optionally weighted; an empty rhs is ε."""

    lhs: tuple[str, ...]
    rhs: tuple[str, ...] = ()
    probability: float | None = None

    def __str__(self) -> str:
        text = f"{' '.join(self.lhs)} -> {' '.join(self.rhs) or EPSILON}"
        if self.probability is None:
            return text
        return f"{self.probability!r} {text}"


@dataclass(frozen=True)
class Grammar:
    """Formal grammar G = (V_N, V_T, S, P); stochastic when every rule has a probability."""

    nonterminals: frozenset[str]
    terminals: frozenset[str]
    start: str
    rules: tuple[Rule, ...]

    def __post_init__(self) -> None:
        self.validate()

    @classmethod
    def build(
        cls,
        rules: Iterable[Rule],
        terminals: Iterable[str] | None = None,
        start: str | None = None,
    ) -> Grammar:
        """Build a grammar, inferring the symbol sets from the rules.

        Args:
            rules: Inference rules in declaration order.
            terminals: Terminal symbols. Defaults to every symbol that never occurs
                on a left-hand side.
            start: Start symbol. Defaults to the first nonterminal of the first rule.

        Returns:
            The validated grammar.
        """
        rules = tuple(rules)
        symbols = {s for rule in rules for s in (*rule.lhs, *rule.rhs)}
        if terminals is None:
            heads = {s for rule in rules for s in rule.lhs}
            term_set = frozenset(symbols - heads)
        else:
            term_set = frozenset(terminals)
        nonterminals = frozenset(symbols - term_set)
        if start is None:
            if not rules:
                raise InvalidGrammar("grammar has no rules")
            start = next((s for s in rules[0].lhs if s in nonterminals), rules[0].lhs[0])
        return cls(nonterminals | {start} - term_set, term_set, start, rules)

    def validate(self) -> None:
        """Check the grammar invariants.

        Raises:
            InvalidGrammar: With the offending rule index where one applies.
        """
        if not self.rules:
            raise InvalidGrammar("grammar has no rules")
        overlap = self.nonterminals & self.terminals
        if overlap:
            raise InvalidGrammar(f"symbols are both terminal and nonterminal: {sorted(overlap)}")
        if self.start not in self.nonterminals:
            raise InvalidGrammar(f"start symbol {self.start!r} is not a nonterminal")
        if EPSILON in self.nonterminals | self.terminals:
            raise InvalidGrammar(f"{EPSILON} is reserved for the empty string")

        weighted = self.rules[0].probability is not None
        seen: set[tuple[tuple[str, ...], tuple[str, ...]]] = set()
        for index, rule in enumerate(self.rules):
            if not rule.lhs:
                raise InvalidGrammar("left-hand side is empty", index)
            if not any(s in self.nonterminals for s in rule.lhs):
                raise InvalidGrammar("left-hand side has no nonterminal", index)
            unknown = [
                s
                for s in (*rule.lhs, *rule.rhs)
                if s not in self.nonterminals and s not in self.terminals
            ]
            if unknown:
                raise InvalidGrammar(f"undeclared symbols {unknown}", index)
            if (rule.probability is not None) != weighted:
                raise InvalidGrammar("probability must be present on all rules or none", index)
            if rule.probability is not None and not 0.0 < rule.probability <= 1.0:
                raise InvalidGrammar(f"probability {rule.probability} outside (0, 1]", index)
            if (rule.lhs, rule.rhs) in seen:
                raise InvalidGrammar(f"duplicate rule {rule}", index)
            seen.add((rule.lhs, rule.rhs))

    @property
    def is_stochastic(self) -> bool:
        return self.rules[0].probability is not None

    @cached_property
    def by_lhs(self) -> dict[str, tuple[Rule, ...]]:
        """Rules grouped by their single left-hand nonterminal (context-free grammars)."""
        grouped: dict[str, list[Rule]] = defaultdict(list)
        for rule in self.rules:
            if len(rule.lhs) == 1:
                grouped[rule.lhs[0]].append(rule)
        return {lhs: tuple(rules) for lhs, rules in grouped.items()}

    @cached_property
    def nullable(self) -> frozenset[str]:
        """Nonterminals that derive ε."""
        found: set[str] = set()
        changed = True
        while changed:
            changed = False
            for rule in self.rules:
                head = rule.lhs[0]
                if len(rule.lhs) == 1 and head not in found and all(s in found for s in rule.rhs):
                    found.add(head)
                    changed = True
        return frozenset(found)

    @cached_property
    def rule_probabilities(self) -> dict[tuple[str, tuple[str, ...]], float]:
        return {
            (rule.lhs[0], rule.rhs): rule.probability
            for rule in self.rules
            if rule.probability is not None and len(rule.lhs) == 1
        }

    @property
    def character_terminals(self) -> bool:
        """Whether strings over this grammar can be written without separators."""
        return all(len(t) == 1 for t in self.terminals)

    def tokenize(self, text: str | Sequence[str]) -> tuple[str, ...]:
        """Split an input string into terminal symbols."""
        if not isinstance(text, str):
            return tuple(text)
        if self.character_terminals:
            return tuple(ch for ch in text if not ch.isspace())
        return tuple(text.split())

    def join(self, symbols: Iterable[str]) -> str:
        """Render a terminal sequence as a string."""
        return ("" if self.character_terminals else " ").join(symbols)


@dataclass(frozen=True, eq=False)
class ParseTree:
    """Inference tree; nonterminal nodes have children, leaves are terminals or ε.

    Every traversal uses an explicit stack, so trees of any depth can be compared,
    hashed and rendered.
    """

    symbol: str
    children: tuple[ParseTree, ...] = ()

    @cached_property
    def _shape(self) -> tuple[tuple[str, int], ...]:
        """Preorder `(symbol, child count)` pairs; equal shapes mean equal trees."""
        shape: list[tuple[str, int]] = []
        stack = [self]
        while stack:
            node = stack.pop()
            shape.append((node.symbol, len(node.children)))
            stack.extend(reversed(node.children))
        return tuple(shape)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParseTree):
            return NotImplemented
        return self is other or self._shape == other._shape

    def __hash__(self) -> int:
        return hash(self._shape)

    def frontier(self) -> tuple[str, ...]:
        """Left-to-right leaf symbols with ε elided."""
        return tuple(s for s, arity in self._shape if not arity and s != EPSILON)

    def depth(self) -> int:
        deepest = 0
        stack = [(self, 1)]
        while stack:
            node, level = stack.pop()
            deepest = max(deepest, level)
            stack.extend((child, level + 1) for child in node.children)
        return deepest

    def productions(self) -> Iterator[tuple[str, tuple[str, ...]]]:
        """Yield `(lhs, rhs)` for every internal node, preorder."""
        stack = [self]
        while stack:
            node = stack.pop()
            if not node.children:
                continue
            rhs = tuple(c.symbol for c in node.children if c.symbol != EPSILON)
            yield node.symbol, rhs
            stack.extend(reversed(node.children))

    def __str__(self) -> str:
        parts: list[str] = []
        stack: list[ParseTree | str] = [self]
        while stack:
            item = stack.pop()
            if isinstance(item, str):
                parts.append(item)
            elif not item.children:
                parts.append(item.symbol)
            else:
                parts.append(f"{item.symbol}(")
                stack.append(")")
                for k in reversed(range(len(item.children))):
                    stack.append(item.children[k])
                    if k:
                        stack.append(", ")
        return "".join(parts)

    def pretty(self, indent: str = "  ") -> str:
        """Indented multi-line rendering."""
        lines: list[str] = []
        stack = [(self, 0)]
        while stack:
            node, level = stack.pop()
            lines.append(f"{indent * level}{node.symbol}")
            stack.extend((child, level + 1) for child in reversed(node.children))
        return "\n".join(lines)


def _assemble(events: Iterable[tuple[str, int]]) -> ParseTree:
    """Build a tree from `(symbol, child count)` events given in reverse preorder."""
    built: list[ParseTree] = []
    for symbol, arity in events:
        children = tuple(built.pop() for _ in range(arity))
        built.append(ParseTree(symbol, children))
    return built[0]


@dataclass(frozen=True)
class ParseForest:
    """All distinct parse trees of one input, up to the limits."""

    input: tuple[str, ...]
    trees: tuple[ParseTree, ...]
    truncated: bool = False

    @property
    def accepted(self) -> bool:
        return bool(self.trees)

    def __len__(self) -> int:
        return len(self.trees)


@dataclass(frozen=True)
class ParseLimits:
    """Bounds on forest size and parser work."""

    max_trees: int = 1000
    max_items: int = 100_000


class Sample(NamedTuple):
    """One sampled derivation."""

    string: str
    tree: ParseTree
    probability: float


@dataclass(frozen=True)
class LanguageEnumeration:
    """Distinct strings of a bounded language enumeration."""

    entries: tuple[tuple[str, float | None], ...]
    truncated: bool

    @property
    def strings(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.entries)


class _OutOfBudget(Exception):
    pass


# -----------------------------------------------------------------------------
# Classification
# -----------------------------------------------------------------------------


def classify(g: Grammar) -> GrammarClass:
    """Classify a grammar as context-free or not.

    Returns:
        CONTEXT_FREE iff every rule's left-hand side is exactly one nonterminal.
    """
    g.validate()
    if all(len(r.lhs) == 1 and r.lhs[0] in g.nonterminals for r in g.rules):
        return GrammarClass.CONTEXT_FREE
    return GrammarClass.NOT_CONTEXT_FREE


def _require_context_free(g: Grammar) -> None:
    if classify(g) is not GrammarClass.CONTEXT_FREE:
        raise NotContextFree("operation requires a context-free grammar")


def _require_normalized(g: Grammar) -> None:
    _require_context_free(g)
    if not g.is_stochastic:
        raise NotNormalized("grammar rules carry no probabilities")
    for lhs, rules in sorted(g.by_lhs.items()):
        total = math.fsum(r.probability or 0.0 for r in rules)
        if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
            raise NotNormalized(f"probabilities of {lhs!r} sum to {total!r}")


# -----------------------------------------------------------------------------
# Parsing
# -----------------------------------------------------------------------------

Span = tuple[str, int, int]
_Item = tuple[int, int, int]  # rule index, dot, origin


# Pending work of one partial derivation, as cons lists:
# ("tree", symbol, i, j, active) or ("sequence", rhs, k, i, j, active).
_Task: TypeAlias = tuple[Any, ...]
_Tasks: TypeAlias = "tuple[_Task, _Tasks] | None"
_Events: TypeAlias = "tuple[tuple[str, int], _Events] | None"


class _TreeBuilder:
    """Enumerate cycle-free parse trees from a table of derivable spans.

    Partial derivations are explored depth first on an explicit stack, rules in
    declared order and split points left to right, so deep trees never touch the
    interpreter's recursion limit.
    """

    def __init__(
        self,
        g: Grammar,
        tokens: tuple[str, ...],
        derivable: Callable[[str, int, int], bool],
        limits: ParseLimits,
    ) -> None:
        self._g = g
        self._tokens = tokens
        self._derivable = derivable
        self._limits = limits
        self._work = 0
        self._feasible: dict[tuple[tuple[str, ...], int, int, int], bool] = {}
        self.truncated = False

    def build(self) -> tuple[ParseTree, ...]:
        found: dict[ParseTree, None] = {}
        try:
            for tree in self._trees():
                if tree in found:
                    continue
                if len(found) == self._limits.max_trees:
                    self.truncated = True
                    break
                found[tree] = None
        except _OutOfBudget:
            self.truncated = True
        return tuple(found)

    def _tick(self) -> None:
        self._work += 1
        if self._work > self._limits.max_items:
            raise _OutOfBudget

    def _matches(self, symbol: str, i: int, j: int) -> bool:
        if symbol in self._g.terminals:
            return j == i + 1 and self._tokens[i] == symbol
        return self._derivable(symbol, i, j)

    def _can_cover(self, rhs: tuple[str, ...], k: int, i: int, j: int) -> bool:
        key = (rhs, k, i, j)
        if key not in self._feasible:
            reach = {i}
            for symbol in rhs[k:]:
                reach = {m for p in reach for m in range(p, j + 1) if self._matches(symbol, p, m)}
                if not reach:
                    break
            self._feasible[key] = j in reach
        return self._feasible[key]

    def _expand(self, task: _Task, rest: _Tasks, events: _Events) -> list[tuple[_Tasks, _Events]]:
        """Successor states of the first pending task, in enumeration order."""
        g = self._g
        if task[0] == "tree":
            _, symbol, i, j, active = task
            if symbol in g.terminals:
                if j == i + 1 and self._tokens[i] == symbol:
                    return [(rest, ((symbol, 0), events))]
                return []
            if not self._derivable(symbol, i, j):
                return []
            if (symbol, i, j) in active:
                # a derivable span inside itself: infinitely many trees exist
                self.truncated = True
                return []
            active = active | {(symbol, i, j)}
            successors: list[tuple[_Tasks, _Events]] = []
            for rule in g.by_lhs.get(symbol, ()):
                self._tick()
                if not rule.rhs:
                    if i == j:
                        successors.append((rest, ((EPSILON, 0), ((symbol, 1), events))))
                    continue
                sequence = ("sequence", rule.rhs, 0, i, j, active)
                successors.append(((sequence, rest), ((symbol, len(rule.rhs)), events)))
            return successors

        _, rhs, k, i, j, active = task
        if k == len(rhs):
            return [(rest, events)] if i == j else []
        splits = (i + 1,) if rhs[k] in g.terminals else range(i, j + 1)
        return [
            (
                (("tree", rhs[k], i, m, active), (("sequence", rhs, k + 1, m, j, active), rest)),
                events,
            )
            for m in splits
            if m <= j and self._matches(rhs[k], i, m) and self._can_cover(rhs, k + 1, m, j)
        ]

    def _trees(self) -> Iterator[ParseTree]:
        root: _Task = ("tree", self._g.start, 0, len(self._tokens), frozenset())
        stack: list[tuple[_Tasks, _Events]] = [((root, None), None)]
        while stack:
            tasks, events = stack.pop()
            if tasks is None:
                yield _assemble(_unwind(events))
                continue
            task, rest = tasks
            stack.extend(reversed(self._expand(task, rest, events)))


def _unwind(events: _Events) -> Iterator[tuple[str, int]]:
    while events is not None:
        event, events = events
        yield event


def _earley_spans(g: Grammar, tokens: tuple[str, ...], limits: ParseLimits) -> set[Span]:
    """Recognize with an Earley chart; return the completed (lhs, start, end) spans."""
    rules = g.rules
    starts: dict[str, list[int]] = defaultdict(list)
    for index, rule in enumerate(rules):
        starts[rule.lhs[0]].append(index)

    n = len(tokens)
    charts: list[set[_Item]] = [set() for _ in range(n + 1)]
    agendas: list[list[_Item]] = [[] for _ in range(n + 1)]
    waiting: list[dict[str, list[_Item]]] = [defaultdict(list) for _ in range(n + 1)]
    completed: set[Span] = set()
    count = 0

    def add(k: int, item: _Item) -> None:
        nonlocal count
        if item in charts[k]:
            return
        count += 1
        if count > limits.max_items:
            raise _OutOfBudget
        charts[k].add(item)
        agendas[k].append(item)

    for index in starts.get(g.start, ()):
        add(0, (index, 0, 0))

    for k in range(n + 1):
        agenda = agendas[k]
        while agenda:
            index, dot, origin = agenda.pop()
            rhs = rules[index].rhs
            if dot == len(rhs):
                lhs = rules[index].lhs[0]
                completed.add((lhs, origin, k))
                for r, d, o in tuple(waiting[origin].get(lhs, ())):
                    add(k, (r, d + 1, o))
                continue
            symbol = rhs[dot]
            if symbol in g.nonterminals:
                waiting[k][symbol].append((index, dot, origin))
                for predicted in starts.get(symbol, ()):
                    add(k, (predicted, 0, k))
                if symbol in g.nullable:
                    add(k, (index, dot + 1, origin))
            elif k < n and tokens[k] == symbol:
                add(k + 1, (index, dot + 1, origin))
    _LOGGER.debug("Earley chart for %d tokens holds %d items", n, count)
    return completed


def _reduction_spans(g: Grammar, tokens: tuple[str, ...], limits: ParseLimits) -> set[Span]:
    """Collapse substrings into left-hand sides, shortest spans first."""
    n = len(tokens)
    derived: set[Span] = set()
    work = 0

    def collapses(rhs: tuple[str, ...], i: int, j: int) -> bool:
        reach = {i}
        for symbol in rhs:
            nxt: set[int] = set()
            for p in reach:
                if symbol in g.terminals:
                    if p < j and tokens[p] == symbol:
                        nxt.add(p + 1)
                else:
                    nxt.update(m for m in range(p, j + 1) if (symbol, p, m) in derived)
            if not nxt:
                return False
            reach = nxt
        return j in reach

    for length in range(n + 1):
        for i in range(n - length + 1):
            j = i + length
            changed = True
            while changed:
                changed = False
                for rule in g.rules:
                    lhs = rule.lhs[0]
                    if (lhs, i, j) in derived:
                        continue
                    work += 1
                    if work > limits.max_items:
                        raise _OutOfBudget
                    if collapses(rule.rhs, i, j):
                        derived.add((lhs, i, j))
                        changed = True
    _LOGGER.debug("Reduction table for %d tokens holds %d spans", n, len(derived))
    return derived


def _parse(
    g: Grammar,
    text: str | Sequence[str],
    limits: ParseLimits | None,
    recognize: Callable[[Grammar, tuple[str, ...], ParseLimits], set[Span]],
) -> ParseForest:
    _require_context_free(g)
    limits = limits or ParseLimits()
    tokens = g.tokenize(text)
    if any(t not in g.terminals for t in tokens):
        _LOGGER.debug("Input %r has symbols outside V_T", tokens)
        return ParseForest(tokens, ())
    try:
        spans = recognize(g, tokens, limits)
    except _OutOfBudget:
        return ParseForest(tokens, (), truncated=True)
    builder = _TreeBuilder(g, tokens, lambda s, i, j: (s, i, j) in spans, limits)
    trees = builder.build()
    return ParseForest(tokens, trees, builder.truncated)


def parse_top_down(
    g: Grammar, text: str | Sequence[str], limits: ParseLimits | None = None
) -> ParseForest:
    """Parse from the root towards the leaves (Earley chart, then tree extraction).

    Args:
        g: Context-free grammar.
        text: Input string, or a sequence of terminal symbols.
        limits: Bounds on trees returned and chart items.

    Returns:
        Every distinct parse tree up to ``limits.max_trees``; ``truncated`` is set
        when a bound fired.

    Raises:
        NotContextFree: If the grammar is not context-free.
    """
    return _parse(g, text, limits, _earley_spans)


def parse_bottom_up(
    g: Grammar, text: str | Sequence[str], limits: ParseLimits | None = None
) -> ParseForest:
    """Parse by collapsing substrings of the input towards the start symbol.

    Same contract as :func:`parse_top_down`.
    """
    return _parse(g, text, limits, _reduction_spans)


# -----------------------------------------------------------------------------
# Stochastic grammars
# -----------------------------------------------------------------------------


class _TooDeep(Exception):
    pass


def _choose(rules: tuple[Rule, ...], u: float) -> Rule:
    cumulative = 0.0
    for rule in rules:
        cumulative += rule.probability or 0.0
        if u < cumulative:
            return rule
    return rules[-1]


def _derive(g: Grammar, rng: np.random.Generator, max_depth: int) -> tuple[ParseTree, float]:
    probability = 1.0
    events: list[tuple[str, int]] = []
    # leftmost expansion: symbols are popped in preorder
    stack = [(g.start, 1)]
    while stack:
        symbol, depth = stack.pop()
        if depth > max_depth:
            raise _TooDeep
        if symbol in g.terminals:
            events.append((symbol, 0))
            continue
        rules = g.by_lhs.get(symbol)
        if not rules:
            raise NotNormalized(f"nonterminal {symbol!r} has no rules")
        rule = _choose(rules, float(rng.random()))
        probability *= rule.probability or 0.0
        if not rule.rhs:
            if depth + 1 > max_depth:
                raise _TooDeep
            events += [(symbol, 1), (EPSILON, 0)]
            continue
        events.append((symbol, len(rule.rhs)))
        stack.extend((s, depth + 1) for s in reversed(rule.rhs))
    return _assemble(reversed(events)), probability


def _draw(g: Grammar, rng: np.random.Generator, max_depth: int) -> Sample:
    for _ in range(RESAMPLE_ATTEMPTS):
        try:
            tree, probability = _derive(g, rng, max_depth)
        except _TooDeep:
            continue
        return Sample(g.join(tree.frontier()), tree, probability)
    raise DepthExceeded(f"{RESAMPLE_ATTEMPTS} attempts all exceeded depth {max_depth}")


def sample(g: Grammar, seed: int, max_depth: int = 100) -> Sample:
    """Sample a leftmost derivation of a stochastic grammar.

    Rules are chosen by cumulative-probability inversion in declared order.

    Args:
        g: Normalized stochastic context-free grammar.
        seed: Seed of the random stream; equal seeds give equal samples.
        max_depth: Largest tree depth accepted before resampling.

    Returns:
        The sampled string, its tree, and the product of the chosen rule probabilities.

    Raises:
        NotNormalized: If rule probabilities of a nonterminal do not sum to 1.
        DepthExceeded: If every resample attempt exceeds ``max_depth``.
    """
    _require_normalized(g)
    return _draw(g, np.random.default_rng(seed), max_depth)


def sample_many(g: Grammar, count: int, seed: int, max_depth: int = 100) -> dict[str, int]:
    """Draw ``count`` samples from one seeded stream and count the strings."""
    _require_normalized(g)
    rng = np.random.default_rng(seed)
    counts: dict[str, int] = defaultdict(int)
    for _ in range(count):
        counts[_draw(g, rng, max_depth).string] += 1
    return dict(counts)


def tree_probability(g: Grammar, tree: ParseTree) -> float:
    """Product of the probabilities of the rules used in ``tree``."""
    probabilities = g.rule_probabilities
    result = 1.0
    for production in tree.productions():
        result *= probabilities[production]
    return result


def string_probability(
    g: Grammar, text: str | Sequence[str], limits: ParseLimits | None = None
) -> float:
    """Sum of derivation probabilities over all parse trees of ``text``.

    Raises:
        NotNormalized: If the grammar is not a normalized stochastic grammar.
        LimitExceeded: If the forest was truncated, so the sum would be a lower bound.
    """
    _require_normalized(g)
    forest = parse_top_down(g, text, limits)
    if forest.truncated:
        raise LimitExceeded(f"parse forest of {g.join(forest.input)!r} was truncated")
    return math.fsum(tree_probability(g, tree) for tree in forest.trees)


# -----------------------------------------------------------------------------
# Enumeration
# -----------------------------------------------------------------------------


def enumerate_language(
    g: Grammar, max_len: int = 10, max_count: int = 10_000, max_forms: int = 200_000
) -> LanguageEnumeration:
    """Enumerate the distinct strings derivable within bounds.

    Context-free grammars expand the leftmost nonterminal, so each derivation is
    counted once and stochastic grammars get summed string probabilities. Other
    grammars rewrite every occurrence of every left-hand side and report no
    probabilities.

    Args:
        g: A valid grammar.
        max_len: Longest string (in terminals) to keep.
        max_count: Most distinct strings to return.
        max_forms: Most sentential forms to expand.

    Returns:
        Strings in sorted order; ``truncated`` is set when any bound fired.
    """
    if classify(g) is GrammarClass.CONTEXT_FREE:
        return _enumerate_leftmost(g, max_len, max_count, max_forms)
    return _enumerate_rewrites(g, max_len, max_count, max_forms)


def _enumerate_leftmost(
    g: Grammar, max_len: int, max_count: int, max_forms: int
) -> LanguageEnumeration:
    stochastic = g.is_stochastic
    found: dict[str, float] = defaultdict(float)
    queue: deque[tuple[tuple[str, ...], float]] = deque([((g.start,), 1.0)])
    truncated = False
    expanded = 0
    while queue:
        form, probability = queue.popleft()
        position = next((i for i, s in enumerate(form) if s in g.nonterminals), None)
        if position is None:
            text = g.join(form)
            if text not in found and len(found) == max_count:
                truncated = True
                break
            found[text] += probability
            continue
        expanded += 1
        if expanded > max_forms:
            truncated = True
            break
        for rule in g.by_lhs.get(form[position], ()):
            successor = form[:position] + rule.rhs + form[position + 1 :]
            if sum(1 for s in successor if s in g.terminals) > max_len:
                truncated = True
                continue
            queue.append((successor, probability * (rule.probability or 1.0)))
    entries = tuple(
        (text, found[text] if stochastic else None) for text in sorted(found)
    )
    return LanguageEnumeration(entries, truncated)


def _enumerate_rewrites(
    g: Grammar, max_len: int, max_count: int, max_forms: int
) -> LanguageEnumeration:
    found: set[str] = set()
    start = (g.start,)
    seen = {start}
    queue: deque[tuple[str, ...]] = deque([start])
    truncated = False
    limit = 2 * max_len + 2
    while queue:
        form = queue.popleft()
        if all(s in g.terminals for s in form):
            if len(form) <= max_len:
                if len(found) == max_count:
                    truncated = True
                    break
                found.add(g.join(form))
            continue
        if len(seen) > max_forms:
            truncated = True
            break
        for rule in g.rules:
            width = len(rule.lhs)
            for at in range(len(form) - width + 1):
                if form[at : at + width] != rule.lhs:
                    continue
                successor = form[:at] + rule.rhs + form[at + width :]
                if len(successor) > limit:
                    truncated = True
                    continue
                if successor not in seen:
                    seen.add(successor)
                    queue.append(successor)
    return LanguageEnumeration(tuple((text, None) for text in sorted(found)), truncated)


# -----------------------------------------------------------------------------
# Text format
# -----------------------------------------------------------------------------

_GRAMMAR_SYNTAX = r"""
    start: _NL? (_line _NL)*
    _line: terminals_header | start_header | rule
    terminals_header: "%terminals" symbol+
    start_header: "%start" symbol
    rule: PROB? symbol+ "->" alternative ("|" alternative)*
    alternative: symbol+ | EPS
    symbol: NAME | QUOTED

    PROB.2: /\d+(\.\d*)?([eE][-+]?\d+)?/
    NAME: /[A-Za-z_][A-Za-z0-9_']*/
    QUOTED: /'[^'\n]*'/ | /"[^"\n]*"/
    EPS: "ε" | "eps"
    _NL: /(\r?\n[\t ]*(#[^\n]*)?)+/

    COMMENT: /#[^\n]*/
    %ignore COMMENT
    %ignore /[\t ]+/
"""

_grammar_parser = Lark(_GRAMMAR_SYNTAX, parser="lalr", propagate_positions=True)


def _symbol(node: Tree[Token], quoted: set[str]) -> str:
    token = node.children[0]
    assert isinstance(token, Token)
    if token.type == "QUOTED":
        text = token.value[1:-1]
        quoted.add(text)
        return text
    return token.value


def load_grammar(text: str) -> Grammar:
    """Parse grammar text: one rule per line, ``|`` alternatives, optional leading probability.

    ``%terminals`` declares terminal symbols and ``%start`` the start symbol;
    quoted symbols are always terminals. Without a ``%terminals`` header, symbols
    that never occur on a left-hand side are terminals.

    Raises:
        GrammarSyntaxError: If the text is not well formed.
        InvalidGrammar: If the resulting grammar violates an invariant.
    """
    if not text.endswith("\n"):
        text += "\n"
    try:
        tree = _grammar_parser.parse(text)
    except UnexpectedInput as err:
        raise GrammarSyntaxError(
            f"{err.line}:{err.column}: unexpected input in grammar text"
        ) from err

    quoted: set[str] = set()
    declared: set[str] | None = None
    start: str | None = None
    rules: list[Rule] = []
    for line in tree.children:
        assert isinstance(line, Tree)
        if line.data == "terminals_header":
            declared = (declared or set()) | {
                _symbol(c, quoted) for c in line.children if isinstance(c, Tree)
            }
        elif line.data == "start_header":
            head = line.children[0]
            assert isinstance(head, Tree)
            start = _symbol(head, quoted)
        else:
            probability: float | None = None
            if isinstance(line.children[0], Token):
                probability = float(line.children[0])
            parts = [p for p in line.children if isinstance(p, Tree)]
            lhs = tuple(_symbol(p, quoted) for p in parts if p.data == "symbol")
            alternatives = [p for p in parts if p.data == "alternative"]
            if probability is not None and len(alternatives) > 1:
                raise GrammarSyntaxError(
                    f"{line.meta.line}:{line.meta.column}: "
                    "a leading probability needs a single alternative"
                )
            for alternative in alternatives:
                rhs = tuple(
                    _symbol(c, quoted) for c in alternative.children if isinstance(c, Tree)
                )
                rules.append(Rule(lhs, rhs, probability))

    terminals: set[str] | None
    if declared is None:
        heads = {s for rule in rules for s in rule.lhs}
        symbols = {s for rule in rules for s in (*rule.lhs, *rule.rhs)}
        terminals = (symbols - heads) | quoted
    else:
        terminals = declared | quoted
    return Grammar.build(rules, terminals, start)


def _render_symbol(symbol: str) -> str:
    return symbol if _IDENTIFIER.fullmatch(symbol) else f"'{symbol}'"


def render_grammar(g: Grammar) -> str:
    """Render a grammar in the text format accepted by :func:`load_grammar`."""
    lines = []
    if g.terminals:
        lines.append("%terminals " + " ".join(_render_symbol(t) for t in sorted(g.terminals)))
    lines.append(f"%start {_render_symbol(g.start)}")
    for rule in g.rules:
        rhs = " ".join(_render_symbol(s) for s in rule.rhs) or EPSILON
        text = f"{' '.join(_render_symbol(s) for s in rule.lhs)} -> {rhs}"
        if rule.probability is not None:
            text = f"{rule.probability!r} {text}"
        lines.append(text)
    return "\n".join(lines) + "\n"
