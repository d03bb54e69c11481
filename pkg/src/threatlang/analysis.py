"""Analyses over attack graphs: reachability, critical paths and defense selection."""

from __future__ import annotations

import logging
from collections import Counter, deque
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .engine import (
    StepSummary,
    backtrack,
    defense_flags,
    label_setting,
    local_vector,
    monte_carlo,
    summarize,
)
from .exceptions import GraphError, NoCut, NoEntry, Unreachable, UnknownStep
from .graph import AttackGraph, BoolArray, GraphIndex

_LOGGER = logging.getLogger(__name__)

MAX_EXACT_DEFENSES = 20


def _position(g: AttackGraph, step: str) -> int:
    try:
        return g.index.position[step]
    except KeyError:
        raise UnknownStep(f"graph has no step {step!r}") from None


def _reach_mask(index: GraphIndex, blocked: BoolArray) -> bytearray:
    ptr, kids = index.adjacency
    entry = index.entry.tolist()
    is_and = index.is_and.tolist()
    closed = blocked.tolist()
    waiting = index.indegree.tolist()
    reached = bytearray(index.size)
    queue = deque(i for i in np.flatnonzero(index.entry).tolist() if not closed[i])
    for i in queue:
        reached[i] = 1
    while queue:
        u = queue.popleft()
        for v in kids[ptr[u] : ptr[u + 1]]:
            if reached[v] or closed[v] or entry[v]:
                continue
            if is_and[v]:
                waiting[v] -= 1
                if waiting[v]:
                    continue
            reached[v] = 1
            queue.append(v)
    return reached


def _flags(index: GraphIndex, enabled: Iterable[str]) -> BoolArray:
    flags = np.zeros(len(index.defense_ids), dtype=np.bool_)
    for defense_id in enabled:
        flags[index.defense_ids.index(defense_id)] = True
    return flags


def reachable_steps(g: AttackGraph, enabled: Iterable[str] | None = None) -> frozenset[str]:
    """Steps an attacker can reach, ignoring time.

    An OR step needs one reached parent, an AND step all of them; protected steps
    are never reached.

    Args:
        g: Attack graph.
        enabled: Defense ids enabled; exactly these when given, otherwise the
            graph's fixed flags.
    """
    index = g.index
    flags = index.defense_enabled if enabled is None else _flags(index, enabled)
    reached = _reach_mask(index, index.blocked_mask(flags))
    return frozenset(index.ids[i] for i, hit in enumerate(reached) if hit)


@dataclass(frozen=True)
class CriticalPath:
    steps: tuple[str, ...]
    cost: float


def critical_path(
    g: AttackGraph,
    target: str,
    locals_: Mapping[str, float] | None = None,
    defenses: Mapping[str, bool] | None = None,
) -> CriticalPath:
    """Cheapest attack path to ``target`` for fixed local TTCs.

    Args:
        g: Attack graph.
        target: Step id.
        locals_: Local TTC per step; distribution means by default.
        defenses: Defense assignment over the graph's fixed flags.

    Raises:
        Unreachable: If the target's global TTC is infinite.
    """
    index = g.index
    position = _position(g, target)
    if not index.entry.any():
        raise NoEntry("graph has no entry steps")
    if locals_ is None:
        locals_ = {s.id: s.ttc.mean for s in g.steps}
    local = local_vector(g, locals_)
    local[index.blocked_mask(defense_flags(g, defenses))] = np.inf
    totals, rank = label_setting(index, local)
    path = backtrack(index, totals, rank, position)
    if path is None:
        raise Unreachable(f"{target} is unreachable")
    return CriticalPath(tuple(index.ids[i] for i in path), float(totals[position]))


def critical_steps(
    g: AttackGraph, target: str, trials: int, seed: int, workers: int = 1
) -> list[tuple[str, float]]:
    """Steps ranked by how often they lie on a trial's critical path to ``target``.

    Raises:
        Unreachable: If no trial reaches the target.
    """
    _position(g, target)
    report = monte_carlo(g, trials, seed, record=[target], workers=workers, path_targets=[target])
    paths = report.critical_paths[target]
    hits: Counter[str] = Counter()
    for path in paths:
        if path is not None:
            hits.update(path)
    if not hits:
        raise Unreachable(f"{target} is unreachable in all {trials} trials")
    ranking = [(s.id, hits[s.id] / trials) for s in g.steps]
    return sorted(ranking, key=lambda item: (-item[1], item[0]))


def _ancestors(index: GraphIndex, target: int) -> BoolArray:
    seen = np.zeros(index.size, dtype=np.bool_)
    seen[target] = True
    queue = deque([target])
    while queue:
        for parent in index.parents(queue.popleft()).tolist():
            if not seen[parent]:
                seen[parent] = True
                queue.append(parent)
    return seen


def min_defense_cut(g: AttackGraph, target: str, mode: str = "exact") -> frozenset[str]:
    """Smallest set of defenses whose enabling makes ``target`` unreachable.

    Reachability is evaluated with exactly the returned defenses enabled. Exact
    mode returns a minimum-cardinality set, the lexicographically smallest among
    ties. Greedy mode is a heuristic: each round it recomputes the critical path
    under mean local TTCs and enables a defense that alone cuts the target or,
    failing that, the one disconnecting the most critical paths found so far
    that are still live, breaking ties by the number of steps it makes
    unreachable. Redundant defenses are dropped at the end; the result is
    valid but may not be minimal.

    Raises:
        NoCut: If the target stays reachable with every defense enabled.
        GraphError: For an unknown mode, or exact mode over more than 20 relevant
            defenses.
    """
    if mode not in ("exact", "greedy"):
        raise GraphError(f"unknown cut mode {mode!r}")
    index = g.index
    position = _position(g, target)
    # only defenses guarding an ancestor of the target can matter
    upstream = _ancestors(index, position)
    relevant = [
        k for k in range(len(index.defense_ids)) if upstream[index.protected(k)].any()
    ]

    def blocked(chosen: Iterable[int]) -> BoolArray:
        flags = np.zeros(len(index.defense_ids), dtype=np.bool_)
        flags[list(chosen)] = True
        return index.blocked_mask(flags)

    def reached(chosen: Iterable[int]) -> bytearray:
        return _reach_mask(index, blocked(chosen))

    if reached(relevant)[position]:
        raise NoCut(f"{target} stays reachable with every defense enabled")
    if not reached(())[position]:
        return frozenset()

    if mode == "exact":
        if len(relevant) > MAX_EXACT_DEFENSES:
            raise GraphError(
                f"exact cut supports at most {MAX_EXACT_DEFENSES} defenses, "
                f"{len(relevant)} guard {target}"
            )
        for size in range(1, len(relevant) + 1):
            for combo in combinations(relevant, size):
                if not reached(combo)[position]:
                    _LOGGER.debug("Exact cut of size %d for %s", size, target)
                    return frozenset(index.defense_ids[k] for k in combo)
        raise NoCut(f"{target} stays reachable with every defense enabled")

    mean_local = local_vector(g, {s.id: s.ttc.mean for s in g.steps})
    chosen: list[int] = []
    paths: list[frozenset[int]] = []
    current = reached(chosen)
    while current[position]:
        closed = blocked(chosen)
        local = mean_local.copy()
        local[closed] = np.inf
        totals, rank = label_setting(index, local)
        path = backtrack(index, totals, rank, position)
        if path is not None and frozenset(path) not in paths:
            paths.append(frozenset(path))
        # critical paths seen so far that no chosen defense has disconnected
        live = [p for p in paths if not closed[list(p)].any()]
        best, best_score = -1, (-1, -1)
        for k in relevant:
            if k in chosen:
                continue
            trial = reached([*chosen, k])
            if not trial[position]:
                best = k
                break
            guarded = set(index.protected(k).tolist())
            score = (sum(1 for p in live if p & guarded), sum(current) - sum(trial))
            if score > best_score:
                best, best_score = k, score
        chosen.append(best)
        current = reached(chosen)
    for k in reversed(list(chosen)):
        rest = [c for c in chosen if c != k]
        if not reached(rest)[position]:
            chosen = rest
    _LOGGER.debug("Greedy cut of size %d for %s", len(chosen), target)
    return frozenset(index.defense_ids[k] for k in chosen)


@dataclass(frozen=True)
class DefenseEvaluation:
    """Target summary with one defense forced on; ``defense`` is None for the baseline."""

    defense: str | None
    summary: StepSummary


def evaluate_defenses(
    g: AttackGraph,
    target: str,
    candidates: Iterable[str] | None = None,
    trials: int = 1000,
    seed: int = 0,
    horizon: float | None = None,
    workers: int = 1,
) -> list[DefenseEvaluation]:
    """Compare remedial actions on common random numbers.

    Runs the baseline and one simulation per candidate defense forced on, all
    with the same seed.

    Returns:
        The baseline first, then candidates by increasing reach fraction and id.
    """
    _position(g, target)
    if candidates is None:
        candidates = [d.id for d in g.defenses if not d.enabled]

    def run(overrides: Mapping[str, bool]) -> StepSummary:
        report = monte_carlo(
            g, trials, seed, overrides, record=[target], workers=workers, path_targets=()
        )
        return summarize(report, target, horizon)

    baseline = DefenseEvaluation(None, run({}))
    rows = [DefenseEvaluation(d, run({d: True})) for d in candidates]
    rows.sort(key=lambda row: (row.summary.reach_fraction, row.defense or ""))
    return [baseline, *rows]
