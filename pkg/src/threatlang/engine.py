"""Time-to-compromise propagation, Monte Carlo simulation and summaries.

Global TTC follows the attacker-progress rules: an entry costs its own local
TTC, an OR step costs the cheapest parent plus its local TTC, an AND step the
most expensive parent plus its local TTC. Steps behind an enabled defense, or
whose requirements never complete, are unreachable (infinite TTC).
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from bisect import bisect_right
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from joblib import Parallel, delayed

from .distributions import format_number
from .exceptions import (
    InvalidTrials,
    MissingLocal,
    NegativeLocal,
    NoAnnotatedTargets,
    NoEntry,
    SimulationError,
    UnknownStep,
)
from .graph import AttackGraph, BoolArray, FloatArray, GraphIndex, IntArray

_LOGGER = logging.getLogger(__name__)

RNG_MIXER = "numpy.random.SeedSequence(entropy=master_seed, spawn_key=(trial,)) -> PCG64"
MAX_SEED = 2**64 - 1
MAX_BLOCK = 256
# upper bound on floats held by one block's local/global matrices
BLOCK_CELLS = 2**23
LIKELIHOOD_EDGES = (0.2, 0.4, 0.6, 0.8)
SUMMARY_COLUMNS = ("step", "mean", "reach_fraction", "p05", "p50", "p95")

Path = tuple[str, ...]


# -----------------------------------------------------------------------------
# Propagation
# -----------------------------------------------------------------------------


def label_setting(index: GraphIndex, local: FloatArray) -> tuple[FloatArray, IntArray]:
    """Priority-queue sweep for one vector of locals.

    Returns:
        Global TTC per step and each step's finalization rank (-1 if never).
    """
    ptr, kids = index.adjacency
    entry = index.entry.tolist()
    is_and = index.is_and.tolist()
    lv = local.tolist()
    n = index.size
    totals = [math.inf] * n
    best = [math.inf] * n
    waiting = index.indegree.tolist()
    slowest = [0.0] * n
    rank = [-1] * n
    finalized = 0

    heap = [(lv[e], e) for e in np.flatnonzero(index.entry).tolist() if lv[e] < math.inf]
    heapq.heapify(heap)
    while heap:
        t, u = heapq.heappop(heap)
        if rank[u] >= 0:
            continue
        rank[u] = finalized
        finalized += 1
        totals[u] = t
        for v in kids[ptr[u] : ptr[u + 1]]:
            if rank[v] >= 0 or entry[v] or lv[v] == math.inf:
                continue
            if is_and[v]:
                waiting[v] -= 1
                slowest[v] = max(slowest[v], t)
                if waiting[v] == 0:
                    heapq.heappush(heap, (slowest[v] + lv[v], v))
            else:
                cost = t + lv[v]
                if cost < best[v]:
                    best[v] = cost
                    heapq.heappush(heap, (cost, v))
    return np.array(totals), np.array(rank, dtype=np.int64)


def sweep(index: GraphIndex, local: FloatArray) -> FloatArray:
    """Level-by-level propagation of a (trials, steps) block on an acyclic graph."""
    totals = np.full(local.shape, np.inf)
    entries = np.flatnonzero(index.entry)
    totals[:, entries] = local[:, entries]
    for level in index.levels:
        if level.or_nodes.size:
            cheapest = np.minimum.reduceat(totals[:, level.or_parents], level.or_starts, axis=1)
            totals[:, level.or_nodes] = cheapest + local[:, level.or_nodes]
        if level.and_nodes.size:
            slowest = np.maximum.reduceat(totals[:, level.and_parents], level.and_starts, axis=1)
            totals[:, level.and_nodes] = slowest + local[:, level.and_nodes]
    return totals


def defense_flags(g: AttackGraph, assignment: Mapping[str, bool] | None) -> BoolArray:
    unknown = sorted(set(assignment or {}) - set(g.defense_map))
    if unknown:
        raise SimulationError(f"unknown defenses: {', '.join(unknown)}")
    return g.index.defense_vector(assignment)


def local_vector(g: AttackGraph, locals_: Mapping[str, float]) -> FloatArray:
    index = g.index
    unknown = sorted(set(locals_) - set(index.position))
    if unknown:
        raise UnknownStep(f"locals name unknown steps: {', '.join(unknown[:5])}")
    local = np.empty(index.size)
    for i, step_id in enumerate(index.ids):
        if step_id not in locals_:
            raise MissingLocal(f"no local TTC for {step_id}")
        value = float(locals_[step_id])
        if not value >= 0.0:
            raise NegativeLocal(f"local TTC of {step_id} is {value}")
        local[i] = value
    return local


def propagate(
    g: AttackGraph,
    locals_: Mapping[str, float],
    defenses: Mapping[str, bool] | None = None,
) -> dict[str, float]:
    """Global TTC of every step for fixed local TTCs.

    Args:
        g: Attack graph.
        locals_: Local TTC per step id; ``math.inf`` is allowed.
        defenses: Enablement per defense id; unlisted defenses keep the graph's
            fixed ``enabled`` flag.

    Raises:
        MissingLocal: If a step has no local value.
        NegativeLocal: If a local value is negative or NaN.
    """
    index = g.index
    local = local_vector(g, locals_)
    local[index.blocked_mask(defense_flags(g, defenses))] = np.inf
    totals, _ = label_setting(index, local)
    return dict(zip(index.ids, totals.tolist(), strict=True))


def backtrack(
    index: GraphIndex, totals: FloatArray, order: IntArray, target: int
) -> tuple[int, ...] | None:
    """Critical path to ``target``, entry first, or None if it is unreachable.

    OR steps follow the cheapest parent and AND steps the most expensive one;
    only parents finalized before the step are considered and ties go to the
    smallest id.
    """
    if not math.isfinite(totals[target]):
        return None
    path = [target]
    node = target
    while not index.entry[node]:
        parents = index.parents(node)
        parents = parents[(order[parents] < order[node]) & np.isfinite(totals[parents])]
        if not parents.size:
            break
        values = totals[parents]
        pick = np.argmax(values) if index.is_and[node] else np.argmin(values)
        node = int(parents[pick])
        path.append(node)
    return tuple(reversed(path))


# -----------------------------------------------------------------------------
# Monte Carlo
# -----------------------------------------------------------------------------


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Independent stream of one trial."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(trial,)))


def block_size(steps: int) -> int:
    """Trials per work unit; depends on the graph size only."""
    return max(1, min(MAX_BLOCK, BLOCK_CELLS // max(steps, 1)))


def _draw_locals(
    index: GraphIndex,
    rng: np.random.Generator,
    override_idx: IntArray,
    override_val: BoolArray,
) -> FloatArray:
    enabled = index.defense_enabled.copy()
    if index.random_defenses.size:
        enabled[index.random_defenses] = rng.random(index.random_defenses.size) < index.enablement
    enabled[override_idx] = override_val
    local = index.base_local.copy()
    for dist, idx in index.groups:
        local[idx] = dist.sample(rng, idx.size)
    local[index.blocked_mask(enabled)] = np.inf
    return local


def _simulate_block(
    index: GraphIndex,
    start: int,
    stop: int,
    master_seed: int,
    override_idx: IntArray,
    override_val: BoolArray,
    record_idx: IntArray,
    target_idx: Sequence[int],
) -> tuple[FloatArray, list[list[tuple[int, ...] | None]]]:
    local = np.vstack(
        [
            _draw_locals(index, trial_rng(master_seed, trial), override_idx, override_val)
            for trial in range(start, stop)
        ]
    )
    if index.acyclic:
        totals = sweep(index, local)
        orders = [index.level] * len(local)
    else:
        swept = [label_setting(index, row) for row in local]
        totals = np.vstack([t for t, _ in swept])
        orders = [rank for _, rank in swept]
    paths = [
        [backtrack(index, totals[row], orders[row], t) for t in target_idx]
        for row in range(len(local))
    ]
    return totals[:, record_idx], paths


@dataclass(frozen=True, eq=False)
class SimulationReport:
    """Samples of a Monte Carlo run.

    ``samples[i, j]`` is the global TTC of ``steps[j]`` in trial ``i``.
    ``critical_paths[target][i]`` is the trial's critical path or None.
    """

    fingerprint: str
    trials: int
    master_seed: int
    steps: tuple[str, ...]
    samples: FloatArray
    targets: tuple[str, ...] = ()
    impacts: Mapping[str, int] = field(default_factory=dict)
    critical_paths: Mapping[str, tuple[Path | None, ...]] = field(default_factory=dict)
    rng_mixer: str = RNG_MIXER

    def column(self, step: str) -> FloatArray:
        try:
            return self.samples[:, self.steps.index(step)]
        except ValueError:
            raise UnknownStep(f"step {step!r} is not recorded in the report") from None

    def to_document(self) -> dict[str, Any]:
        return {
            "fingerprint": self.fingerprint,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "rng_mixer": self.rng_mixer,
            "targets": list(self.targets),
            "impacts": dict(self.impacts),
            "samples": {
                step: [v if math.isfinite(v) else "inf" for v in self.samples[:, j].tolist()]
                for j, step in enumerate(self.steps)
            },
            "critical_paths": {
                target: [list(p) if p is not None else None for p in paths]
                for target, paths in self.critical_paths.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> SimulationReport:
        try:
            doc = json.loads(text)
            samples = doc["samples"]
            steps = tuple(samples)
            matrix = np.array(
                [[math.inf if v == "inf" else float(v) for v in samples[s]] for s in steps],
                dtype=np.float64,
            ).reshape(len(steps), int(doc["trials"]))
            return cls(
                fingerprint=doc["fingerprint"],
                trials=int(doc["trials"]),
                master_seed=int(doc["master_seed"]),
                steps=steps,
                samples=np.ascontiguousarray(matrix.T),
                targets=tuple(doc.get("targets", ())),
                impacts={k: int(v) for k, v in doc.get("impacts", {}).items()},
                critical_paths={
                    t: tuple(tuple(p) if p is not None else None for p in paths)
                    for t, paths in doc.get("critical_paths", {}).items()
                },
                rng_mixer=doc.get("rng_mixer", RNG_MIXER),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise SimulationError(f"malformed simulation report: {err}") from err


def _path_ids(index: GraphIndex, path: tuple[int, ...] | None) -> Path | None:
    return None if path is None else tuple(index.ids[i] for i in path)


def monte_carlo(
    g: AttackGraph,
    trials: int,
    master_seed: int,
    defense_overrides: Mapping[str, bool] | None = None,
    record: Iterable[str] | None = None,
    workers: int = 1,
    path_targets: Iterable[str] | None = None,
) -> SimulationReport:
    """Run ``trials`` independent simulations.

    Each trial seeds its own generator from ``(master_seed, trial)``, draws the
    Bernoulli defense enablements in defense-id order, applies the overrides,
    samples the local TTCs and propagates them. The report depends only on the
    graph, ``trials`` and ``master_seed``; ``workers`` changes nothing but speed.

    Args:
        g: Attack graph with at least one entry step.
        trials: Number of trials, at least one.
        master_seed: 64-bit unsigned seed.
        defense_overrides: Defense ids forced on or off in every trial.
        record: Steps whose samples are kept; targets are always kept. All steps
            by default.
        workers: Parallel joblib workers.
        path_targets: Steps whose per-trial critical paths are kept; the graph's
            targets by default.

    Raises:
        InvalidTrials: If ``trials`` < 1.
        NoEntry: If the graph has no entry step.
        UnknownStep: If ``record`` or ``path_targets`` names an unknown step.
    """
    if trials < 1:
        raise InvalidTrials(f"trials must be >= 1, got {trials}")
    if not 0 <= master_seed <= MAX_SEED:
        raise SimulationError(f"master seed must be a 64-bit unsigned integer, got {master_seed}")
    index = g.index
    if not index.entry.any():
        raise NoEntry("graph has no entry steps")

    overrides = dict(defense_overrides or {})
    defense_flags(g, overrides)
    override_idx = np.array([index.defense_ids.index(d) for d in overrides], dtype=np.int64)
    override_val = np.array(list(overrides.values()), dtype=np.bool_)

    targets = g.targets if path_targets is None else tuple(path_targets)
    missing = sorted(set(targets) - set(index.position))
    if missing:
        raise UnknownStep(f"unknown target steps: {', '.join(missing[:5])}")
    if record is None:
        steps = index.ids
    else:
        wanted = set(record)
        unknown = sorted(wanted - set(index.position))
        if unknown:
            raise UnknownStep(f"cannot record unknown steps: {', '.join(unknown[:5])}")
        steps = tuple(sorted(wanted | set(targets)))
    record_idx = np.array([index.position[s] for s in steps], dtype=np.int64)
    target_idx = [index.position[t] for t in targets]

    size = block_size(index.size)
    bounds = [(start, min(start + size, trials)) for start in range(0, trials, size)]
    _LOGGER.debug(
        "Simulating %d trials in %d blocks of %d on %d workers", trials, len(bounds), size, workers
    )
    results = Parallel(n_jobs=workers)(
        delayed(_simulate_block)(
            index, start, stop, master_seed, override_idx, override_val, record_idx, target_idx
        )
        for start, stop in bounds
    )

    samples = np.vstack([block for block, _ in results])
    rows = [row for _, block_paths in results for row in block_paths]
    critical_paths = {
        target: tuple(_path_ids(index, row[k]) for row in rows) for k, target in enumerate(targets)
    }
    impacts = {s.id: s.impact for s in g.steps if s.target and s.impact is not None}
    return SimulationReport(
        fingerprint=g.fingerprint,
        trials=trials,
        master_seed=master_seed,
        steps=steps,
        samples=samples,
        targets=targets,
        impacts=impacts,
        critical_paths=critical_paths,
    )


# -----------------------------------------------------------------------------
# Summaries
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class StepSummary:
    """Distribution summary of one step; ``mean`` covers finite samples only."""

    step: str
    mean: float | None
    reach_fraction: float
    p05: float
    p50: float
    p95: float
    within_horizon: float | None = None


def summarize(report: SimulationReport, step: str, horizon: float | None = None) -> StepSummary:
    """Mean, reach fraction, percentiles and P(TTC <= horizon) of a step.

    Percentiles are taken over all samples with unreachable trials ordered last.

    Raises:
        UnknownStep: If the step is not recorded.
    """
    column = report.column(step)
    finite = column[np.isfinite(column)]
    p05, p50, p95 = np.quantile(column, [0.05, 0.5, 0.95], method="inverted_cdf").tolist()
    return StepSummary(
        step=step,
        mean=float(finite.mean()) if finite.size else None,
        reach_fraction=finite.size / column.size,
        p05=p05,
        p50=p50,
        p95=p95,
        within_horizon=None if horizon is None else float(np.mean(column <= horizon)),
    )


def _csv_number(value: float | None) -> str:
    if value is None:
        return ""
    return format_number(value) if math.isfinite(value) else "inf"


def summary_csv(report: SimulationReport, steps: Iterable[str] | None = None) -> str:
    """Summary table as CSV with the ``SUMMARY_COLUMNS`` header."""
    lines = [",".join(SUMMARY_COLUMNS)]
    for step in report.steps if steps is None else steps:
        s = summarize(report, step)
        lines.append(
            ",".join(
                [
                    step,
                    _csv_number(s.mean),
                    _csv_number(s.reach_fraction),
                    _csv_number(s.p05),
                    _csv_number(s.p50),
                    _csv_number(s.p95),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def likelihood_bucket(probability: float) -> int:
    """Bucket 1..5 of [0, .2), [.2, .4), [.4, .6), [.6, .8), [.8, 1]."""
    return bisect_right(LIKELIHOOD_EDGES, probability) + 1


@dataclass(frozen=True)
class RiskMatrix:
    """Targets placed by likelihood bucket (rows) and impact level (columns)."""

    horizon: float
    cells: Mapping[tuple[int, int], tuple[str, ...]]
    probabilities: Mapping[str, float]

    def cell_of(self, target: str) -> tuple[int, int]:
        for cell, ids in self.cells.items():
            if target in ids:
                return cell
        raise UnknownStep(f"{target} is not in the risk matrix")

    def render(self) -> str:
        width = max([len(", ".join(ids)) for ids in self.cells.values()] + [3])
        header = "likelihood\\impact | " + " | ".join(f"{i:<{width}}" for i in range(1, 6))
        lines = [f"risk matrix at horizon {format_number(self.horizon)}", header]
        for likelihood in range(5, 0, -1):
            row = [
                f"{', '.join(self.cells.get((likelihood, impact), ())) or '.':<{width}}"
                for impact in range(1, 6)
            ]
            lines.append(f"{likelihood:<17} | " + " | ".join(row))
        return "\n".join(lines) + "\n"

    def to_document(self) -> dict[str, Any]:
        return {
            "horizon": self.horizon,
            "cells": [
                {"likelihood": lk, "impact": im, "targets": list(ids)}
                for (lk, im), ids in sorted(self.cells.items())
            ],
            "probabilities": dict(self.probabilities),
        }


def risk_matrix(report: SimulationReport, horizon: float) -> RiskMatrix:
    """Place every impact-annotated target of the report.

    Raises:
        NoAnnotatedTargets: If no target carries an impact.
    """
    annotated = [t for t in report.targets if t in report.impacts]
    if not annotated:
        raise NoAnnotatedTargets("no target has an impact annotation")
    cells: dict[tuple[int, int], list[str]] = {}
    probabilities: dict[str, float] = {}
    for target in annotated:
        probability = float(np.mean(report.column(target) <= horizon))
        probabilities[target] = probability
        cell = (likelihood_bucket(probability), report.impacts[target])
        cells.setdefault(cell, []).append(target)
    return RiskMatrix(horizon, {k: tuple(v) for k, v in cells.items()}, probabilities)
