"""Time Monte Carlo simulation on a large synthetic layered attack graph.

Usage:
    python -m scripts.benchmark --steps 500000 --trials 100 --workers 4
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import dotenv
import numpy as np

from threatlang import AttackGraph, StepKind, StepNode, TtcDistribution, monte_carlo
from threatlang.exceptions import ThreatLangError

LOCALS = (
    TtcDistribution.exponential(1.0),
    TtcDistribution.exponential(0.1),
    TtcDistribution.gamma(2, 1.5),
    TtcDistribution.lognormal(0, 0.5),
    TtcDistribution.constant(0.5),
)


def layered_graph(steps: int, width: int, seed: int) -> AttackGraph:
    """Layers of ``width`` steps; every step has one to three parents in the layer above.

    The first layer holds the entries and the last step is the only target.
    """
    rng = np.random.default_rng(seed)
    ids = [f"n{i // width}.s{i % width}" for i in range(steps)]
    is_and = rng.random(steps) < 0.2
    dists = rng.integers(0, len(LOCALS), steps)
    nodes = [
        StepNode(
            sid,
            StepKind.AND if is_and[i] else StepKind.OR,
            LOCALS[dists[i]],
            entry=i < width,
            target=i == steps - 1,
        )
        for i, sid in enumerate(ids)
    ]
    edges: list[tuple[str, str]] = []
    for i in range(width, steps):
        above = (i // width - 1) * width
        for p in rng.choice(width, size=rng.integers(1, 4), replace=False):
            edges.append((ids[above + int(p)], ids[i]))
    return AttackGraph(tuple(nodes), (), tuple(edges))


def main() -> int:
    dotenv.load_dotenv()
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=500_000, help="Attack steps")
    parser.add_argument("--width", type=int, default=1000, help="Steps per layer")
    parser.add_argument("--trials", type=int, default=100, help="Monte Carlo trials")
    parser.add_argument("--seed", type=int, default=0, help="Graph and simulation seed")
    parser.add_argument(
        "--workers",
        type=int,
        default=int(os.getenv("THREATLANG_WORKERS", "1")),
        help="Parallel workers (default: $THREATLANG_WORKERS or 1)",
    )
    args = parser.parse_args()

    print(f"Building a {args.steps}-step graph, {args.width} steps per layer...")
    start = time.perf_counter()
    graph = layered_graph(args.steps, args.width, args.seed)
    index = graph.index
    built = time.perf_counter() - start
    print(f"  {len(graph.edges)} edges, {len(index.levels)} levels, built in {built:.1f}s")
    print("-" * 40)

    try:
        start = time.perf_counter()
        report = monte_carlo(graph, args.trials, args.seed, record=(), workers=args.workers)
        elapsed = time.perf_counter() - start
    except ThreatLangError as e:
        print(f"[ERROR] {type(e).__name__}: {e}")
        return 1

    target = graph.targets[0]
    column = report.column(target)
    reached = np.isfinite(column)
    print(f"[OK] {args.trials} trials in {elapsed:.1f}s ({elapsed / args.trials:.3f}s per trial)")
    print(f"  Target:  {target}")
    print(f"  Reached: {reached.mean():.2%}")
    if reached.any():
        print(f"  Mean TTC of reached trials: {column[reached].mean():.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
