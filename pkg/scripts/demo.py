"""Walk through the sample threat model: compile, simulate and analyze it."""

from __future__ import annotations

import sys
from pathlib import Path

from threatlang import (
    compile,
    critical_path,
    load_grammar,
    min_defense_cut,
    monte_carlo,
    parse_language,
    parse_model,
    risk_matrix,
    string_probability,
    summarize,
)
from threatlang.exceptions import ThreatLangError

SAMPLES = Path(__file__).resolve().parent.parent / "samples"


def demo() -> int:
    """Run the sample pipeline.

    Returns:
        Exit code (0 for success, 1 for failure).
    """
    try:
        spec = parse_language((SAMPLES / "enterprise.tl").read_text())
        model = parse_model((SAMPLES / "model.json").read_text(), spec)
        graph = compile(spec, model)
        print(
            f"[OK] Compiled {len(graph.steps)} steps, {len(graph.defenses)} defenses "
            f"and {len(graph.edges)} edges"
        )
        print("-" * 40)

        report = monte_carlo(graph, trials=2000, master_seed=1)
        for target in graph.targets:
            s = summarize(report, target, horizon=10)
            mean = f"{s.mean:.2f}" if s.mean is not None else "n/a"
            print(f"{target}:")
            print(f"  Reached:       {s.reach_fraction:.1%}")
            print(f"  Mean TTC:      {mean}")
            print(f"  P(TTC <= 10):  {s.within_horizon:.1%}")
            path = critical_path(graph, target)
            print(f"  Critical path: {' -> '.join(path.steps)} ({path.cost:.2f})")
            print(f"  Minimal cut:   {', '.join(sorted(min_defense_cut(graph, target)))}")
        print()
        print(risk_matrix(report, horizon=10).render())

        stem_loop = load_grammar((SAMPLES / "stem_loop.grammar").read_text())
        print(f"P(AAGGAAACUU) = {string_probability(stem_loop, 'AAGGAAACUU'):.4f}")
        return 0

    except ThreatLangError as e:
        print(f"[ERROR] {type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(demo())
