"""Tests for TTC propagation, Monte Carlo simulation and summaries."""

import math
import random

import numpy as np
import pytest

from tests.conftest import (
    constant_locals,
    diamond,
    fixpoint_oracle,
    random_dag,
    step,
)
from threatlang.distributions import TtcDistribution
from threatlang.exceptions import (
    InvalidTrials,
    MissingLocal,
    NegativeLocal,
    NoAnnotatedTargets,
    NoEntry,
    SimulationError,
    UnknownStep,
)
from threatlang.engine import (
    RNG_MIXER,
    SimulationReport,
    label_setting,
    likelihood_bucket,
    monte_carlo,
    propagate,
    risk_matrix,
    summarize,
    summary_csv,
    sweep,
)
from threatlang.graph import AttackGraph, DefenseNode
from threatlang.language import StepKind


def _two_parents(kind: StepKind) -> AttackGraph:
    return AttackGraph(
        (
            step("h.p", ttc=3, entry=True),
            step("h.q", ttc=5, entry=True),
            step("h.x", kind, ttc=2),
        ),
        (),
        (("h.p", "h.x"), ("h.q", "h.x")),
    )


def _chain(*ttcs, defenses=()) -> AttackGraph:
    ids = [f"h.s{i}" for i in range(len(ttcs))]
    pairs = enumerate(zip(ids, ttcs, strict=True))
    return AttackGraph(
        tuple(step(sid, ttc=t, entry=i == 0) for i, (sid, t) in pairs),
        tuple(defenses),
        tuple(zip(ids, ids[1:], strict=False)),
    )


def _random_graph(rng: random.Random, max_steps: int = 10) -> AttackGraph:
    """Random OR/AND graph with edges in both directions, so cycles are common."""
    n = rng.randint(2, max_steps)
    ids = [f"h.s{i:02d}" for i in range(n)]
    steps = tuple(
        step(
            sid,
            rng.choice([StepKind.OR, StepKind.AND]),
            float(rng.randint(0, 5)),
            entry=rng.random() < 0.25,
        )
        for sid in ids
    )
    edges = tuple((a, b) for a in ids for b in ids if a != b and rng.random() < 0.2)
    return AttackGraph(steps, (), edges)


def _report(columns: dict[str, list[float]], **kwargs) -> SimulationReport:
    steps = tuple(columns)
    samples = np.array([columns[s] for s in steps], dtype=np.float64).T
    return SimulationReport("f" * 64, samples.shape[0], 0, steps, samples, **kwargs)


# -----------------------------------------------------------------------------
# Propagation
# -----------------------------------------------------------------------------


def test_or_takes_cheapest_parent():
    g = _two_parents(StepKind.OR)
    assert propagate(g, constant_locals(g))["h.x"] == 5.0


def test_and_takes_slowest_parent():
    g = _two_parents(StepKind.AND)
    assert propagate(g, constant_locals(g))["h.x"] == 7.0


MIXED_LOCALS = {
    "h.e1": 1.0,
    "h.e2": 4.0,
    "h.a": 2.0,
    "h.b": 1.0,
    "h.c": 3.0,
    "h.d": 2.0,
    "h.f": 5.0,
    "h.g": 0.0,
    "h.h": 1.0,
    "h.t": 2.0,
}


def _mixed() -> AttackGraph:
    """Ten steps, two entries, four AND joins."""
    and_steps = {"h.b", "h.d", "h.g", "h.t"}
    parents = {
        "h.a": ["h.e1"],
        "h.b": ["h.e1", "h.e2"],
        "h.c": ["h.a", "h.b"],
        "h.d": ["h.a", "h.c"],
        "h.f": ["h.e2"],
        "h.g": ["h.d", "h.f"],
        "h.h": ["h.g", "h.b"],
        "h.t": ["h.h", "h.c", "h.g"],
    }
    return AttackGraph(
        tuple(
            step(
                sid,
                StepKind.AND if sid in and_steps else StepKind.OR,
                ttc,
                entry=sid in ("h.e1", "h.e2"),
                target=sid == "h.t",
            )
            for sid, ttc in MIXED_LOCALS.items()
        ),
        (DefenseNode("d.f", ("h.f",)),),
        tuple((p, child) for child, ps in parents.items() for p in ps),
    )


def test_mixed_graph_hand_computed():
    """Test a ten-step OR/AND graph against values worked out by hand."""
    totals = propagate(_mixed(), MIXED_LOCALS)
    assert totals == {
        "h.e1": 1.0,
        "h.e2": 4.0,
        "h.a": 3.0,  # e1 + 2
        "h.b": 5.0,  # max(e1, e2) + 1
        "h.c": 6.0,  # min(a, b) + 3
        "h.d": 8.0,  # max(a, c) + 2
        "h.f": 9.0,  # e2 + 5
        "h.g": 9.0,  # max(d, f)
        "h.h": 6.0,  # min(g, b) + 1
        "h.t": 11.0,  # max(h, c, g) + 2
    }
    guarded = propagate(_mixed(), MIXED_LOCALS, {"d.f": True})
    assert guarded["h.f"] == guarded["h.g"] == guarded["h.t"] == math.inf
    assert guarded["h.h"] == 6.0


def test_defense_blocks_descendants():
    g = _chain(1, 1, 1, defenses=[DefenseNode("d.x", ("h.s1",), True)])
    totals = propagate(g, constant_locals(g))
    assert totals == {"h.s0": 1.0, "h.s1": math.inf, "h.s2": math.inf}
    assert propagate(g, constant_locals(g), {"d.x": False})["h.s2"] == 3.0


def test_non_entry_without_parents_is_unreachable():
    g = AttackGraph((step("h.a", entry=True), step("h.b")))
    assert propagate(g, {"h.a": 0.0, "h.b": 0.0})["h.b"] == math.inf


def test_infinite_local_blocks():
    g = _chain(1, 1, 1)
    totals = propagate(g, {"h.s0": 1.0, "h.s1": math.inf, "h.s2": 1.0})
    assert totals["h.s2"] == math.inf


@pytest.mark.parametrize(
    ("locals_", "error"),
    [
        ({"h.s0": 1.0}, MissingLocal),
        ({"h.s0": 1.0, "h.s1": -1.0}, NegativeLocal),
        ({"h.s0": 1.0, "h.s1": math.nan}, NegativeLocal),
        ({"h.s0": 1.0, "h.s1": 1.0, "h.zz": 1.0}, UnknownStep),
    ],
)
def test_propagate_rejects_locals(locals_, error):
    with pytest.raises(error):
        propagate(_chain(1, 1), locals_)


def test_propagate_rejects_unknown_defense():
    g = _chain(1, 1)
    with pytest.raises(SimulationError, match="d.nope"):
        propagate(g, constant_locals(g), {"d.nope": True})


def test_or_cycle_resolves():
    g = AttackGraph(
        (step("h.e", ttc=1, entry=True), step("h.a", ttc=1), step("h.b", ttc=2)),
        (),
        (("h.e", "h.a"), ("h.a", "h.b"), ("h.b", "h.a")),
    )
    assert propagate(g, constant_locals(g)) == {"h.a": 2.0, "h.b": 4.0, "h.e": 1.0}


def test_and_in_cycle_is_unreachable():
    """Test that mutually dependent AND steps never finalize."""
    g = AttackGraph(
        (step("h.e", entry=True), step("h.x", StepKind.AND), step("h.y")),
        (),
        (("h.e", "h.x"), ("h.y", "h.x"), ("h.x", "h.y")),
    )
    totals = propagate(g, constant_locals(g))
    assert totals["h.x"] == math.inf
    assert totals["h.y"] == math.inf


def test_matches_fixpoint_oracle_on_random_dags():
    """Test propagation against equation iteration, with random defenses enabled."""
    rng = random.Random(7)
    for _ in range(1000):
        g = random_dag(rng, defenses=rng.randint(0, 3))
        on = {d.id: rng.random() < 0.5 for d in g.defenses}
        blocked = frozenset(s for d in g.defenses if on[d.id] for s in d.protects)
        locals_ = constant_locals(g)
        assert propagate(g, locals_, on) == fixpoint_oracle(g, locals_, blocked)


def test_matches_fixpoint_oracle_on_cyclic_graphs():
    rng = random.Random(8)
    for _ in range(300):
        g = _random_graph(rng)
        locals_ = constant_locals(g)
        assert propagate(g, locals_) == fixpoint_oracle(g, locals_)


def test_label_setting_equals_sweep():
    """Test that the heap and the vectorized level sweep agree on DAGs."""
    rng = random.Random(9)
    nprng = np.random.default_rng(9)
    for _ in range(200):
        g = random_dag(rng)
        index = g.index
        assert index.acyclic
        block = nprng.exponential(1.0, size=(5, index.size))
        block[nprng.random(block.shape) < 0.1] = np.inf
        swept = sweep(index, block)
        for row in range(block.shape[0]):
            totals, _ = label_setting(index, block[row])
            np.testing.assert_array_equal(totals, swept[row])


def test_monotone_in_locals():
    rng = random.Random(10)
    for _ in range(300):
        g = random_dag(rng)
        locals_ = constant_locals(g)
        before = propagate(g, locals_)
        bumped = dict(locals_)
        bumped[rng.choice(list(bumped))] += rng.randint(1, 5)
        after = propagate(g, bumped)
        assert all(after[s] >= before[s] for s in before)


def test_enabling_defenses_never_helps_the_attacker():
    rng = random.Random(11)
    for _ in range(300):
        g = random_dag(rng, defenses=3)
        locals_ = constant_locals(g)
        base = {d.id: False for d in g.defenses}
        more = dict(base)
        more[rng.choice(list(more))] = True
        before = propagate(g, locals_, base)
        after = propagate(g, locals_, more)
        assert all(after[s] >= before[s] for s in before)


def test_child_lower_bounds():
    rng = random.Random(12)
    for _ in range(300):
        g = random_dag(rng)
        locals_ = constant_locals(g)
        totals = propagate(g, locals_)
        for s in g.steps:
            if not math.isfinite(totals[s.id]):
                continue
            assert totals[s.id] >= locals_[s.id]
            parents = [totals[p] for p, c in g.edges if c == s.id]
            if s.entry or not parents:
                continue
            bound = max(parents) if s.kind is StepKind.AND else min(parents)
            assert totals[s.id] >= bound


# -----------------------------------------------------------------------------
# Monte Carlo
# -----------------------------------------------------------------------------


def test_single_trial_equals_propagate():
    g = diamond()
    report = monte_carlo(g, trials=1, master_seed=3)
    expected = propagate(g, constant_locals(g))
    assert report.samples.shape == (1, 4)
    assert dict(zip(report.steps, report.samples[0].tolist(), strict=True)) == expected
    assert report.critical_paths == {"h.t": (("h.e", "h.b", "h.t"),)}
    assert report.fingerprint == g.fingerprint
    assert report.rng_mixer == RNG_MIXER


def test_cyclic_graph_simulation():
    g = AttackGraph(
        (step("h.e", ttc=1, entry=True), step("h.a", ttc=1, target=True), step("h.b", ttc=2)),
        (),
        (("h.e", "h.a"), ("h.a", "h.b"), ("h.b", "h.a")),
    )
    report = monte_carlo(g, trials=3, master_seed=0)
    assert report.column("h.b").tolist() == [4.0, 4.0, 4.0]
    assert report.critical_paths["h.a"] == (("h.e", "h.a"),) * 3


def test_exponential_chain_mean():
    """Test that two unit exponentials in series average 2."""
    exp = TtcDistribution.exponential(1.0)
    g = _chain(exp, exp)
    report = monte_carlo(g, trials=10_000, master_seed=1234)
    assert summarize(report, "h.s1").mean == pytest.approx(2.0, abs=0.06)


def test_bernoulli_defense_reach_fraction():
    g = AttackGraph(
        (step("h.a", ttc=1, entry=True), step("h.b", ttc=1, target=True)),
        (DefenseNode("d.x", ("h.b",), enablement=0.5),),
        (("h.a", "h.b"),),
    )
    report = monte_carlo(g, trials=10_000, master_seed=99)
    summary = summarize(report, "h.b")
    assert summary.reach_fraction == pytest.approx(0.5, abs=0.015)
    assert summary.mean == 2.0
    unreachable = sum(p is None for p in report.critical_paths["h.b"])
    assert unreachable == round((1 - summary.reach_fraction) * 10_000)


def test_overrides_beat_enablement():
    g = AttackGraph(
        (step("h.a", ttc=1, entry=True), step("h.b", ttc=1)),
        (DefenseNode("d.x", ("h.b",), enablement=0.5),),
        (("h.a", "h.b"),),
    )
    report = monte_carlo(g, trials=200, master_seed=5, defense_overrides={"d.x": True})
    assert summarize(report, "h.b").reach_fraction == 0.0


def test_same_seed_same_report():
    g = _chain(TtcDistribution.gamma(2, 1.5), TtcDistribution.lognormal(0, 0.5))
    first = monte_carlo(g, trials=50, master_seed=2**64 - 1)
    second = monte_carlo(g, trials=50, master_seed=2**64 - 1)
    assert first.to_json() == second.to_json()
    assert first.to_json() != monte_carlo(g, trials=50, master_seed=0).to_json()


def test_trial_prefix_is_stable():
    """Test that trial i draws the same values whatever the trial count."""
    g = _chain(TtcDistribution.exponential(1.0), TtcDistribution.exponential(2.0))
    short = monte_carlo(g, trials=10, master_seed=42)
    long = monte_carlo(g, trials=700, master_seed=42)
    np.testing.assert_array_equal(short.samples, long.samples[:10])


def test_worker_count_does_not_change_report(enterprise_graph: AttackGraph):
    """Test that one and eight workers give byte-identical reports over repeated runs."""
    # ten blocks of trials, more than there are workers
    def run(workers: int) -> str:
        return monte_carlo(enterprise_graph, 2500, 17, workers=workers).to_json()

    serial = run(1)
    for _ in range(5):
        assert run(1) == serial
        assert run(8) == serial


def test_record_keeps_targets(enterprise_graph: AttackGraph):
    report = monte_carlo(enterprise_graph, trials=5, master_seed=1, record=["server.phish"])
    assert report.steps == ("server.phish", "server.root", "workstation.root")
    assert report.samples.shape == (5, 3)
    assert report.impacts == {"server.root": 5, "workstation.root": 3}


def test_record_unknown_step(enterprise_graph: AttackGraph):
    with pytest.raises(UnknownStep):
        monte_carlo(enterprise_graph, trials=5, master_seed=1, record=["server.nope"])


def test_zero_trials():
    with pytest.raises(InvalidTrials):
        monte_carlo(diamond(), trials=0, master_seed=0)


def test_no_entry():
    g = AttackGraph((step("h.a"),))
    with pytest.raises(NoEntry):
        monte_carlo(g, trials=1, master_seed=0)


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_seed_range(seed):
    with pytest.raises(SimulationError):
        monte_carlo(diamond(), trials=1, master_seed=seed)


# -----------------------------------------------------------------------------
# Summaries
# -----------------------------------------------------------------------------


def test_summarize_constant_samples():
    report = _report({"h.a": [5.0] * 8})
    summary = summarize(report, "h.a", horizon=10)
    assert summary.mean == 5.0
    assert summary.reach_fraction == 1.0
    assert summary.within_horizon == 1.0
    assert (summary.p05, summary.p50, summary.p95) == (5.0, 5.0, 5.0)


def test_percentiles_order_unreachable_last():
    summary = summarize(_report({"h.a": [2.0, math.inf, 1.0, math.inf]}), "h.a")
    assert summary.mean == 1.5
    assert summary.reach_fraction == 0.5
    assert (summary.p05, summary.p50, summary.p95) == (1.0, 2.0, math.inf)
    assert summary.within_horizon is None


def test_never_reached_has_no_mean():
    summary = summarize(_report({"h.a": [math.inf, math.inf]}), "h.a", horizon=100)
    assert summary.mean is None
    assert summary.within_horizon == 0.0


def test_zero_horizon_with_continuous_ttc():
    g = _chain(TtcDistribution.exponential(1.0))
    report = monte_carlo(g, trials=500, master_seed=3)
    assert summarize(report, "h.s0", horizon=0).within_horizon == 0.0


def test_summarize_unknown_step():
    with pytest.raises(UnknownStep):
        summarize(_report({"h.a": [1.0]}), "h.b")


def test_summary_csv():
    report = _report({"h.a": [1.0, 3.0], "h.b": [math.inf, math.inf]})
    lines = summary_csv(report).splitlines()
    assert lines == [
        "step,mean,reach_fraction,p05,p50,p95",
        "h.a,2,1,1,1,3",
        "h.b,,0,inf,inf,inf",
    ]


@pytest.mark.parametrize(
    ("probability", "bucket"),
    [(0.0, 1), (0.19, 1), (0.2, 2), (0.3, 2), (0.5, 3), (0.79, 4), (0.8, 5), (1.0, 5)],
)
def test_likelihood_bucket(probability, bucket):
    assert likelihood_bucket(probability) == bucket


def test_risk_matrix_cells():
    report = _report(
        {"h.t1": [1.0] * 10, "h.t2": [1.0, 2.0, 3.0] + [50.0] * 7},
        targets=("h.t1", "h.t2"),
        impacts={"h.t1": 5, "h.t2": 2},
    )
    matrix = risk_matrix(report, horizon=10)
    assert matrix.cell_of("h.t1") == (5, 5)
    assert matrix.cell_of("h.t2") == (2, 2)
    assert matrix.probabilities == {"h.t1": 1.0, "h.t2": pytest.approx(0.3)}
    text = matrix.render()
    assert text.startswith("risk matrix at horizon 10\n")
    assert len(text.splitlines()) == 7
    assert matrix.to_document()["cells"][0] == {"likelihood": 2, "impact": 2, "targets": ["h.t2"]}


def test_risk_matrix_needs_impacts():
    report = _report({"h.t": [1.0]}, targets=("h.t",))
    with pytest.raises(NoAnnotatedTargets):
        risk_matrix(report, horizon=1)


def test_risk_matrix_from_simulation(enterprise_graph: AttackGraph):
    report = monte_carlo(enterprise_graph, trials=200, master_seed=4)
    matrix = risk_matrix(report, horizon=1e9)
    assert set(matrix.probabilities) == {"server.root", "workstation.root"}
    assert matrix.cell_of("server.root")[1] == 5


# -----------------------------------------------------------------------------
# Serialization
# -----------------------------------------------------------------------------


def test_report_json_round_trip(enterprise_graph: AttackGraph):
    report = monte_carlo(enterprise_graph, trials=20, master_seed=6)
    restored = SimulationReport.from_json(report.to_json())
    assert restored.steps == report.steps
    np.testing.assert_array_equal(restored.samples, report.samples)
    assert restored.critical_paths == report.critical_paths
    assert restored.to_json() == report.to_json()


def test_report_json_encodes_infinity():
    text = _report({"h.a": [math.inf, 1.0]}).to_json()
    assert '"inf"' in text
    assert SimulationReport.from_json(text).column("h.a")[0] == math.inf


@pytest.mark.parametrize("text", ["{}", "not json", '{"samples": {"a": [1]}, "trials": 2}'])
def test_malformed_report(text):
    with pytest.raises(SimulationError):
        SimulationReport.from_json(text)
