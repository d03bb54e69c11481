"""Tests for the command line."""

import json
from pathlib import Path

import pytest

from threatlang.cli import WORKERS_ENV, run, write_atomic
from threatlang.engine import SimulationReport
from threatlang.graph import AttackGraph, import_graph


@pytest.fixture(autouse=True)
def _isolated(tmp_path: Path, monkeypatch: pytest.MonkeyPatch):
    """Run every command from an empty directory without inherited settings."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    monkeypatch.delenv("THREATLANG_LOG_LEVEL", raising=False)


@pytest.fixture
def graph_file(samples: Path, tmp_path: Path) -> Path:
    out = tmp_path / "graph.json"
    code = run(
        [
            "compile",
            "--lang",
            str(samples / "enterprise.tl"),
            "--model",
            str(samples / "model.json"),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    return out


# -----------------------------------------------------------------------------
# compile / simulate
# -----------------------------------------------------------------------------


def test_compile(graph_file: Path, enterprise_graph: AttackGraph):
    assert import_graph(graph_file.read_text()) == enterprise_graph


def test_unknown_flag(capsys: pytest.CaptureFixture[str], graph_file: Path):
    code = run(["simulate", "--graph", str(graph_file), "--out", "r.json", "--speed", "9"])
    assert code == 2
    assert "usage:" in capsys.readouterr().err


def test_missing_subcommand(capsys: pytest.CaptureFixture[str]):
    assert run([]) == 2
    assert "usage:" in capsys.readouterr().err


def test_domain_error_leaves_no_output(
    samples: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
):
    model = json.loads((samples / "model.json").read_text())
    model["entries"] = []
    (tmp_path / "model.json").write_text(json.dumps(model))
    assert (
        run(
            [
                "compile",
                "--lang",
                str(samples / "enterprise.tl"),
                "--model",
                "model.json",
                "--out",
                "graph.json",
            ]
        )
        == 0
    )
    capsys.readouterr()
    assert run(["simulate", "--graph", "graph.json", "--out", "report.json"]) == 1
    assert "error: NoEntry:" in capsys.readouterr().err
    assert not (tmp_path / "report.json").exists()


def test_compile_error_names_the_exception(
    samples: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
):
    (tmp_path / "bad.tl").write_text("asset Host { | a ")
    code = run(
        ["compile", "--lang", "bad.tl", "--model", str(samples / "model.json"), "--out", "g.json"]
    )
    assert code == 1
    assert capsys.readouterr().err.startswith("error: DslSyntaxError: ")


def test_missing_input_file(capsys: pytest.CaptureFixture[str]):
    assert run(["export", "--graph", "nowhere.json", "--format", "dot"]) == 1
    assert "FileNotFoundError" in capsys.readouterr().err


def test_simulate_is_independent_of_workers(graph_file: Path, tmp_path: Path):
    """Test that reports from one and eight workers are byte-identical on every run."""
    common = ["simulate", "--graph", str(graph_file), "--trials", "2500", "--seed", "11"]
    assert run([*common, "--workers", "1", "--out", "one.json"]) == 0
    expected = (tmp_path / "one.json").read_bytes()
    for attempt in range(5):
        for workers in ("1", "8"):
            out = f"run{attempt}_{workers}.json"
            assert run([*common, "--workers", workers, "--out", out]) == 0
            assert (tmp_path / out).read_bytes() == expected


def test_workers_from_environment(
    graph_file: Path, monkeypatch: pytest.MonkeyPatch, capsys: pytest.CaptureFixture[str]
):
    monkeypatch.setenv(WORKERS_ENV, "many")
    assert run(["simulate", "--graph", str(graph_file), "--out", "r.json"]) == 2
    assert WORKERS_ENV in capsys.readouterr().err
    monkeypatch.setenv(WORKERS_ENV, "2")
    assert run(["simulate", "--graph", str(graph_file), "--trials", "10", "--out", "r.json"]) == 0


def test_simulate_outputs(graph_file: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    code = run(
        [
            "simulate",
            "--graph",
            str(graph_file),
            "--trials",
            "50",
            "--horizon",
            "1000",
            "--defense",
            "server.mfa=true",
            "--summary-csv",
            "summary.csv",
            "--out",
            "report.json",
        ]
    )
    assert code == 0
    report = SimulationReport.from_json((tmp_path / "report.json").read_text())
    assert report.trials == 50
    assert report.column("server.userAccess").tolist() == [float("inf")] * 50
    csv = (tmp_path / "summary.csv").read_text().splitlines()
    assert csv[0] == "step,mean,reach_fraction,p05,p50,p95"
    assert len(csv) == 1 + len(report.steps)
    rows = json.loads(capsys.readouterr().out)
    assert [row["step"] for row in rows] == ["server.root", "workstation.root"]
    assert rows[0]["reach_fraction"] == 0.0


@pytest.mark.parametrize(
    "extra",
    [["--defense", "server.mfa"], ["--trials", "0"], ["--seed", "-1"]],
)
def test_bad_simulation_values(graph_file: Path, extra: list[str]):
    assert run(["simulate", "--graph", str(graph_file), "--out", "r.json", *extra]) == 2


# -----------------------------------------------------------------------------
# analyze / export
# -----------------------------------------------------------------------------


def _analyze(graph_file: Path, capsys: pytest.CaptureFixture[str], *args: str):
    assert run(["analyze", "--graph", str(graph_file), *args]) == 0
    return json.loads(capsys.readouterr().out)


def test_analyze_critical_path(graph_file: Path, capsys: pytest.CaptureFixture[str]):
    doc = _analyze(graph_file, capsys, "--report", "critical-path", "--target", "server.root")
    assert doc["path"][0] == "internet.access"
    assert doc["path"][-1] == "server.root"
    assert doc["cost"] > 0


def test_analyze_min_cut(graph_file: Path, capsys: pytest.CaptureFixture[str]):
    doc = _analyze(graph_file, capsys, "--report", "min-cut", "--target", "server.root")
    assert doc == {"target": "server.root", "mode": "exact", "defenses": ["server.mfa"]}


def test_analyze_critical_steps(graph_file: Path, capsys: pytest.CaptureFixture[str]):
    doc = _analyze(
        graph_file,
        capsys,
        "--report",
        "critical-steps",
        "--target",
        "workstation.root",
        "--trials",
        "40",
    )
    top = {row["step"] for row in doc if row["frequency"] == 1.0}
    assert {"internet.access", "workstation.connect", "workstation.root"} <= top


def test_analyze_risk_from_saved_report(
    graph_file: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
):
    assert run(["simulate", "--graph", str(graph_file), "--trials", "30", "--out", "r.json"]) == 0
    doc = _analyze(graph_file, capsys, "--report", "risk", "--horizon", "1e9", "--sim", "r.json")
    assert set(doc["probabilities"]) == {"server.root", "workstation.root"}
    assert {cell["impact"] for cell in doc["cells"]} <= {3, 5}


def test_analyze_evaluate(graph_file: Path, capsys: pytest.CaptureFixture[str]):
    doc = _analyze(
        graph_file, capsys, "--report", "evaluate", "--target", "server.root", "--trials", "30"
    )
    assert doc[0]["defense"] is None
    assert {row["defense"] for row in doc[1:]} == {
        "server.mfa",
        "server.patching",
        "workstation.mfa",
        "workstation.patching",
    }
    forced_mfa = next(row for row in doc if row["defense"] == "server.mfa")
    assert forced_mfa["reach_fraction"] == 0.0


def test_analyze_requires_target(graph_file: Path, capsys: pytest.CaptureFixture[str]):
    assert run(["analyze", "--graph", str(graph_file), "--report", "min-cut"]) == 2
    assert "requires --target" in capsys.readouterr().err


def test_export_dot(graph_file: Path, capsys: pytest.CaptureFixture[str]):
    assert run(["export", "--graph", str(graph_file), "--format", "dot"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("digraph attack_graph {")
    assert "shape=triangle" in out


def test_export_views(graph_file: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    args = ["export", "--graph", str(graph_file), "--format", "json"]
    assert run([*args, "--view", "conditions", "--out", "conditions.json"]) == 0
    conditions = json.loads((tmp_path / "conditions.json").read_text())
    assert len(conditions["conditions"]) == 11
    assert run([*args, "--view", "states", "--cap", "3"]) == 1
    assert "StateSpaceExceeded" in capsys.readouterr().err


# -----------------------------------------------------------------------------
# grammar / ingest
# -----------------------------------------------------------------------------


def test_grammar_prob(samples: Path, capsys: pytest.CaptureFixture[str]):
    grammar = str(samples / "stem_loop.grammar")
    assert run(["grammar", "prob", "--grammar", grammar, "--input", "AAGGAAACUU"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["probability"] == pytest.approx(0.005)


def test_grammar_parse_and_sample(samples: Path, capsys: pytest.CaptureFixture[str]):
    grammar = str(samples / "stem_loop.grammar")
    args = ["grammar", "parse", "--grammar", grammar, "--input", "AAGGAAACUU"]
    assert run([*args, "--strategy", "bottom-up"]) == 0
    parsed = json.loads(capsys.readouterr().out)
    assert parsed["accepted"]
    assert len(parsed["trees"]) == 1
    assert run(["grammar", "sample", "--grammar", grammar, "--seed", "5", "--count", "200"]) == 0
    counts = json.loads(capsys.readouterr().out)
    assert sum(counts.values()) == 200
    assert all(len(s) == 10 for s in counts)


def test_grammar_enumerate(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    (tmp_path / "g1.grammar").write_text("S -> a A | b B\nA -> a b\nB -> b a\n")
    assert run(["grammar", "enumerate", "--grammar", "g1.grammar"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [row["string"] for row in doc["strings"]] == ["aab", "bba"]
    assert not doc["truncated"]


def test_grammar_prob_requires_input(samples: Path):
    assert run(["grammar", "prob", "--grammar", str(samples / "stem_loop.grammar")]) == 2


def test_ingest(samples: Path, tmp_path: Path):
    code = run(
        [
            "ingest",
            "--catalog",
            str(samples / "catalog.json"),
            "--mapping",
            str(samples / "mapping.json"),
            "--asset",
            "Host",
            "--out",
            "host.tl",
            "--split-dir",
            "tactics",
        ]
    )
    assert code == 0
    assert (tmp_path / "host.tl").read_text().startswith("asset Host {\n")
    assert sorted(p.name for p in (tmp_path / "tactics").iterdir()) == [
        "credential_access.tl",
        "execution.tl",
        "initial_access.tl",
        "privilege_escalation.tl",
    ]


def test_ingest_split_rejects_colliding_tactics(
    capsys: pytest.CaptureFixture[str], tmp_path: Path
):
    """Test that two tactics sharing a file name abort the split before writing."""
    catalog = {
        "name": "clash",
        "version": "1",
        "techniques": [
            {"id": "T1", "name": "Phishing", "tactic": "initial-access"},
            {"id": "T2", "name": "Drive-by", "tactic": "initial access"},
        ],
    }
    (tmp_path / "catalog.json").write_text(json.dumps(catalog))
    argv = ["ingest", "--catalog", "catalog.json", "--asset", "Host", "--out", "host.tl"]
    assert run([*argv, "--split-dir", "tactics"]) == 1
    err = capsys.readouterr().err
    assert "IdentifierCollision" in err
    assert "initial_access" in err
    assert not (tmp_path / "tactics").exists()
    assert not (tmp_path / "host.tl").exists()


def test_write_atomic_replaces(tmp_path: Path):
    target = tmp_path / "nested" / "out.txt"
    write_atomic(target, "one")
    write_atomic(target, "two")
    assert target.read_text() == "two"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]
