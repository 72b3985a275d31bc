import json
import shutil

import numpy as np
import pytest

from helpers import hand_state
from weakspot.config import RunConfig
from weakspot.harness import cli
from weakspot.harness import report as rep
from weakspot.harness.run import (
    SnapshotError,
    reevaluate,
    replay,
    resume,
    rows_from_trace,
    run,
    run_uniform,
    states_equal,
)
from weakspot.harness.trace import Trace, read_trace
from weakspot.oracle import SyntheticBackend
from weakspot.presets import index_space

FAST = dict(surrogate=False, budget_total=2000, seed=7)


def test_same_seed_gives_byte_identical_traces(tmp_path):
    run(RunConfig(**FAST), tmp_path / "a.jsonl")
    run(RunConfig(**FAST), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    run(RunConfig(**{**FAST, "seed": 8}), tmp_path / "c.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() != (tmp_path / "c.jsonl").read_bytes()


def test_full_budget_batch_count():
    state, trace = run(RunConfig(surrogate=False, seed=1))
    assert len(trace.of_kind("batch")) == 1000 and state.budget_used == 20_000
    assert all(len(e["plan"]) == 20 for e in trace.of_kind("batch"))


def test_zero_budget_only_initialises():
    state, trace = run(RunConfig(surrogate=False, budget_total=0))
    kinds = {e["kind"] for e in trace.events}
    assert kinds == {"arm_added", "init", "finished"}
    assert state.budget_used == 0 and state.pool.n == 50


def test_final_partial_batch_rounds_down_to_even():
    state, trace = run(RunConfig(surrogate=False, budget_total=1005, batch_size=20))
    sizes = [len(e["plan"]) for e in trace.of_kind("batch")]
    assert sizes == [20] * 50 + [4] and state.budget_used == 1004


def test_budget_accounting_matches_trace():
    state, trace = run(RunConfig(**FAST))
    assert state.budget_used == sum(len(e["plan"]) for e in trace.of_kind("batch"))
    assert state.budget_used == int(state.pool.m.sum())
    used = state.budget_used
    reevaluate(state, SyntheticBackend(lambda t: 0.5, 1), top_k=5, min_samples=300)
    assert state.budget_used == used


def test_snapshot_resume_matches_uninterrupted(tmp_path):
    trace_path, snap = tmp_path / "trace.jsonl", tmp_path / "snap.pkl"
    full, _ = run(RunConfig(**FAST), trace_path, snapshot=(30, snap))
    reference = trace_path.read_bytes()
    resumed, _ = resume(snap, trace_path)
    assert trace_path.read_bytes() == reference
    assert states_equal(full, resumed)


def test_resume_rejects_altered_config_and_missing_trace(tmp_path):
    trace_path, snap = tmp_path / "trace.jsonl", tmp_path / "snap.pkl"
    run(RunConfig(**FAST), trace_path, snapshot=(5, snap))
    with pytest.raises(SnapshotError):
        resume(snap, trace_path, config=RunConfig(**{**FAST, "seed": 99}))
    moved = tmp_path / "elsewhere.jsonl"
    shutil.move(trace_path, moved)
    with pytest.raises(SnapshotError):
        resume(snap, trace_path)
    with pytest.raises(SnapshotError):
        resume(tmp_path / "nope.pkl", moved)


def test_resume_rejects_edited_trace(tmp_path):
    trace_path, snap = tmp_path / "trace.jsonl", tmp_path / "snap.pkl"
    run(RunConfig(**FAST), trace_path, snapshot=(5, snap))
    data = bytearray(trace_path.read_bytes())
    data[200] ^= 1
    trace_path.write_bytes(bytes(data))
    with pytest.raises(SnapshotError):
        resume(snap, trace_path)


@pytest.mark.parametrize("surrogate", [False, True])
def test_replay_reproduces_state(tmp_path, surrogate):
    cfg = RunConfig(**{**FAST, "surrogate": surrogate, "budget_total": 1000})
    original, trace = run(cfg, tmp_path / "t.jsonl")
    replayed, again = replay(tmp_path / "t.jsonl")
    assert states_equal(original, replayed)
    assert again.text() == trace.text()


def test_uniform_spreads_budget():
    space = index_space(10)
    cfg = RunConfig(space=space.to_dict(), budget_total=1000, seed=3)
    state, trace = run_uniform(cfg, backend=SyntheticBackend(lambda t: 0.5, 3), space=space)
    counts = np.bincount([tid[0] for e in trace.of_kind("batch") for tid in e["plan"]], minlength=10)
    assert counts.sum() == 1000 and np.all(np.abs(counts - 100) <= 30)
    assert state.budget_used == 1000 and state.certified_order == []


def test_reevaluation_tops_up_to_minimum():
    state = hand_state([(250, 200.0), (40, 30.0), (40, 0.0)])
    rows = reevaluate(state, SyntheticBackend(lambda t: 1.0, 0), top_k=2, min_samples=200)
    assert [r.fresh_m for r in rows] == [0, 160]
    assert rows[0].reeval_mean == 0.8
    assert rows[1].reeval_m == 200 and rows[1].reeval_mean == pytest.approx(190 / 200)
    assert int(state.pool.m[1]) == 40


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


def _rows(scores, values):
    return [{"rank": j + 1, "id": [j], "score": s, "m": 1, "lcb": s, "ucb": 1.0, "reeval_mean": v, "reeval_m": 1}
            for j, (s, v) in enumerate(zip(scores, values))]


def test_expected_curve_averages_tie_groups():
    report = rep.build_report(_rows([0.7, 0.7, 0.7, 0.2], [1.0, 0.5, 0.0, 0.4]), "lcb")
    assert report.at(1)["expected_average"] == 0.5
    assert report.at(1)["cumulative_average"] == 1.0
    assert report.at(3)["expected_average"] == pytest.approx(0.5)
    assert report.at(4)["expected_average"] == pytest.approx(report.values.mean())


def test_curves_agree_without_ties():
    report = rep.build_report(_rows([0.9, 0.8, 0.7], [0.2, 0.9, 0.4]), "lcb")
    assert np.allclose(report.expected_curve, report.curve)
    assert report.running_min.tolist() == [0.2, 0.2, 0.2]
    assert report.running_max.tolist() == [0.2, 0.9, 0.9]


def test_report_recomputes_from_trace(tmp_path):
    state, trace = run(RunConfig(**FAST), tmp_path / "t.jsonl")
    appended = Trace({k: v for k, v in trace.header.items() if k != "format_version"}, tmp_path / "t.jsonl",
                     append=True)
    appended.events = trace.events
    state.sink = appended.sink
    rows = reevaluate(state, SyntheticBackend(lambda t: 0.3, 11), top_k=20, min_samples=50)
    appended.close()
    live = rep.write_report(rep.build_report(rows, "lcb"), tmp_path / "live")
    rebuilt = rep.write_report(rep.build_report(rows_from_trace(read_trace(tmp_path / "t.jsonl")), "lcb"),
                               tmp_path / "rebuilt")
    for a, b in zip(live, rebuilt):
        assert a.read_bytes() == b.read_bytes()
    ranks = rep.read_table(live[0])
    assert len(ranks) == 20 and [int(r["rank"]) for r in ranks] == list(range(1, 21))


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------


def test_cli_end_to_end(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", "--budget", "600", "--no-surrogate", "--seed", "2", "--out", str(out),
                     "--snapshot-at", "5"]) == cli.EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["budget_used"] == 600
    reference = (out / "trace.jsonl").read_bytes()
    assert cli.main(["resume", "--run", str(out), "--snapshot", str(out / "snapshot_5.pkl")]) == cli.EXIT_OK
    assert (out / "trace.jsonl").read_bytes() == reference
    assert cli.main(["reeval", "--run", str(out), "--top-k", "10", "--min-samples", "30"]) == cli.EXIT_OK
    assert cli.main(["report", "--run", str(out)]) == cli.EXIT_OK
    assert len(rep.read_table(out / "report_ranks.tsv")) == 10
    assert cli.main(["uniform", "--budget", "200", "--out", str(tmp_path / "u")]) == cli.EXIT_OK


def test_cli_exit_codes(tmp_path, monkeypatch):
    assert cli.main(["run", "--batch-size", "3", "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert cli.main(["reeval", "--run", str(tmp_path / "missing")]) == cli.EXIT_CONFIG
    assert cli.main(["report", "--run", str(tmp_path / "missing")]) == cli.EXIT_CONFIG
    monkeypatch.delenv("WEAKSPOT_BACKEND_COMMAND", raising=False)
    config = tmp_path / "ext.json"
    config.write_text(json.dumps({"space": {"preset": "grid"}, "backend": {"kind": "external"}}))
    assert cli.main(["run", "--config", str(config), "--out", str(tmp_path / "e")]) == cli.EXIT_BACKEND
    assert cli.main(["verify", "--suite", "g2", "--seeds", "3"]) == cli.EXIT_OK


def test_mean_reevaluation_completes_boundary_tie_group():
    state = hand_state([(10, 9.0), (10, 5.0), (10, 5.0), (10, 5.0), (10, 1.0)])
    backend = SyntheticBackend(lambda t: 0.5, 0)
    assert len(reevaluate(state, backend, top_k=2, min_samples=10, by="mean")) == 4
    assert len(reevaluate(state, backend, top_k=2, min_samples=10, by="mean", complete_ties=False)) == 2
    assert len(reevaluate(state, backend, top_k=4, min_samples=10, by="mean")) == 4
