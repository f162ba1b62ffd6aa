import csv
import json
import os

import numpy as np
import pytest

from maxminplan import report
from maxminplan.harness import RunRecord, steady_state


def make_record(algorithm="proposed", seed=0, T=6, N=3, gamma=1.0):
    rng = np.random.default_rng(seed)
    rewards = -rng.uniform(0, 2, size=(T, N))
    return RunRecord(algorithm, seed, "G1", gamma, rewards, rng.uniform(size=(T, N, 2)),
                     rng.normal(size=(T + 1, N, 2)), np.full(T, 0.01))


def test_single_record_gives_one_csv_and_one_plot(tmp_path):
    paths = report.write_run(make_record(), tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["meta.json", "rewards.csv", "worst.svg"]
    assert paths["plot"].read_text().lstrip().startswith("<?xml")


def test_csv_schema_and_worst_flag(tmp_path):
    rec = make_record(T=8, N=4)
    report.write_csv(rec, tmp_path / "r.csv")
    with open(tmp_path / "r.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == report.CSV_COLUMNS
    assert len(rows) == 1 + 8 * 4
    data = report.read_csv(tmp_path / "r.csv")
    assert np.array_equal(data["rewards"], rec.rewards)
    flags = data["rewards"] == data["rewards"].min(axis=1, keepdims=True)
    assert np.array_equal(data["worst_flag"].astype(bool), flags)


def test_cumulative_column_recomputes_exactly(tmp_path):
    rec = make_record(T=10)
    report.write_csv(rec, tmp_path / "r.csv")
    data = report.read_csv(tmp_path / "r.csv")
    assert np.array_equal(data["cumulative"], np.cumsum(data["rewards"], axis=0))


def test_meta_is_versioned(tmp_path):
    report.write_run(make_record(), tmp_path)
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["schema_version"] == report.SCHEMA_VERSION
    assert meta["columns"] == list(report.CSV_COLUMNS)


def test_load_run_round_trip(tmp_path):
    rec = make_record(gamma=0.9, seed=4)
    report.write_run(rec, tmp_path)
    back = report.load_run(tmp_path)
    assert np.array_equal(back.rewards, rec.rewards)
    assert (back.algorithm, back.seed, back.gamma) == ("proposed", 4, 0.9)
    assert back.worst_cumulative == rec.worst_cumulative


def test_load_run_rejects_unknown_schema(tmp_path):
    report.write_run(make_record(), tmp_path)
    meta = json.loads((tmp_path / "meta.json").read_text())
    meta["schema_version"] = 99
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="schema"):
        report.load_run(tmp_path)


def test_overlay_draws_optimal_asymptote(tmp_path):
    opt = make_record("optimal", T=6)
    recs = [make_record("proposed"), make_record("pomcpow_baseline", seed=1), opt]
    written = report.report(recs, tmp_path)
    svg = written["overlay"].read_text()
    assert "optimal steady state" in svg
    assert sum(1 for p in tmp_path.iterdir() if p.is_dir()) == 3
    with open(written["summary"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["algorithm"] for r in rows] == ["proposed", "pomcpow_baseline", "optimal"]
    assert float(rows[2]["steady_state_worst"]) == pytest.approx(steady_state(opt))


def test_overlay_without_optimal_has_no_asymptote(tmp_path):
    written = report.report([make_record()], tmp_path)
    assert "optimal steady state" not in written["overlay"].read_text()


def test_figures_are_deterministic(tmp_path):
    rec = make_record()
    report.plot_worst(rec, tmp_path / "a.svg")
    report.plot_worst(rec, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_empty_report_rejected(tmp_path):
    with pytest.raises(ValueError):
        report.report([], tmp_path)


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_directory(tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    try:
        with pytest.raises(OSError, match="not writable"):
            report.write_run(make_record(), locked / "run")
    finally:
        locked.chmod(0o700)


def test_output_path_is_a_file(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="not writable"):
        report.write_run(make_record(), blocker)
