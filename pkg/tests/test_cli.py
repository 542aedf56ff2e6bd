from __future__ import annotations

import csv
import io
import json
import hashlib

import pytest

from genguide.cli import main
from genguide.restraints import format_restraint_csv
from genguide.scorers import Restraint, RestraintGroup
from genguide.structure import AtomKey, Structure, write_pdb
from genguide.toy import two_state_structures


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    a, b = two_state_structures(8)
    (tmp_path / "a.pdb").write_text(write_pdb(a))
    (tmp_path / "b.pdb").write_text(write_pdb(b))
    assert main(["derive-pairwise", "a.pdb", "--out", "targets.csv"]) == 0
    config = {
        "generator": {"references": ["a.pdb", "b.pdb"]},
        "ga": {"population_size": 12, "elite_keep": 2, "tournament_size": 3,
               "total_cycles": 6, "seed": 3, "prior_fraction": 1.0},
        "scorer": {"kind": "pairwise", "file": "targets.csv"},
        "prior_pdb": "b.pdb",
        "output_dir": "out",
    }
    (tmp_path / "run.json").write_text(json.dumps(config))
    return tmp_path


def test_run_writes_closed_output_set(workspace, capsys):
    assert main(["run", "--config", "run.json", "--jobs", "2"]) == 0
    out = workspace / "out"
    trace = (out / "trace.csv").read_text().splitlines()
    assert len(trace) == 1 + 7
    manifest = json.loads((out / "manifest.json").read_text())
    written = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert set(manifest["files"]) == written
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert len(list((out / "population").glob("rank_*.pdb"))) == 12
    assert "best_loss" in capsys.readouterr().out


def test_rerun_same_seed_is_byte_identical(workspace):
    assert main(["run", "--config", "run.json", "--out", "r1"]) == 0
    assert main(["run", "--config", "run.json", "--out", "r2", "--jobs", "4"]) == 0
    assert (workspace / "r1/trace.csv").read_bytes() == (workspace / "r2/trace.csv").read_bytes()
    assert main(["run", "--config", "run.json", "--out", "r3", "--seed", "11"]) == 0
    assert (workspace / "r1/trace.csv").read_bytes() != (workspace / "r3/trace.csv").read_bytes()


def test_missing_restraint_file_names_the_field(workspace, capsys):
    cfg = json.loads((workspace / "run.json").read_text())
    cfg["scorer"] = {"kind": "noe", "file": "absent.csv"}
    (workspace / "bad.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", "bad.json"]) == 1
    assert "scorer.file" in capsys.readouterr().err


def test_unknown_ga_field_is_validation_error(workspace, capsys):
    cfg = json.loads((workspace / "run.json").read_text())
    cfg["ga"]["mutation_rate"] = 0.1
    (workspace / "bad.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", "bad.json"]) == 1
    assert "ga.mutation_rate" in capsys.readouterr().err


def test_aborted_run_exits_two(workspace):
    (workspace / "shifts.csv").write_text("res,atom,shift_ppm\n1,CB,40.0\n")
    cfg = json.loads((workspace / "run.json").read_text())
    # Predictions only cover CA, so every candidate fails with NoOverlap.
    cfg["scorer"] = {"kind": "shifts", "file": "shifts.csv", "atom_filter": None}
    (workspace / "abort.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", "abort.json"]) == 2


def test_score_reference_against_own_targets(workspace, capsys):
    assert main(["score", "a.pdb", "--pairwise", "targets.csv", "--out", "s.csv"]) == 0
    rows = list(csv.DictReader(io.StringIO((workspace / "s.csv").read_text())))
    assert float(rows[0]["loss"]) == 0.0


def test_score_noe_fixture_columns(workspace, capsys):
    s = Structure.from_ca_trace([[float(i), 0.0, 0.0] for i in range(4)])
    (workspace / "line.pdb").write_text(write_pdb(s))
    groups = [
        RestraintGroup(1, (Restraint(AtomKey(1, "CA"), AtomKey(2, "CA"), 0.0, 2.0),)),
        RestraintGroup(2, (Restraint(AtomKey(1, "CA"), AtomKey(3, "CA"), 0.0, 1.5),)),
        RestraintGroup(3, (Restraint(AtomKey(2, "CA"), AtomKey(3, "CA"), 0.5, 1.0),)),
        RestraintGroup(4, (Restraint(AtomKey(1, "CA"), AtomKey(4, "CA"), 0.0, 1.5),)),
    ]
    (workspace / "noe.csv").write_text(format_restraint_csv(groups))
    assert main(["score", "line.pdb", "--noe", "noe.csv", "--out", "r.csv"]) == 0
    printed = capsys.readouterr().out
    assert "0.5000" in printed and "1.0000" in printed
    row = next(csv.DictReader(io.StringIO((workspace / "r.csv").read_text())))
    loss, p, mean, median = (float(row[k]) for k in
                             ("loss", "percent_violation", "mean_violation", "median_violation"))
    assert (loss, p, mean, median) == (0.5, 0.5, 1.0, 1.0)
    assert abs(loss - p * mean) <= 1e-9


def test_score_requires_one_scorer(workspace):
    assert main(["score", "a.pdb"]) == 1


def test_extract_restraints_and_ecdf(workspace, data_dir):
    star = str(data_dir / "restraints_fixture.str")
    assert main(["extract-restraints", star, "--out", "r.csv"]) == 0
    text = (workspace / "r.csv").read_text()
    assert text.count("\n") == 1 + 4
    s = Structure.from_ca_trace([[3.8 * i, 0, 0] for i in range(4)])
    (workspace / "ca.pdb").write_text(write_pdb(s))
    two = RestraintGroup(1, (Restraint(AtomKey(1, "CA"), AtomKey(3, "CA"), 0.0, 5.0),)), \
        RestraintGroup(2, (Restraint(AtomKey(1, "CA"), AtomKey(2, "CA"), 0.0, 5.0),))
    (workspace / "two.csv").write_text(format_restraint_csv(two))
    assert main(["ecdf", "ca.pdb", "--restraints", "two.csv", "--out", "e.csv"]) == 0
    rows = list(csv.DictReader(io.StringIO((workspace / "e.csv").read_text())))
    assert [(float(r["threshold_angstrom"]), float(r["fraction"])) for r in rows] == [
        (0.0, 0.5), (pytest.approx(2.6), 1.0)]


def test_trace_plotdata_command(workspace):
    assert main(["run", "--config", "run.json"]) == 0
    assert main(["trace-plotdata", "out/trace.csv", "--out", "plot.csv"]) == 0
    header = (workspace / "plot.csv").read_text().splitlines()[0]
    assert header == "cycle,best,mean,index"
    broken = workspace / "broken.csv"
    broken.write_text("cycle,index,t,best_loss,mean_loss,best_id\n0,0,1.0,1.0,1.0,0\n1,0,1.0,2.0,2.0,0\n")
    assert main(["trace-plotdata", str(broken)]) == 1
