import json
import subprocess
import sys

import pytest

from segqc.checkpoint import load_checkpoint
from segqc.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, main
from segqc.io import (
    load_mask,
    read_manifest,
    read_ranking_csv,
    read_records,
    write_records,
    write_reference,
)
from segqc.masks import center_fit
from segqc.metrics import StructureScore, pseudo_scores
from segqc.model import reconstruct
from segqc.monitor import QualityRecord
from table1_data import records_and_reference

TRAIN_ARGS = ["--epochs", "3", "--bg-epochs", "1", "--size", "32", "--width", "0.25", "--batch-size", "2",
              "--lr", "1e-3", "--seed", "4"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    spec = root / "corrupt.json"
    spec.write_text(json.dumps([{"kind": "erode", "severity": 2, "target": "LV", "seed": 1},
                                {"kind": "random_blobs", "severity": 1, "target": "RV", "seed": 2}]))
    assert run("synth", "--n", 6, "--size", 32, "--seed", 1, "--out", root / "gt") == EXIT_OK
    assert run("synth", "--n", 4, "--size", 32, "--seed", 50, "--model-id", "netA", "--corrupt", spec,
               "--out", root / "test") == EXIT_OK
    assert run("train", "--manifest", root / "gt/manifest.json", "--out", root / "ca.sqca", *TRAIN_ARGS) == EXIT_OK
    assert run("pgt", "--ckpt", root / "ca.sqca", "--manifest", root / "test/manifest.json",
               "--out", root / "pgt") == EXIT_OK
    assert run("score", "--manifest", root / "test/manifest.json", "--pgt", root / "pgt",
               "--out", root / "records.jsonl", "--maps", root / "maps") == EXIT_OK
    # a second model segmenting the same cases, worse
    spec_b = root / "corrupt_b.json"
    spec_b.write_text(json.dumps({"kind": "dilate", "severity": 3, "target": "MYO"}))
    assert run("synth", "--n", 4, "--size", 32, "--seed", 50, "--model-id", "netB", "--corrupt", spec_b,
               "--out", root / "test_b") == EXIT_OK
    assert run("pgt", "--ckpt", root / "ca.sqca", "--manifest", root / "test_b/manifest.json",
               "--out", root / "pgt") == EXIT_OK
    assert run("score", "--manifest", root / "test_b/manifest.json", "--pgt", root / "pgt",
               "--out", root / "records_b.jsonl") == EXIT_OK
    return root


def test_pipeline_produces_every_artifact(workspace):
    root = workspace
    assert len(list((root / "gt/masks").glob("*.pgm"))) == 6
    assert (root / "test/reference.csv").exists()
    assert (root / "ca.sqca.log.jsonl").read_text().count("\n") == 3
    assert load_checkpoint(root / "ca.sqca").config.input_size == 32
    assert sorted(p.name for p in (root / "pgt").glob("*.pgm")) == [f"net{m}_case00{i}_ED.pgm" for m in "AB" for i in range(4)]
    assert len(list((root / "maps").glob("*_xor.pgm"))) == 4
    assert len(read_records(root / "records.jsonl")) == 4
    assert run("flag", "--records", root / "records.jsonl", "--out", root / "flagged.jsonl") == EXIT_OK
    both = [root / "records.jsonl", root / "records_b.jsonl"]
    refs = [root / "test/reference.csv", root / "test_b/reference.csv"]
    assert run("rank", "--records", *both, "--reference", *refs, "--out", root / "ranking.csv") == EXIT_OK
    assert run("scatter", "--records", *both, "--reference", *refs, "--out", root / "pairs.csv") == EXIT_OK
    rows, rs = read_ranking_csv(root / "ranking.csv")
    assert {r["structure"] for r in rows} == {"LV", "RV", "MYO"}
    assert len(rows) == 6 and len(rs) == 3
    assert (root / "pairs.csv").read_text().startswith("case_id,model_id,phase,structure")
    assert not list(root.rglob("*.tmp*"))


def test_pipeline_matches_in_process_composition(workspace):
    root = workspace
    model = load_checkpoint(root / "ca.sqca").to_model()
    manifest = read_manifest(root / "test/manifest.json")
    records = read_records(root / "records.jsonl")
    for entry, rec in zip(manifest.entries, records):
        mask = center_fit(manifest.load(entry), (32, 32))
        pgt, _ = reconstruct(model, mask)
        assert load_mask(root / "pgt" / f"{entry.stem}.pgm") == pgt
        direct = QualityRecord.from_scores(entry.case_id, "netA", "ED", pseudo_scores(mask, pgt))
        assert rec == direct


def test_subcommands_are_idempotent(workspace, tmp_path):
    root = workspace
    before = {p: p.read_bytes() for p in [root / "ca.sqca", root / "ca.sqca.log.jsonl", root / "records.jsonl",
                                          *(root / "pgt").glob("*.pgm"), *(root / "maps").glob("*.pgm")]}
    assert run("train", "--manifest", root / "gt/manifest.json", "--out", root / "ca.sqca", *TRAIN_ARGS) == EXIT_OK
    assert run("pgt", "--ckpt", root / "ca.sqca", "--manifest", root / "test/manifest.json",
               "--out", root / "pgt") == EXIT_OK
    assert run("score", "--manifest", root / "test/manifest.json", "--pgt", root / "pgt",
               "--out", root / "records.jsonl", "--maps", root / "maps") == EXIT_OK
    for p, data in before.items():
        assert p.read_bytes() == data, p
    assert run("synth", "--n", 6, "--size", 32, "--seed", 1, "--out", tmp_path / "gt") == EXIT_OK
    for p in (root / "gt").rglob("*.*"):
        assert (tmp_path / "gt" / p.relative_to(root / "gt")).read_bytes() == p.read_bytes()


def test_threads_preserve_order(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("SEGQC_THREADS", "3")
    root = workspace
    assert run("score", "--manifest", root / "test/manifest.json", "--pgt", root / "pgt",
               "--out", tmp_path / "r.jsonl") == EXIT_OK
    assert (tmp_path / "r.jsonl").read_bytes() == (root / "records.jsonl").read_bytes()
    monkeypatch.setenv("SEGQC_THREADS", "many")
    assert run("score", "--manifest", root / "test/manifest.json", "--pgt", root / "pgt",
               "--out", tmp_path / "r.jsonl") == EXIT_DATA


def test_flag_counts_one_erroneous(tmp_path, capsys):
    good = [StructureScore(1, "RV", 0.9, 4.0), StructureScore(2, "MYO", 0.8, 5.0), StructureScore(3, "LV", 0.9, 3.0)]
    bad = good[:2] + [StructureScore(3, "LV", 0.0, 0.0, True, False)]
    recs = [QualityRecord.from_scores(f"c{i}", "m", "ED", good) for i in range(5)]
    recs.append(QualityRecord.from_scores("c9", "m", "ED", bad))
    write_records(tmp_path / "r.jsonl", recs)
    assert run("flag", "--records", tmp_path / "r.jsonl") == EXIT_OK
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary == {"records": 6, "ok": 5, "suspicious": 0, "erroneous": 1}


def test_flag_rederives_with_new_thresholds(tmp_path):
    scores = [StructureScore(1, "RV", 0.9, 60.0), StructureScore(2, "MYO", 0.8, 5.0), StructureScore(3, "LV", 0.9, 3.0)]
    write_records(tmp_path / "r.jsonl", [QualityRecord.from_scores("c", "m", "ED", scores)])
    assert run("flag", "--records", tmp_path / "r.jsonl", "--hd-max", 70, "--out", tmp_path / "o.jsonl") == EXIT_OK
    assert read_records(tmp_path / "o.jsonl")[0].flag == "ok"
    assert read_records(tmp_path / "r.jsonl")[0].flag == "suspicious"


def test_rank_reproduces_table1(tmp_path):
    records, reference = records_and_reference()
    write_records(tmp_path / "ours.jsonl", records)
    write_reference(tmp_path / "gt.csv", reference)
    assert run("rank", "--records", tmp_path / "ours.jsonl", "--reference", tmp_path / "gt.csv",
               "--out", tmp_path / "table.csv") == EXIT_OK
    _, rs = read_ranking_csv(tmp_path / "table.csv")
    assert rs[("RV", "ED")] == pytest.approx(1.0, abs=1e-12)
    assert rs[("LV", "ED")] == pytest.approx(0.9, abs=1e-12)
    assert run("rank", "--records", tmp_path / "ours.jsonl", "--structures", "RV", "--phases", "ED") == EXIT_OK


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--manifest", "m.json"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["score", "--manifest", "m", "--pgt", "p", "--out", "o", "--hd-max", "lots"])
    assert info.value.code == EXIT_USAGE
    assert "--hd-max" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_USAGE


def test_data_errors_exit_2(tmp_path, capsys):
    assert run("pgt", "--ckpt", tmp_path / "none.sqca", "--manifest", tmp_path / "m.json", "--out", tmp_path) == EXIT_DATA
    (tmp_path / "m.json").write_text(json.dumps({"schema_version": 2, "entries": []}))
    assert run("score", "--manifest", tmp_path / "m.json", "--pgt", tmp_path, "--out", tmp_path / "r") == EXIT_DATA
    assert "schema version" in capsys.readouterr().err
    (tmp_path / "bad.json").write_text("[{\"kind\": \"melt\"}]")
    assert run("synth", "--n", 1, "--corrupt", tmp_path / "bad.json", "--out", tmp_path / "s") == EXIT_DATA


def test_checkpoint_manifest_mismatch_exits_2(workspace, tmp_path):
    assert run("synth", "--n", 2, "--size", 48, "--out", tmp_path / "big") == EXIT_OK
    assert run("pgt", "--ckpt", workspace / "ca.sqca", "--manifest", tmp_path / "big/manifest.json",
               "--out", tmp_path / "p") == EXIT_OK  # center_fit crops 48 -> 32
    bad = tmp_path / "bad.sqca"
    data = bytearray((workspace / "ca.sqca").read_bytes())
    data[0] = ord("X")
    bad.write_bytes(bytes(data))
    assert run("pgt", "--ckpt", bad, "--manifest", tmp_path / "big/manifest.json", "--out", tmp_path / "p") == EXIT_DATA


def test_gradcheck_passes(capsys):
    assert run("gradcheck") == EXIT_OK
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["failed"] == []


def test_gradcheck_failure_exits_3(monkeypatch, capsys):
    import segqc.cli as cli
    from segqc.nn import GradCheckReport

    monkeypatch.setattr(cli, "run_gradcheck", lambda seed: [("broken", GradCheckReport(1e-4, {"x": 1.0}, {"x": 1}))])
    assert run("gradcheck") == EXIT_VERIFY


def test_installed_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "segqc.cli", "synth", "--n", "2", "--size", "32",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == EXIT_OK, proc.stderr
    assert (tmp_path / "manifest.json").exists()
    proc = subprocess.run([sys.executable, "-m", "segqc.cli"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
