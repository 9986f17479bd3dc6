"""
The whole pipeline from the command line
========================================

``segqc`` subcommands write plain files: PGM masks, a JSON manifest, a
binary checkpoint, JSON-lines records and CSV tables. Here they are driven
in-process through ``segqc.cli.main``; the shell equivalent is shown.
"""
import json
import tempfile
from pathlib import Path

from segqc.cli import main

work = Path(tempfile.mkdtemp(prefix="segqc-demo-"))


def segqc(*args):
    argv = [str(a) for a in args]
    print("$ segqc", " ".join(argv))
    code = main(argv)
    assert code == 0, code


# trusted masks for training, and the output of a flawed segmenter
segqc("synth", "--n", 8, "--size", 32, "--seed", 1, "--out", work / "trusted")
(work / "errors.json").write_text(json.dumps({"kind": "erode", "severity": 1, "target": None}))
segqc("synth", "--n", 4, "--size", 32, "--seed", 9, "--model-id", "netA",
      "--corrupt", work / "errors.json", "--out", work / "netA")

segqc("train", "--manifest", work / "trusted/manifest.json", "--out", work / "ca.sqca",
      "--size", 32, "--width", 0.5, "--epochs", 20, "--lr", 1e-3, "--batch-size", 2)
segqc("pgt", "--ckpt", work / "ca.sqca", "--manifest", work / "netA/manifest.json", "--out", work / "pgt")
segqc("score", "--manifest", work / "netA/manifest.json", "--pgt", work / "pgt",
      "--out", work / "records.jsonl", "--maps", work / "maps")
segqc("flag", "--records", work / "records.jsonl", "--hd-max", 50, "--dsc-min", 0.5)
segqc("scatter", "--records", work / "records.jsonl", "--reference", work / "netA/reference.csv",
      "--out", work / "pairs.csv")
print(sorted(p.name for p in work.iterdir()))
