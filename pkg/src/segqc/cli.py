"""Command line: ``segqc <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .errors import SegQCError
from .io import (
    atomic_write_text,
    ranking_csv,
    read_manifest,
    read_records,
    read_reference,
    scatter_csv,
    write_records,
)
from .model import TrainConfig
from .monitor import ERRONEOUS, FLAGS, OK, Thresholds, scatter_export, simulate_ranking

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def cmd_train(args):
    from .pipeline import train_from_manifest

    manifest = read_manifest(args.manifest)
    tcfg = TrainConfig(epochs=args.epochs, bg_exclusion_epochs=min(args.bg_epochs, args.epochs), lr=args.lr,
                       weight_decay=args.wd, batch_size=args.batch_size, split_ratio=args.split, seed=args.seed)

    def report(e):
        if args.verbose:
            print(f"epoch {e.epoch:4d}  train {e.train_loss:.5f}  val {e.val_loss:.5f}", file=sys.stderr)

    result = train_from_manifest(manifest, args.out, tcfg, args.size, args.width, args.weights, report)
    ck = result.checkpoint
    print(json.dumps({"checkpoint": str(args.out), "best_epoch": ck.epoch, "best_val_loss": ck.best_val_loss,
                      "final_train_loss": result.log[-1].train_loss}))
    return EXIT_OK


def cmd_pgt(args):
    from .pipeline import generate_pgts

    manifest = read_manifest(args.manifest)
    pgts = generate_pgts(args.ckpt, manifest, args.out)
    print(f"wrote {len(pgts)} pseudo ground truths to {args.out}")
    return EXIT_OK


def cmd_score(args):
    from .pipeline import score_manifest

    manifest = read_manifest(args.manifest)
    records = score_manifest(manifest, args.pgt, Thresholds(args.hd_max, args.dsc_min), args.maps)
    write_records(args.out, records)
    counts = Counter(r.flag for r in records)
    print(json.dumps({"records": len(records), **{f: counts.get(f, 0) for f in FLAGS}}))
    return EXIT_OK


def cmd_flag(args):
    thresholds = Thresholds(args.hd_max, args.dsc_min)
    records = [r for path in args.records for r in read_records(path)]
    for r in records:
        r.flag = r.reflag(thresholds)
        if r.flag != OK:
            worst = ", ".join(f"{n} pHD={s.hd:.2f} pDSC={s.dsc:.3f}" for n, s in r.scores.items())
            print(f"{r.flag:<10s} {r.model_id} {r.case_id} {r.phase}: {worst}")
    if args.out:
        write_records(args.out, records)
    counts = Counter(r.flag for r in records)
    print(json.dumps({"records": len(records), **{f: counts.get(f, 0) for f in FLAGS}}))
    return EXIT_OK


def cmd_rank(args):
    records = [r for path in args.records for r in read_records(path)]
    reference = [r for path in args.reference for r in read_reference(path)] if args.reference else None
    tables = simulate_ranking(records, reference, args.structures, args.phases)
    text = ranking_csv(tables)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    for t in tables:
        if t.r_s is not None:
            print(f"{t.structure}/{t.phase}: r_s = {t.r_s:.2f}", file=sys.stderr)
    return EXIT_OK


def cmd_scatter(args):
    records = [r for path in args.records for r in read_records(path)]
    series = scatter_export(records, [r for path in args.reference for r in read_reference(path)])
    atomic_write_text(args.out, scatter_csv(series))
    for name, s in series.items():
        print(f"{name}: r(DSC, pDSC) = {s.r_dsc:.3f}  r(HD, pHD) = {s.r_hd:.3f}")
    return EXIT_OK


def cmd_synth(args):
    from .pipeline import parse_corruptions, synthesize

    corruptions = None
    if args.corrupt:
        try:
            corruptions = parse_corruptions(json.loads(Path(args.corrupt).read_text()))
        except FileNotFoundError:
            raise SegQCError(f"corruption spec not found: {args.corrupt}") from None
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SegQCError(f"{args.corrupt}: bad corruption spec ({exc})") from None
    manifest = synthesize(args.out, args.n, args.size, args.seed, corruptions, args.model_id, args.phase,
                          tuple(args.spacing))
    print(f"wrote {len(manifest.entries)} masks to {args.out}")
    return EXIT_OK


def reconstruction_loss(probs, target):
    from .nn import generalized_dice_loss, mse_loss

    mse, g_mse = mse_loss(probs, target)
    gd, g_gd = generalized_dice_loss(probs, target)
    return mse + gd, g_mse + g_gd


def run_gradcheck(seed=0, verbose=True):
    """Finite-difference checks of every layer kind, both losses and a small autoencoder."""
    from .model import ArchitectureConfig, build
    from .nn import LayerSpec, check_function_gradient, generalized_dice_loss, gradient_check, make_layer, mse_loss
    from .nn.layers import he_normal_init

    rng = np.random.default_rng(seed)
    results = []

    def layer(spec):
        lay = make_layer(spec, np.float64)
        he_normal_init([lay], rng)
        for k in lay.params:
            if k == "bias" or spec.kind == "batchnorm":
                lay.params[k] = lay.params[k] + rng.standard_normal(lay.params[k].shape)
        return lay

    x = rng.standard_normal((2, 2, 6, 6))
    cases = [
        ("conv k3 s1 p1", layer(LayerSpec("conv", 2, 3, 3, 1, 1))),
        ("conv k4 s2 p1", layer(LayerSpec("conv", 2, 3, 4, 2, 1))),
        ("conv_transpose k3 s1 p1", layer(LayerSpec("conv_transpose", 2, 3, 3, 1, 1))),
        ("conv_transpose k4 s2 p1", layer(LayerSpec("conv_transpose", 2, 3, 4, 2, 1))),
        ("batchnorm", layer(LayerSpec("batchnorm", 2, 2))),
        ("leaky_relu", layer(LayerSpec("leaky_relu"))),
        ("dropout", layer(LayerSpec("dropout", drop_prob=0.3))),
        ("softmax_channel", layer(LayerSpec("softmax_channel"))),
    ]
    for name, lay in cases:
        results.append((name, gradient_check(lay, x, 1e-4, seed=seed)))

    target = np.eye(4)[rng.integers(0, 4, (2, 5, 5))].transpose(0, 3, 1, 2)
    pred = rng.random((2, 4, 5, 5)) + 0.05
    pred /= pred.sum(axis=1, keepdims=True)
    results.append(("mse_loss", check_function_gradient(lambda p: mse_loss(p, target), pred, 1e-4)))
    for bg in (True, False):
        results.append((f"generalized_dice_loss bg={bg}",
                        check_function_gradient(lambda p: generalized_dice_loss(p, target, bg), pred, 1e-4)))

    small = ArchitectureConfig.scaled(16, scale_factor=0.125, latent_maps=4, latent_size=2)
    model = build(small, seed)
    xm = np.eye(4)[rng.integers(0, 4, (2, 16, 16))].transpose(0, 3, 1, 2)
    results.append(("autoencoder 16x16", gradient_check(
        model.network, xm, 1e-3, seed=seed, max_probes=6, loss=lambda p: reconstruction_loss(p, xm))))
    if verbose:
        for name, rep in results:
            print(f"[{name}] {rep}")
    return results


def cmd_gradcheck(args):
    results = run_gradcheck(args.seed)
    failed = [n for n, r in results if not r.passed]
    print(json.dumps({"checks": len(results), "failed": failed}))
    return EXIT_VERIFY if failed else EXIT_OK


def make_parser():
    p = _Parser(prog="segqc", description="Segmentation quality control without ground truth.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train the mask autoencoder on trusted masks")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="checkpoint path; a .log.jsonl is written beside it")
    t.add_argument("--epochs", type=_positive_int, default=500)
    t.add_argument("--bg-epochs", type=int, default=10, help="epochs with background left out of the Dice loss")
    t.add_argument("--lr", type=float, default=2e-4)
    t.add_argument("--wd", type=float, default=1e-5)
    t.add_argument("--batch-size", type=_positive_int, default=8)
    t.add_argument("--split", type=float, default=0.8)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--size", type=_positive_int, default=256, help="canvas size masks are centered into")
    t.add_argument("--width", type=float, default=1.0, help="hidden channel multiplier")
    t.add_argument("--weights", choices=("best", "final"), default="best")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("pgt", help="reconstruct pseudo ground truths")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--manifest", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_pgt)

    s = sub.add_parser("score", help="pseudo Dice / Hausdorff against the pGTs")
    s.add_argument("--manifest", required=True)
    s.add_argument("--pgt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--maps", help="directory for XOR inconsistency maps")
    s.add_argument("--hd-max", type=float, default=50.0)
    s.add_argument("--dsc-min", type=float, default=0.5)
    s.set_defaults(func=cmd_score)

    f = sub.add_parser("flag", help="re-derive alert flags with given thresholds")
    f.add_argument("--records", nargs="+", required=True)
    f.add_argument("--hd-max", type=float, default=50.0)
    f.add_argument("--dsc-min", type=float, default=0.5)
    f.add_argument("--out")
    f.set_defaults(func=cmd_flag)

    r = sub.add_parser("rank", help="rank models by mean pHD")
    r.add_argument("--records", nargs="+", required=True)
    r.add_argument("--reference", nargs="+", help="real-score CSV files")
    r.add_argument("--out")
    r.add_argument("--structures", nargs="+")
    r.add_argument("--phases", nargs="+")
    r.set_defaults(func=cmd_rank)

    c = sub.add_parser("scatter", help="export real vs pseudo score pairs")
    c.add_argument("--records", nargs="+", required=True)
    c.add_argument("--reference", nargs="+", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_scatter)

    y = sub.add_parser("synth", help="generate a synthetic mask dataset")
    y.add_argument("--n", type=_positive_int, required=True)
    y.add_argument("--size", type=_positive_int, default=64)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--corrupt", help="JSON corruption spec (object or list)")
    y.add_argument("--model-id")
    y.add_argument("--phase", choices=("ED", "ES"), default="ED")
    y.add_argument("--spacing", type=float, nargs=2, default=(1.0, 1.0))
    y.add_argument("--out", required=True)
    y.set_defaults(func=cmd_synth)

    k = sub.add_parser("gradcheck", help="verify engine gradients by finite differences")
    k.add_argument("--seed", type=int, default=0)
    k.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SegQCError, OSError) as exc:
        print(f"segqc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
