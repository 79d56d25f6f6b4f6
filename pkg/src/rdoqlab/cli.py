"""Command-line pipeline driver.

Subcommands: gen-data (label datasets), train (fit a refiner), eval
(compare quantizers), bdrate (delta rate between two RD tables), and
search-bench (timing and cost statistics for the search chain).

Logs go to standard output; machine-readable artifacts go to --out.
Exit codes: 0 success, 1 data or pipeline error, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .codec import make_quant_params, scalar_quantize, DEADZONE_OFFSET, \
    NIR_OFFSET, QuantParams
from .corpus import sample_corpus_sources
from .data import (DataFormatError, FrameSource, build_dataset,
                   label_source_blocks, read_dataset, read_stats)
from .metrics import (DEFAULT_QP_GRID, RDPoint, bd_rate, evaluate_quantizers,
                      report_text, rd_point_table)
from .nn.io import ModelFormatError, read_model, write_model
from .nn.models import (ClassSet, compute_sensitivity_map, init_arm,
                        init_fcnn, quantize_with_network)
from .nn.train import Hyperparams, TrainingSplit, train
from .search import (SearchConfig, _refine_candidates, batch_rd_cost,
                     brute_force_oracle, make_label, rdoq_baseline)

DEFAULT_SEED = 1


def _parse_classes(text: str) -> ClassSet:
    return ClassSet(tuple(int(v) for v in text.split(",")))


def _sources(args) -> tuple[list[FrameSource], list[FrameSource]]:
    if args.sample_corpus:
        return sample_corpus_sources()
    mk = lambda p: FrameSource(path=p, fmt=args.fmt, width=args.width,
                               height=args.height, bitdepth=args.bitdepth,
                               interleave=args.interleave)
    return [mk(p) for p in args.train or []], [mk(p) for p in args.val or []]


def _add_source_flags(sub, split: bool):
    if split:
        sub.add_argument("--train", nargs="+", metavar="PATH",
                         help="training-split source files")
        sub.add_argument("--val", nargs="+", metavar="PATH",
                         help="validation-split source files")
    else:
        sub.add_argument("--sources", nargs="+", metavar="PATH",
                         help="evaluation source files")
    sub.add_argument("--sample-corpus", action="store_true",
                     help="use the bundled synthetic image corpus")
    sub.add_argument("--fmt", choices=("pgm", "yuv"), default="pgm")
    sub.add_argument("--width", type=int, default=0)
    sub.add_argument("--height", type=int, default=0)
    sub.add_argument("--bitdepth", type=int, choices=(8, 10), default=8)
    sub.add_argument("--interleave", type=int, default=1,
                     help="keep every k-th frame of a video source")


def cmd_gen_data(args) -> int:
    train_src, val_src = _sources(args)
    if not train_src or not val_src:
        raise DataFormatError("gen-data needs --train and --val sources "
                              "(or --sample-corpus)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SearchConfig(passes=args.passes)
    cs = _parse_classes(args.classes)
    for qp in args.qp:
        tpath = out / f"train_n{args.n}_qp{qp}.ds"
        vpath = out / f"val_n{args.n}_qp{qp}.ds"
        spath = out / f"stats_n{args.n}_qp{qp}.st"
        _, _, summary = build_dataset(
            train_src, val_src, args.n, qp, cfg=cfg, class_set=cs,
            sq_offset=args.offset, alpha=args.alpha, seed=args.seed,
            max_per_plane=args.max_per_plane,
            train_path=tpath, val_path=vpath, stats_path=spath)
        hist = summary.class_histogram
        total = max(sum(hist.values()), 1)
        print(f"n={args.n} qp={qp}: {summary.train_count} train + "
              f"{summary.val_count} val blocks, {summary.skipped} skipped")
        for v in sorted(hist):
            print(f"  class {v:+d}: {hist[v]:>9d}  ({100.0 * hist[v] / total:.3f}%)")
        print(f"  mean J: sq {summary.mean_j_sq:.4f} -> "
              f"refined {summary.mean_j_ref:.4f} "
              f"({summary.rd_improvement_pct:+.3f}%)")
        print(f"  wrote {tpath} {vpath} {spath}")
    return 0


def _load_split(path) -> tuple:
    header, x, q_sq, q_ref = read_dataset(path)
    split = TrainingSplit(x=x.astype(np.float64),
                          q_sq=q_sq.astype(np.int64),
                          q_ref=q_ref.astype(np.int64))
    return header, split


def cmd_train(args) -> int:
    theader, tsplit = _load_split(args.train_file)
    vheader, vsplit = _load_split(args.val_file)
    if (theader.n, theader.qp, theader.class_set) != \
            (vheader.n, vheader.qp, vheader.class_set):
        raise DataFormatError("train/val dataset headers disagree")
    _, _, stats = read_stats(args.stats_file)
    quant = make_quant_params(
        theader.qp, offset=theader.sq_offset,
        **({} if args.alpha is None else {"alpha": args.alpha}))

    hidden = (tuple(int(v) for v in args.hidden.split(","))
              if args.hidden else None)
    init = init_fcnn if args.arch == "fcnn" else init_arm
    model = init(theader.n, theader.qp, class_set=theader.class_set,
                 hidden=hidden, seed=args.seed, stats=stats,
                 sq_offset=theader.sq_offset)
    print(f"{args.arch} n={theader.n} qp={theader.qp} "
          f"hidden={model.hidden} params={model.param_count()}")

    sens = None
    if args.sensitivity_map:
        sens = compute_sensitivity_map(
            tsplit.x, tsplit.q_ref, quant)
    cw = (tuple(float(v) for v in args.class_weights.split(","))
          if args.class_weights else None)
    hyper = Hyperparams(lr=args.lr, batch_size=args.batch_size,
                        epochs=args.epochs, patience=args.patience,
                        seed=args.seed,
                        use_sensitivity_map=args.sensitivity_map,
                        zero_mask_loss=args.zero_mask_loss,
                        class_weights=cw)
    result = train(tsplit, vsplit, model, quant, hyper, sens_map=sens,
                   log_fn=print)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wpath = out / f"{args.arch}_n{theader.n}_qp{theader.qp}.nnw"
    write_model(wpath, result.model)
    best = min(e.best_rd for e in result.log)
    print(f"best val-rd {best:.4f}; wrote {wpath}")
    return 0


def cmd_eval(args) -> int:
    if args.sample_corpus:
        train_src, val_src = sample_corpus_sources()
        sources = val_src if args.val_only else train_src + val_src
    else:
        if not args.sources:
            raise DataFormatError("eval needs --sources or --sample-corpus")
        mk = lambda p: FrameSource(path=p, fmt=args.fmt, width=args.width,
                                   height=args.height,
                                   bitdepth=args.bitdepth,
                                   interleave=args.interleave)
        sources = [mk(p) for p in args.sources]
    models = {}
    for spec in args.model or []:
        try:
            method, path = spec.split("=", 1)
        except ValueError:
            raise DataFormatError(f"bad --model {spec!r}; expected "
                                  "method=path") from None
        model = read_model(path)
        models[(method, model.qp)] = model
    methods = tuple(args.methods.split(","))
    result = evaluate_quantizers(
        sources, args.n, qps=tuple(args.qp), methods=methods, models=models,
        cfg=SearchConfig(passes=args.passes), alpha=args.alpha,
        zero_mask=not args.no_zero_mask)
    report = report_text(result)
    table = rd_point_table(result)
    print(report, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report)
        (out / "rd_points.csv").write_text(table)
        print(f"wrote {out / 'report.txt'} and {out / 'rd_points.csv'}")
    return 0


def _read_rd_table(path, method: str | None) -> list[RDPoint]:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != "method,qp,bpp,psnr_db":
        raise DataFormatError(f"{path}: not an RD-point table")
    rows = [line.split(",") for line in lines[1:]]
    names = sorted({r[0] for r in rows})
    if method is None:
        if len(names) != 1:
            raise DataFormatError(
                f"{path}: has methods {names}; pick one with a flag")
        method = names[0]
    pts = [RDPoint(float(r[2]), float(r[3])) for r in rows if r[0] == method]
    if not pts:
        raise DataFormatError(f"{path}: no rows for method {method!r}")
    return pts


def cmd_bdrate(args) -> int:
    test = _read_rd_table(args.test, args.test_method)
    ref = _read_rd_table(args.ref, args.ref_method)
    print(f"bd-rate {bd_rate(test, ref):+.4f}%")
    return 0


def cmd_search_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    params = make_quant_params(args.qp)
    blocks = [rng.normal(scale=rng.uniform(0.3, 4.0),
                         size=(args.n, args.n)) for _ in range(args.blocks)]
    if args.sample_corpus:
        _, val_src = sample_corpus_sources()
        cx, _, _ = label_source_blocks(
            val_src[0], args.n, params, SearchConfig(), seed=args.seed,
            max_per_plane=args.blocks)
        blocks += [np.asarray(b, dtype=np.float64) for b in cx]
    x = np.stack(blocks)
    cfg = SearchConfig(passes=args.passes)

    runs = {
        "nir": lambda: scalar_quantize(
            x, QuantParams(params.qp, params.step, NIR_OFFSET, params.lam)),
        "deadzone": lambda: scalar_quantize(
            x, QuantParams(params.qp, params.step, DEADZONE_OFFSET,
                           params.lam)),
        "rdoq": lambda: np.stack([rdoq_baseline(b, params) for b in x]),
        "refined": lambda: np.stack(
            [make_label(b, params, cfg)[1] for b in x]),
    }
    if args.n == 4:
        def run_oracle():
            outs = []
            for b in x:
                start = rdoq_baseline(b, params)
                cands = _refine_candidates(start.ravel())
                outs.append(brute_force_oracle(b, cands, params))
            return np.stack(outs)
        runs["oracle"] = run_oracle
    print(f"{'method':>10} {'mean-J':>12} {'total-s':>9} {'ms/blk':>8}")
    for name, fn in runs.items():
        t0 = time.perf_counter()
        q = fn()
        dt = time.perf_counter() - t0
        j = float(np.mean(batch_rd_cost(x, q, params)))
        print(f"{name:>10} {j:>12.4f} {dt:>9.3f} "
              f"{1e3 * dt / x.shape[0]:>8.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdoqlab",
        description="rate-distortion optimized quantization laboratory")
    subs = parser.add_subparsers(dest="command", required=True)

    g = subs.add_parser("gen-data", help="build labeled datasets")
    _add_source_flags(g, split=True)
    g.add_argument("--n", type=int, default=4, help="block side")
    g.add_argument("--qp", type=int, nargs="+", default=[22])
    g.add_argument("--classes", default="-1,0",
                   help="comma-separated adjustment class set")
    g.add_argument("--offset", type=float, default=NIR_OFFSET,
                   help="scalar-quantizer offset for the network input")
    g.add_argument("--passes", type=int, default=2)
    g.add_argument("--alpha", type=float, default=None)
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--max-per-plane", type=int, default=None)
    g.add_argument("--workers", type=int, default=1,
                   help="reserved; results do not depend on this value")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = subs.add_parser("train", help="train a neural refiner")
    t.add_argument("--train-file", required=True)
    t.add_argument("--val-file", required=True)
    t.add_argument("--stats-file", required=True)
    t.add_argument("--arch", choices=("fcnn", "arm"), default="fcnn")
    t.add_argument("--hidden", default=None,
                   help="comma-separated layer widths (default per size)")
    t.add_argument("--lr", type=float, default=3e-4)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--seed", type=int, default=DEFAULT_SEED)
    t.add_argument("--alpha", type=float, default=None)
    t.add_argument("--sensitivity-map", action="store_true")
    t.add_argument("--zero-mask-loss", action="store_true")
    t.add_argument("--class-weights", default=None,
                   help="comma-separated per-class loss weights")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    e = subs.add_parser("eval", help="compare quantizers on a corpus")
    _add_source_flags(e, split=False)
    e.add_argument("--val-only", action="store_true",
                   help="with --sample-corpus, restrict to the held-out image")
    e.add_argument("--n", type=int, default=4)
    e.add_argument("--qp", type=int, nargs="+", default=list(DEFAULT_QP_GRID))
    e.add_argument("--methods", default="nir,deadzone,rdoq,refined")
    e.add_argument("--model", action="append", metavar="METHOD=PATH",
                   help="weights file for fcnn/arm (repeatable)")
    e.add_argument("--passes", type=int, default=2)
    e.add_argument("--alpha", type=float, default=None)
    e.add_argument("--no-zero-mask", action="store_true")
    e.add_argument("--workers", type=int, default=1,
                   help="reserved; results do not depend on this value")
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    b = subs.add_parser("bdrate", help="delta rate between two RD tables")
    b.add_argument("test", help="RD-point csv of the method under test")
    b.add_argument("ref", help="RD-point csv of the reference")
    b.add_argument("--test-method", default=None)
    b.add_argument("--ref-method", default=None)
    b.set_defaults(fn=cmd_bdrate)

    s = subs.add_parser("search-bench",
                        help="timing and J statistics for the search chain")
    s.add_argument("--n", type=int, default=4)
    s.add_argument("--qp", type=int, default=22)
    s.add_argument("--blocks", type=int, default=100)
    s.add_argument("--passes", type=int, default=2)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--sample-corpus", action="store_true",
                   help="add corpus blocks to the synthetic ones")
    s.set_defaults(fn=cmd_search_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (DataFormatError, ModelFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
