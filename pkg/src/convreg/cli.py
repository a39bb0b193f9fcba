"""Command-line entry point: ``convreg {track,eval,synth,converge,ablate}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, RunConfig
from .evaluation import SequenceError, load_corpus, load_sequence, read_frame, run_ope, write_boxes, write_report
from .features import FeatureError, load_feature_map
from .maps import target_map
from .synth import SUITES, generate_sequence, save_otb, suite_config
from .tracker import track_sequence

log = logging.getLogger("convreg")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _scales(text: str) -> tuple[float, ...]:
    try:
        v = tuple(float(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not v or any(s <= 0 for s in v):
        raise argparse.ArgumentTypeError("scales must be positive")
    return v


def _configs(text: str) -> list[tuple[float, float]]:
    out = []
    for item in text.split(";"):
        try:
            th, a = (float(v) for v in item.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected 'th,a;th,a;...', got {text!r}") from None
        out.append((th, a))
    return out


def _cells(text: str) -> tuple[int, int]:
    try:
        r, c = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'rows,cols', got {text!r}") from None
    if r < 1 or c < 1:
        raise argparse.ArgumentTypeError("receptive field must be at least 1x1")
    return r, c


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {"rng_seed": args.seed}
    if args.threads is not None:
        overrides["threads"] = args.threads
    if getattr(args, "scales", None):
        overrides["scales"] = args.scales
    return cfg.replace(**overrides)


# commands ---------------------------------------------------------------------


def cmd_track(args) -> int:
    cfg = _run_config(args)
    seq = load_sequence(args.seq_dir)
    t0 = time.perf_counter()
    boxes = track_sequence((read_frame(f) for f in seq.frames), seq.gt[0], cfg.tracker)
    dt = time.perf_counter() - t0
    out = Path(args.out)
    (out / "boxes").mkdir(parents=True, exist_ok=True)
    write_boxes(boxes, out / "boxes" / f"{seq.name}.txt")
    fps = len(boxes) / dt if dt > 0 else 0.0
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "frames", "seconds", "fps"])
        w.writerow([seq.name, len(boxes), f"{dt:.3f}", f"{fps:.2f}"])
    print(f"{seq.name}: {len(boxes)} frames in {dt:.2f}s ({fps:.1f} fps)")
    return EXIT_OK


def _corpus(path):
    if not Path(path).is_dir():
        raise InputError(f"corpus directory not found: {path}")
    seqs, errors = load_corpus(path)
    for e in errors:
        print(f"warning: {e}", file=sys.stderr)
    if not seqs:
        raise InputError(f"no valid sequences under {path}")
    return seqs, errors


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    seqs, errors = _corpus(args.corpus_dir)
    report = run_ope(seqs, cfg.tracker, threads=args.threads or 1, errors=errors)
    write_report(report, args.out)
    for r in report.results:
        print(f"{r.name}: DP {r.dp:.3f} OS {r.os:.3f} AUC {r.auc:.3f} {r.fps:.1f} fps")
    if report.results:
        print(f"mean: DP {report.dp:.3f} OS {report.os:.3f} AUC {report.auc:.3f}")
    return EXIT_OK if report.results and len(report.errors) == len(errors) else EXIT_RUNTIME


def cmd_synth(args) -> int:
    out = Path(args.out)
    for k in range(args.count):
        seed = args.seed + k
        frames, gt = generate_sequence(suite_config(args.suite, seed, args.frames))
        save_otb(frames, gt, out / f"{args.suite}_{seed:03d}")
    print(f"wrote {args.count} {args.suite} sequences to {out}")
    return EXIT_OK


def cmd_converge(args) -> int:
    from .experiments import convergence_patch, run_convergence
    from .features import standardize
    from .plots import line_plot

    cfg = _run_config(args)
    if args.patch:
        if args.rf is None:
            raise InputError("--rf is required with --patch")
        fmap = standardize(load_feature_map(args.patch))
        rf = args.rf
        shape = (fmap.grid_h - rf[0] + 1, fmap.grid_w - rf[1] + 1)
        if shape[0] < 1 or shape[1] < 1:
            raise InputError(f"receptive field {rf} larger than the patch grid {fmap.grid_h}x{fmap.grid_w}")
        target = target_map(shape, rf)
    else:
        fmap, target, rf = convergence_patch(args.seed, cfg.tracker)
    if args.flat_target:
        target = target * 0.0
    results = run_convergence(
        fmap,
        target,
        rf,
        args.configs,
        args.steps,
        lr=cfg.converge_lr,
        lam=cfg.tracker.loss.lam,
        seed=args.seed,
        init_std=cfg.tracker.train.init_std,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ok = [r for r in results if r.trace is not None]
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["th", "a", "step", "data_loss", "total_loss", "snr"])
        for r in ok:
            t = r.trace
            for i in range(len(t.snr)):
                w.writerow([f"{r.th:g}", f"{r.a:g}", i, f"{t.data_loss[i]:.9g}", f"{t.total_loss[i]:.9g}", f"{t.snr[i]:.9g}"])
    with open(out / "snr.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", *(r.label for r in ok)])
        for i in range(args.steps + 1):
            w.writerow([i, *(f"{r.trace.snr[i]:.9g}" for r in ok)])
    if ok:
        line_plot(
            out / "snr.svg",
            list(range(args.steps + 1)),
            {r.label: r.trace.snr for r in ok},
            "step",
            "SNR",
            "Convergence under SGD",
        )
    for r in results:
        if r.trace is None:
            print(f"{r.label}: {r.error}", file=sys.stderr)
        else:
            print(f"{r.label}: final SNR {r.trace.snr[-1]:.3f}")
    return EXIT_OK if len(ok) == len(results) else EXIT_RUNTIME


def cmd_ablate(args) -> int:
    from .experiments import ablation_grid

    cfg = _run_config(args)
    seqs, errors = _corpus(args.corpus_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    failed = False
    for label, tcfg in ablation_grid(args.dimension, cfg.tracker):
        report = run_ope(seqs, tcfg, threads=args.threads or 1)
        for e in report.errors:
            print(f"{label}: {e}", file=sys.stderr)
        failed |= bool(report.errors) or not report.results
        if report.results:
            rows.append((label, report.os, report.dp, report.auc, len(report.results)))
    with open(out / f"ablation_{args.dimension}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "os50", "dp20", "auc", "sequences"])
        for label, os_, dp, auc, n in rows:
            w.writerow([label, f"{os_:.6f}", f"{dp:.6f}", f"{auc:.6f}", n])
    print(f"{'config':<12} {'OS':>6} {'DP':>6} {'AUC':>6}")
    for label, os_, dp, auc, _ in rows:
        print(f"{label:<12} {os_:6.3f} {dp:6.3f} {auc:6.3f}")
    return EXIT_RUNTIME if failed else EXIT_OK


# parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value run configuration file")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, default=0, metavar="U64", help="seed for initialisation and synthesis")
    common.add_argument("--threads", type=_positive_int, metavar="N", help="cap on parallel workers")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    p = argparse.ArgumentParser(prog="convreg", description="Convolutional regression tracker.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", parents=[common], help="track one OTB-style sequence")
    t.add_argument("seq_dir", help="directory with img/ and groundtruth_rect.txt")
    t.add_argument("--scales", type=_scales, metavar="S1,S2,S3", help="scale factors searched per frame")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", parents=[common], help="one-pass evaluation over a corpus of sequences")
    e.add_argument("corpus_dir", help="directory of sequence directories")
    e.add_argument("--scales", type=_scales, metavar="S1,S2,S3", help="scale factors searched per frame")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", parents=[common], help="write synthetic sequences in OTB layout")
    s.add_argument("--suite", choices=SUITES, default="easy", help="sequence family (default: easy)")
    s.add_argument("--count", type=_positive_int, default=5, help="number of sequences (default: 5)")
    s.add_argument("--frames", type=_positive_int, help="frames per sequence (default: suite preset)")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("converge", parents=[common], help="SNR-vs-step comparison of loss settings under SGD")
    c.add_argument("--patch", metavar="CRFM", help="feature map file; default is a synthetic clutter patch")
    c.add_argument("--rf", type=_cells, metavar="ROWS,COLS", help="receptive field in cells (required with --patch)")
    c.add_argument(
        "--configs",
        type=_configs,
        default=[(0.0, 0.0), (0.05, 0.0), (0.05, 1.0)],
        metavar="TH,A;...",
        help="loss settings to compare (default: 0,0;0.05,0;0.05,1)",
    )
    c.add_argument("--steps", type=int, default=500, help="SGD steps per setting (default: 500)")
    c.add_argument("--flat-target", action="store_true", help="train against an all-zero target map")
    c.set_defaults(func=cmd_converge)

    a = sub.add_parser("ablate", parents=[common], help="OS/DP table over a configuration grid")
    a.add_argument("corpus_dir", help="directory of sequence directories")
    a.add_argument("--dimension", choices=("ahnm", "patch_size"), default="ahnm", help="grid to sweep")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "steps", 0) < 0:
        parser.error("--steps must be >= 0")
    try:
        return args.func(args)
    except (InputError, ConfigError, SequenceError, FeatureError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
