"""``dkt`` command line: train, bench-optim, gradcheck, gen-synth.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from datetime import datetime, timezone

from . import __version__, cells, data, harness, optim

SCHEMA = "dkt-results"
SCHEMA_VERSION = 1

log = logging.getLogger("dkt")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None  # JSON has no NaN; an undefined AUC is written as null
    return obj


def results_document(command: str, cfg: harness.TrainConfig, **payload) -> dict:
    doc = {
        "schema": SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "command": command,
        "config": cfg.to_dict(),
    }
    doc.update(payload)
    return _clean(doc)


def write_atomic(path: str, text: str) -> None:
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".dkt-", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: str, doc: dict) -> None:
    write_atomic(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


class UsageError(Exception):
    pass


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", metavar="PATH", help="training dataset in the three-line format")
    src.add_argument("--synth", action="store_true", help="use the default synthetic dataset (the default)")
    p.add_argument("--test-data", metavar="PATH", help="separate test file (requires --data)")
    p.add_argument("--model", choices=cells.ARCHITECTURES, default="lstm")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--hidden-size", type=int, default=100)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--clip", type=_positive_float, default=5.0, help="global-norm clip threshold")
    p.add_argument("--no-clip", action="store_true", help="disable gradient clipping")
    p.add_argument("--max-len", type=int, default=data.DEFAULT_MAX_LEN)
    p.add_argument("--num-skills", type=int, default=None, help="minimum skill count (max with inferred)")
    p.add_argument("--weight-decay", type=float, default=None, help="AdamW decoupled decay")
    p.add_argument("--students", type=int, default=4000, help="synthetic students")
    p.add_argument("--skills", type=int, default=50, help="synthetic skills")
    p.add_argument("--len", dest="seq_len", type=int, default=50, help="synthetic sequence length")
    p.add_argument("--gamma", type=float, default=0.5, help="synthetic per-practice ability gain")
    p.add_argument("--out", metavar="FILE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dkt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and report per-epoch metrics")
    _add_run_flags(p)
    p.add_argument("--optimizer", choices=optim.OPTIMIZERS, default="adam")
    p.add_argument("--lr", type=float, default=None, help="learning rate (optimizer default if omitted)")

    p = sub.add_parser("bench-optim", help="one-epoch comparison of optimizers from shared weights")
    _add_run_flags(p)
    p.add_argument("--optimizers", default=",".join(optim.OPTIMIZERS), help="comma-separated subset, in order")
    p.add_argument("--lr", action="append", default=[], metavar="NAME=VALUE", help="per-optimizer learning rate")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for benchmark rows")
    p.add_argument("--sequential-timing", action="store_true", help="re-time parallel rows one by one")
    p.add_argument("--json", metavar="FILE", help="also write a results document")

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--model", choices=cells.ARCHITECTURES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--tolerance", type=_positive_float, default=1e-4)
    p.add_argument("--eps", type=_positive_float, default=1e-5)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset")
    p.add_argument("--students", type=int, default=4000)
    p.add_argument("--skills", type=int, default=50)
    p.add_argument("--len", dest="seq_len", type=int, default=50)
    p.add_argument("--ability-sd", type=float, default=1.0)
    p.add_argument("--difficulty-sd", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", metavar="FILE", required=True)
    return parser


def _config_from_args(args, optimizer: str, lr, epochs_default: int) -> harness.TrainConfig:
    if args.test_data and not args.data:
        raise UsageError("--test-data requires --data")
    try:
        synth = None
        if not args.data:
            synth = data.SynthConfig(args.students, args.skills, args.seq_len, learn_rate_gamma=args.gamma, seed=args.seed)
        return harness.TrainConfig(
            arch=args.model,
            optimizer=optimizer,
            lr=lr,
            weight_decay=args.weight_decay,
            epochs=args.epochs if args.epochs is not None else epochs_default,
            batch_size=args.batch_size,
            hidden_size=args.hidden_size,
            seed=args.seed,
            clip=None if args.no_clip else args.clip,
            test_fraction=args.test_fraction,
            max_len=args.max_len,
            num_skills=args.num_skills,
            data_path=args.data,
            test_path=args.test_data,
            synth=synth,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    cfg = _config_from_args(args, args.optimizer, args.lr, epochs_default=20)
    try:
        cfg.hyperparams()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    prepared = harness.prepare_data(cfg)
    records = []

    def on_epoch(rec):
        records.append(rec)
        print(rec.summary(), flush=True)
        if args.out:
            _write_json(args.out, results_document("train", cfg, num_skills=prepared.num_skills, epochs=[vars(r) for r in records]))

    harness.run_training(cfg, on_epoch=on_epoch, prepared=prepared)
    return 0


def _parse_lrs(items) -> dict[str, float]:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or name not in optim.OPTIMIZERS:
            raise UsageError(f"--lr expects NAME=VALUE with NAME in {optim.OPTIMIZERS}, got {item!r}")
        out[name] = float(value)
    return out


BENCH_COLUMNS = ("Optimizer", "Error", "Accuracy", "TimeSeconds")


def format_bench_table(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for r in rows:
        w.writerow([r.optimizer, f"{r.error:.6f}", f"{r.accuracy:.6f}", f"{r.time_s:.3f}"])
    return buf.getvalue()


def cmd_bench_optim(args) -> int:
    names = [n.strip() for n in args.optimizers.split(",") if n.strip()]
    bad = [n for n in names if n not in optim.OPTIMIZERS]
    if bad or not names:
        raise UsageError(f"--optimizers must name some of {optim.OPTIMIZERS}, got {args.optimizers!r}")
    lrs = _parse_lrs(args.lr)
    cfg = _config_from_args(args, names[0], None, epochs_default=1)
    rows = harness.bench_optimizers(cfg, names, lrs=lrs, jobs=args.jobs, sequential_timing=args.sequential_timing)
    table = format_bench_table(rows)
    sys.stdout.write(table)
    if args.out:
        write_atomic(args.out, table)
    if args.json:
        _write_json(args.json, results_document("bench-optim", cfg, learning_rates=lrs, benchmark=[vars(r) for r in rows]))
    return 0


def cmd_gradcheck(args) -> int:
    archs = cells.ARCHITECTURES if args.model == "all" else (args.model,)
    ok = True
    for arch in archs:
        report = harness.run_gradcheck(arch, seed=args.seed, tolerance=args.tolerance, eps=args.eps)
        for row in report.rows:
            status = "PASS" if row.passed else "FAIL"
            print(f"{arch} {row.block:<5} max_rel_err={row.max_rel_error:.3e} {status}")
        print(f"{arch}: {'PASS' if report.passed else 'FAIL ' + ','.join(report.failing())}")
        ok = ok and report.passed
    return 0 if ok else 1


def cmd_gen_synth(args) -> int:
    try:
        cfg = data.SynthConfig(args.students, args.skills, args.seq_len, args.ability_sd, args.difficulty_sd, args.gamma, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_atomic(args.out, data.format_dataset(data.gen_synthetic(cfg)))
    return 0


COMMANDS = {"train": cmd_train, "bench-optim": cmd_bench_optim, "gradcheck": cmd_gradcheck, "gen-synth": cmd_gen_synth}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dkt: error: {exc}", file=sys.stderr)
        return 2
    except (data.DatasetError, OSError, ValueError, FloatingPointError) as exc:
        print(f"dkt: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
