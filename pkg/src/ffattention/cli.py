"""Command-line entry point: ``ffattention <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 a check-mode
threshold was missed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as fio
from .model import PoolingMode, SequenceBatch, backward, forward
from .numeric import NumericError, Rng
from .optim import init_params
from .tasks import Fixed, Range, TaskKind, dump_jsonl, generate_batch, make_test_set, parse_length_spec
from .trainer import DEFAULT_LR_GRID, TrainConfig, best_result, lr_sweep, train
from .verify import check_gradients, random_params

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

DESK_T0S = (50, 100, 500)
DESK_RANGE = (50, 1000)
# Epoch limits used by --check, per task.
TABLE1_EPOCH_LIMITS = {TaskKind.ADDITION: 5, TaskKind.MULTIPLICATION: 15}
VARLEN_MIN_ACCURACY = 0.99

# Epochs to reach perfect accuracy, or final accuracy in percent when unsolved.
REFERENCE_TABLE1 = {
    ("addition", "attention"): {50: 1, 100: 1, 500: 1, 1000: 1, 5000: 2, 10000: 3},
    ("addition", "mean"): {50: 1, 100: 1, 500: 1, 1000: 2, 5000: 8, 10000: 17},
    ("multiplication", "attention"): {50: 1, 100: 2, 500: 4, 1000: 2, 5000: 15, 10000: 6},
    ("multiplication", "mean"): {50: 2, 100: 2, 500: 8, 1000: 33, 5000: "89.8%", 10000: "80.8%"},
}

log = logging.getLogger("ffattention")


class UsageError(Exception):
    pass


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--task", choices=[k.value for k in TaskKind], default="addition")
    common.add_argument("--pooling", choices=[p.value for p in PoolingMode] + ["both"],
                        default="attention")
    common.add_argument("--t0", type=int, help="nominal length; T ~ U[T0, 1.1*T0]")
    common.add_argument("--len-lo", type=int)
    common.add_argument("--len-hi", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--lr-grid", type=_floats)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--seeds", type=_ints)
    common.add_argument("--epochs", "--max-epochs", dest="epochs", type=int, default=100)
    common.add_argument("--batch", type=int, default=100)
    common.add_argument("--updates-per-epoch", type=int, default=1000)
    common.add_argument("--test-size", type=int, default=1000)
    common.add_argument("--threshold", type=float, default=0.04)
    common.add_argument("--target-accuracy", type=float, default=1.0,
                        help="stop once test accuracy reaches this value")
    common.add_argument("--dim", type=int, default=100)
    common.add_argument("--out", type=Path, default=Path("runs"))
    common.add_argument("--workers", type=_ints, default=[1])
    common.add_argument("--check", action="store_true",
                        help="exit 3 if the run misses its acceptance threshold")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ffattention", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="one training run")
    sub.add_parser("sweep", parents=[common], help="one run per learning rate, keep the best")
    p = sub.add_parser("table1", parents=[common], help="epochs-to-solve grid over T0, task, pooling")
    p.add_argument("--t0s", type=_ints, default=list(DESK_T0S))
    p.add_argument("--tasks", default="addition,multiplication")
    p.set_defaults(pooling="both")
    sub.add_parser("varlen", parents=[common], help="training on widely varying lengths")
    p = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference gradients")
    p.add_argument("--configs", type=int, default=20)
    p = sub.add_parser("bench", parents=[common], help="forward+backward thread scaling")
    p.add_argument("--repeats", type=int, default=3)
    p = sub.add_parser("dump", parents=[common], help="write task instances as JSON lines")
    p.add_argument("--count", type=int, default=10)
    p = sub.add_parser("resume", parents=[common], help="continue training from a checkpoint")
    p.add_argument("checkpoint", type=Path)
    return parser


def length_spec(args, default=None):
    if args.t0 is not None and (args.len_lo is not None or args.len_hi is not None):
        raise UsageError("use either --t0 or --len-lo/--len-hi, not both")
    if args.t0 is not None:
        return Fixed(args.t0)
    if args.len_lo is not None or args.len_hi is not None:
        if args.len_lo is None or args.len_hi is None:
            raise UsageError("--len-lo and --len-hi go together")
        return Range(args.len_lo, args.len_hi)
    if default is None:
        raise UsageError("a length is required: --t0 N or --len-lo N --len-hi N")
    return default


def lr_grid(args):
    if args.lr_grid is not None and args.lr is not None:
        raise UsageError("use either --lr or --lr-grid, not both")
    if args.lr is not None:
        return [args.lr]
    grid = list(DEFAULT_LR_GRID) if args.lr_grid is None else args.lr_grid
    if not grid:
        raise UsageError("learning-rate grid is empty")
    return grid


def seeds(args):
    return args.seeds if args.seeds else [args.seed]


def poolings(args):
    if args.pooling == "both":
        return [PoolingMode.ATTENTION, PoolingMode.MEAN]
    return [PoolingMode(args.pooling)]


def base_config(args, lengths, pooling=None, seed=None) -> TrainConfig:
    return TrainConfig(
        task=TaskKind(args.task),
        lengths=lengths,
        pooling=pooling or poolings(args)[0],
        lr=args.lr if args.lr is not None else DEFAULT_LR_GRID[1],
        batch_size=args.batch,
        updates_per_epoch=args.updates_per_epoch,
        max_epochs=args.epochs,
        test_size=args.test_size,
        accuracy_threshold=args.threshold,
        seed=args.seed if seed is None else seed,
        D=args.dim,
        target_accuracy=args.target_accuracy,
        workers=args.workers[0],
    )


def _progress(cfg):
    def report(rep):
        log.info("%s %s %s lr=%g seed=%d epoch %d loss %.4g acc %.4f (%.1fs)",
                 cfg.task.value, cfg.pooling.value, cfg.lengths, cfg.lr, cfg.seed,
                 rep.epoch, rep.train_loss, rep.test_accuracy, rep.wall_seconds)
    return report


def _write_run(out: Path, result, extra=None):
    fio.write_epochs_csv(out / "epochs.csv", [result])
    fio.write_json(out / "result.json", fio.result_dict(result, extra))
    fio.save_checkpoint(out / "checkpoint.json", result)


def cmd_train(args) -> int:
    cfg = base_config(args, length_spec(args))
    if args.lr_grid is not None:
        raise UsageError("train takes a single --lr; use sweep for a grid")
    result = train(cfg, on_epoch=_progress(cfg))
    _write_run(args.out, result)
    print(json.dumps(result.summary()))
    return EXIT_OK


def cmd_resume(args) -> int:
    config, params, state, done = fio.load_checkpoint(args.checkpoint)
    config["lengths"] = parse_length_spec(config["lengths"])
    config["max_epochs"] = args.epochs
    cfg = TrainConfig(**config)
    result = train(cfg, on_epoch=_progress(cfg), resume=(params, state, done))
    _write_run(args.out, result, {"resumed_from_epoch": done})
    print(json.dumps(result.summary()))
    return EXIT_OK


def _sweep_all(args, lengths, pooling, seed):
    template = base_config(args, lengths, pooling, seed)
    grid = lr_grid(args)
    best, results = lr_sweep(template, grid, on_epoch=lambda rep: log.info(
        "%s %s %s seed=%d epoch %d acc %.4f", template.task.value, pooling.value, lengths,
        seed, rep.epoch, rep.test_accuracy))
    return best, results


def cmd_sweep(args) -> int:
    lengths = length_spec(args)
    all_results = []
    summary = []
    for pooling in poolings(args):
        for seed in seeds(args):
            best, results = _sweep_all(args, lengths, pooling, seed)
            all_results.extend(results)
            summary.append({"pooling": pooling.value, "seed": seed, "best_lr": best.config.lr,
                            "best": best.summary(),
                            "runs": [r.summary() for r in results]})
            fio.save_checkpoint(args.out / f"checkpoint_{pooling.value}_seed{seed}.json", best)
    fio.write_epochs_csv(args.out / "epochs.csv", all_results)
    fio.write_json(args.out / "result.json", {"sweeps": summary})
    print(json.dumps([{k: s[k] for k in ("pooling", "seed", "best_lr")} | {
        "solved_at_epoch": s["best"]["solved_at_epoch"],
        "final_accuracy": s["best"]["final_accuracy"]} for s in summary]))
    return EXIT_OK


TABLE1_COLUMNS = ("task", "t0", "pooling", "seed", "best_lr", "solved_at_epoch",
                  "final_accuracy", "cell", "reference_cell")


def table1_cell(result) -> str:
    """Epochs to perfect accuracy, or final accuracy in percent if never reached."""
    if result.solved_at_epoch is not None:
        return str(result.solved_at_epoch)
    return f"{100 * result.final_accuracy:.1f}%"


def cmd_table1(args) -> int:
    grid = lr_grid(args)
    tasks = [TaskKind(t.strip()) for t in args.tasks.split(",") if t.strip()]
    if not args.t0s:
        raise UsageError("no T0 values given")
    rows, all_results, misses = [], [], []
    for task in tasks:
        for t0 in args.t0s:
            for pooling in poolings(args):
                solved_seeds = 0
                for seed in seeds(args):
                    template = replace(base_config(args, Fixed(t0), pooling, seed), task=task)
                    best, results = lr_sweep(template, grid, on_epoch=_progress(template))
                    all_results.extend(results)
                    ref = REFERENCE_TABLE1.get((task.value, pooling.value), {}).get(t0, "")
                    rows.append({
                        "task": task.value, "t0": t0, "pooling": pooling.value, "seed": seed,
                        "best_lr": repr(best.config.lr),
                        "solved_at_epoch": "" if best.solved_at_epoch is None else best.solved_at_epoch,
                        "final_accuracy": repr(best.final_accuracy),
                        "cell": table1_cell(best), "reference_cell": ref,
                    })
                    limit = TABLE1_EPOCH_LIMITS[task]
                    if best.solved_at_epoch is not None and best.solved_at_epoch <= limit:
                        solved_seeds += 1
                if pooling is PoolingMode.ATTENTION and solved_seeds * 3 < 2 * len(seeds(args)):
                    misses.append((task.value, t0))
    fio.atomic_write(args.out / "table1.csv", fio.render_csv(rows, TABLE1_COLUMNS))
    fio.write_epochs_csv(args.out / "epochs.csv", all_results)
    print(fio.render_csv(rows, TABLE1_COLUMNS), end="")
    if args.check and misses:
        print(f"check failed for attention rows: {misses}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_varlen(args) -> int:
    lengths = length_spec(args, default=Range(*DESK_RANGE))
    if isinstance(lengths, Range) and lengths.lo == lengths.hi:
        log.info("degenerate range: training at fixed T=%d", lengths.lo)
    results, summary = [], {}
    for pooling in poolings(args):
        for seed in seeds(args):
            cfg = base_config(args, lengths, pooling, seed)
            res = train(cfg, on_epoch=_progress(cfg))
            results.append(res)
            summary[f"{pooling.value}_seed{seed}"] = res.summary()
            fio.save_checkpoint(args.out / f"checkpoint_{pooling.value}_seed{seed}.json", res)
    fio.write_epochs_csv(args.out / "epochs.csv", results)
    fio.write_json(args.out / "result.json", {
        "runs": summary,
        "reference": {"range": [50, 10000], "epochs": 100,
                            "attention": {"addition": 0.999, "multiplication": 0.994},
                            "mean": {"addition": 0.774, "multiplication": 0.555}},
    })
    print(json.dumps({k: v["final_accuracy"] for k, v in summary.items()}))
    if args.check:
        att = [r for r in results if r.config.pooling is PoolingMode.ATTENTION]
        if not att or any(r.final_accuracy < VARLEN_MIN_ACCURACY for r in att):
            return EXIT_CHECK
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = 0
    for i in range(args.configs):
        D = int(rng.choice([1, 3, 10]))
        T = int(rng.choice([1, 2, 17]))
        B = int(rng.choice([1, 4]))
        pooling = (PoolingMode.ATTENTION, PoolingMode.MEAN)[i % 2]
        params = random_params(D, pooling, rng, scale=0.5)
        batch = SequenceBatch(rng.uniform(-1, 1, (B, T, 2)), rng.uniform(0, 1, B))
        report = check_gradients(params, batch)
        print(f"config {i}: D={D} T={T} B={B} pooling={pooling.value}")
        print(report.render())
        failures += not report.passed
    print(f"{args.configs - failures}/{args.configs} configurations passed")
    return EXIT_OK if failures == 0 else EXIT_CHECK


def run_bench(worker_counts, T0=1000, B=100, D=100, repeats=3, seed=0) -> dict:
    """Forward+backward time steps per second for each thread count."""
    params = init_params(D, PoolingMode.ATTENTION, Rng(seed))
    batch = generate_batch(TaskKind.ADDITION, Fixed(T0), B, Rng(seed, 1), 0)
    steps = batch.B * batch.T
    reference = None
    rows = []
    for workers in worker_counts:
        cache = forward(params, batch, workers=workers)  # warm-up and compile
        backward(params, batch, cache, workers=workers)
        best = float("inf")
        for _ in range(repeats):
            start = time.perf_counter()
            cache = forward(params, batch, workers=workers)
            backward(params, batch, cache, workers=workers)
            best = min(best, time.perf_counter() - start)
        if reference is None:
            reference = cache.Y
        rows.append({"workers": workers, "seconds": best, "steps_per_second": steps / best,
                     "max_abs_output_diff": float(np.max(np.abs(cache.Y - reference)))})
    base = rows[0]["steps_per_second"]
    for row in rows:
        row["speedup"] = row["steps_per_second"] / base
    return {"T": batch.T, "B": B, "D": D, "cpu_count": os.cpu_count(), "results": rows}


def cmd_bench(args) -> int:
    t0 = args.t0 if args.t0 is not None else 1000
    counts = args.workers if args.workers != [1] else [1, 2, 4]
    report = run_bench(counts, T0=t0, B=args.batch, D=args.dim, repeats=args.repeats, seed=args.seed)
    fio.write_json(args.out / "bench.json", report)
    for row in report["results"]:
        print(f"workers={row['workers']:2d} steps/s={row['steps_per_second']:.4g} "
              f"speedup={row['speedup']:.2f} max|dY|={row['max_abs_output_diff']:.1e}")
    return EXIT_OK


def cmd_dump(args) -> int:
    lengths = length_spec(args, default=Fixed(50))
    instances = make_test_set(TaskKind(args.task), lengths, args.count, args.seed)
    path = args.out / "instances.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        n = dump_jsonl(instances, fh)
    print(f"wrote {n} instances to {path}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "sweep": cmd_sweep, "table1": cmd_table1, "varlen": cmd_varlen,
    "gradcheck": cmd_gradcheck, "bench": cmd_bench, "dump": cmd_dump, "resume": cmd_resume,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
