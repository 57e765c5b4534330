"""Command-line interface.

Exit codes: 0 success, 2 invalid arguments or infeasible configuration,
3 I/O or parse failure, 4 a verification did not hold, 1 a sweep in
which every row failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from . import accountant, verifier
from .accountant import BaggingConfig, Mode
from .data import Dataset, ingest_dataset
from .ensemble import evaluate, train
from .errors import BagdpError, DatasetParseError, EnumerationLimitError, InfeasibleConfigError, InvalidArgumentError
from .learners import make_learner

EXIT_OK = 0
EXIT_ALL_FAILED = 1
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_VERIFY = 4

WORKERS_ENV = "BAGDP_WORKERS"

SWEEP_COLUMNS = ["mode", "n", "k", "N", "epsilon", "delta", "repetition", "seed", "accuracy", "status"]


def fmt(x: float) -> str:
    """Fixed-point decimal with 6 significant digits, locale independent."""
    x = float(x)
    if not math.isfinite(x):
        return repr(x)
    if x == 0:
        return "0.00000"
    d = Decimal(repr(x))
    r = d.quantize(Decimal(1).scaleb(d.adjusted() - 5), rounding=ROUND_HALF_EVEN)
    if r.adjusted() != d.adjusted():
        # rounding carried into the next power of ten
        r = r.quantize(Decimal(1).scaleb(r.adjusted() - 5), rounding=ROUND_HALF_EVEN)
    return format(r, "f")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _mode_list(text: str) -> list[Mode]:
    return [Mode.parse(v.strip()) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------- budget

def cmd_budget(args) -> int:
    mode = Mode.parse(args.mode)
    if args.inverse:
        k = accountant.max_subsample_for_budget(args.n, args.N, mode, args.target_epsilon, args.target_delta)
        print(f"k={k}")
        if k == 0:
            return EXIT_OK
    else:
        if args.k is None:
            raise InvalidArgumentError("k", "required unless --inverse is given")
        k = args.k
    tight = accountant.budget_for(args.n, k, args.N, mode)
    print(f"mode={mode.value}")
    print(f"n={args.n}")
    print(f"k={k}")
    print(f"N={args.N}")
    print(f"epsilon={fmt(tight.epsilon)}")
    print(f"delta={fmt(tight.delta)}")
    if mode is Mode.WITH_REPLACEMENT:
        loose = accountant.composed_budget_with_replacement(args.n, k, args.N)
        print(f"composed_epsilon={fmt(loose.epsilon)}")
        print(f"composed_delta={fmt(loose.delta)}")
        if loose.clamped:
            print("composed_delta_clamped=true")
    return EXIT_OK


# ---------------------------------------------------------------- verify

def cmd_verify(args) -> int:
    report = verifier.verify_claim(args.n, args.k, args.N, Mode.parse(args.mode))
    sys.stdout.write(report.to_record())
    if args.delta_prime is not None:
        ev = verifier.find_violation(args.n, args.k, args.N, Mode.parse(args.mode), args.delta_prime, args.epsilon_cap)
        print(f"delta_prime={args.delta_prime!r}")
        print(f"epsilon_cap={args.epsilon_cap!r}")
        print(f"support_gap_mass={float(ev.support_gap_mass):.12g}")
        print(f"support_gap_mass_exact={ev.support_gap_mass}")
        print(f"violated={str(ev.violated).lower()}")
    return EXIT_OK if report.holds else EXIT_VERIFY


# ---------------------------------------------------------------- data helpers

def _load(path: str, fmt_name: str, labels: str | None, limit_n: int | None = None) -> Dataset:
    ds = ingest_dataset(path, fmt_name, labels)
    if limit_n is not None:
        ds = ds.head(limit_n)
    return ds


def _learner_from_args(args, init_seed: int = 0):
    if args.learner == "logistic":
        return make_learner(
            "logistic", epochs=args.epochs, learning_rate=args.lr, l2=args.l2, init_seed=init_seed
        )
    if args.learner == "knn":
        return make_learner("knn", k_neighbors=args.k_neighbors)
    return make_learner(args.learner)


# ---------------------------------------------------------------- train

def cmd_train_eval(args) -> int:
    train_set = _load(args.train, args.format, args.train_labels, args.limit_n)
    test_set = _load(args.test, args.format, args.test_labels)
    if train_set.n_features != test_set.n_features:
        raise DatasetParseError(args.test, "header", f"feature width {test_set.n_features} != training width {train_set.n_features}")
    config = BaggingConfig(len(train_set), args.k, args.N, Mode.parse(args.mode), args.seed)
    model = train(train_set, config, _learner_from_args(args, args.seed & 0xFFFFFFFF), workers=_workers())
    acc = evaluate(model, test_set)
    b = accountant.budget(config)
    print(f"n={config.n}")
    print(f"k={config.k}")
    print(f"N={config.N}")
    print(f"mode={config.mode.value}")
    print(f"learner={model.learner_descriptor}")
    print(f"accuracy={fmt(acc)}")
    print(f"epsilon={fmt(b.epsilon)}")
    print(f"delta={fmt(b.delta)}")
    if args.save:
        try:
            model.save(args.save)
        except OSError as exc:
            raise DatasetParseError(args.save, "write", str(exc)) from exc
        print(f"saved={args.save}")
    return EXIT_OK


# ---------------------------------------------------------------- sweep

@dataclass(frozen=True)
class SweepSpec:
    train_path: str
    test_path: str
    modes: tuple[Mode, ...]
    points: tuple[tuple[int, int], ...]  # (k, N) pairs in output order
    learner: str
    learner_params: tuple[tuple[str, object], ...]
    repetitions: int
    seed: int
    output_path: str
    format: str = "csv"
    train_labels: str | None = None
    test_labels: str | None = None
    limit_n: int | None = None

    def __post_init__(self):
        if not self.points:
            raise InvalidArgumentError("points", "sweep needs at least one (k, N) value")
        if self.repetitions < 1:
            raise InvalidArgumentError("repetitions", "must be >= 1")


def repetition_seed(root: int, repetition: int) -> int:
    """64-bit seed of one repetition, derived from the root seed."""
    return int(np.random.SeedSequence([root, repetition]).generate_state(1, np.uint64)[0])


def _sweep_points(args) -> list[tuple[int, int]]:
    if args.nk is not None:
        points = []
        for N in args.N:
            if args.nk % N:
                raise InvalidArgumentError("N", f"N={N} does not divide the fixed N*k={args.nk}")
            points.append((args.nk // N, N))
        return points
    if args.k is None:
        raise InvalidArgumentError("k", "give --k values or --nk with --N values")
    return [(k, N) for k in args.k for N in args.N]


def _run_row(task):
    spec, train_set, test_set, mode, k, N, rep = task
    seed = repetition_seed(spec.seed, rep)
    row = {"mode": mode.value, "n": str(len(train_set)), "k": str(k), "N": str(N), "repetition": str(rep), "seed": str(seed)}
    try:
        config = BaggingConfig(len(train_set), k, N, mode, seed)
        b = accountant.budget(config)
        row.update(epsilon=fmt(b.epsilon), delta=fmt(b.delta))
        params = dict(spec.learner_params)
        if spec.learner == "logistic":
            params["init_seed"] = seed & 0xFFFFFFFF
        model = train(train_set, config, make_learner(spec.learner, **params))
        row.update(accuracy=fmt(evaluate(model, test_set)), status="ok")
    except BagdpError as exc:
        row.setdefault("epsilon", "")
        row.setdefault("delta", "")
        row.update(accuracy="", status=f"error: {exc}")
    return row


def run_sweep(spec: SweepSpec, workers: int = 1) -> tuple[str, int]:
    """Render the sweep CSV; returns (text, number of failed rows)."""
    train_set = _load(spec.train_path, spec.format, spec.train_labels, spec.limit_n)
    test_set = _load(spec.test_path, spec.format, spec.test_labels)
    tasks = [
        (spec, train_set, test_set, mode, k, N, rep)
        for mode in spec.modes
        for k, N in spec.points
        for rep in range(spec.repetitions)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_row, tasks))
    else:
        rows = [_run_row(t) for t in tasks]

    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    failures = 0
    for start in range(0, len(rows), spec.repetitions):
        group = rows[start : start + spec.repetitions]
        for row in group:
            writer.writerow(row)
            failures += row["status"] != "ok"
        accs = [float(r["accuracy"]) for r in group if r["status"] == "ok"]
        summary = {key: group[0][key] for key in ("mode", "n", "k", "N", "epsilon", "delta")}
        summary.update(seed="", status="ok" if accs else "error: no successful repetitions")
        mean = statistics.fmean(accs) if accs else float("nan")
        std = statistics.pstdev(accs) if accs else float("nan")
        writer.writerow({**summary, "repetition": "mean", "accuracy": fmt(mean) if accs else ""})
        writer.writerow({**summary, "repetition": "stddev", "accuracy": fmt(std) if accs else ""})
    return out.getvalue(), failures


def cmd_sweep(args) -> int:
    params: dict = {}
    if args.learner == "logistic":
        params = {"epochs": args.epochs, "learning_rate": args.lr, "l2": args.l2}
    elif args.learner == "knn":
        params = {"k_neighbors": args.k_neighbors}
    spec = SweepSpec(
        train_path=args.train,
        test_path=args.test,
        modes=tuple(args.mode),
        points=tuple(_sweep_points(args)),
        learner=args.learner,
        learner_params=tuple(sorted(params.items())),
        repetitions=args.repetitions,
        seed=args.seed,
        output_path=args.output,
        format=args.format,
        train_labels=args.train_labels,
        test_labels=args.test_labels,
        limit_n=args.limit_n,
    )
    text, failures = run_sweep(spec, _workers())
    try:
        with open(spec.output_path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise DatasetParseError(spec.output_path, "write", str(exc)) from exc
    total = len(spec.modes) * len(spec.points) * spec.repetitions
    print(f"rows={total} failed={failures} output={spec.output_path}")
    return EXIT_ALL_FAILED if failures == total else EXIT_OK


# ---------------------------------------------------------------- ingest-check

def cmd_ingest_check(args) -> int:
    ds = _load(args.path, args.format, args.labels)
    labels, counts = np.unique(ds.y, return_counts=True)
    print(f"examples={len(ds)}")
    print(f"features={ds.n_features if len(ds) else 0}")
    print("classes=" + ",".join(f"{int(c)}:{int(m)}" for c, m in zip(labels, counts)))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InvalidArgumentError(WORKERS_ENV, f"must be an integer, got {raw!r}") from None


def _add_learner_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learner", choices=["logistic", "knn", "majority"], default="logistic")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--k-neighbors", type=int, default=1)


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train", required=True, help="training CSV, or IDX image file")
    p.add_argument("--test", required=True, help="test CSV, or IDX image file")
    p.add_argument("--format", choices=["csv", "idx"], default="csv")
    p.add_argument("--train-labels", help="IDX label file for --train")
    p.add_argument("--test-labels", help="IDX label file for --test")
    p.add_argument("--limit-n", type=int, help="use only the first n training rows")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bagdp", description="Intrinsic differential privacy of Bagging.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("budget", help="closed-form (epsilon, delta) of a Bagging configuration")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--mode", default="with")
    p.add_argument("--inverse", action="store_true", help="solve for the largest k within the targets")
    p.add_argument("--target-epsilon", type=float)
    p.add_argument("--target-delta", type=float)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("verify", help="check a budget by exact enumeration")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--mode", default="with")
    p.add_argument("--delta-prime", type=float)
    p.add_argument("--epsilon-cap", type=float, default=50.0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train a Bagging ensemble and report accuracy and budget")
    _add_data_flags(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--mode", default="with")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save", help="write the trained ensemble (JSON) here")
    _add_learner_flags(p)
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("sweep", help="accuracy-vs-budget sweep written as CSV")
    _add_data_flags(p)
    p.add_argument("--mode", type=_mode_list, default=[Mode.WITH_REPLACEMENT], help="e.g. with,without")
    p.add_argument("--k", type=_int_list, help="comma separated subsample sizes")
    p.add_argument("--N", type=_int_list, default=[1], help="comma separated model counts")
    p.add_argument("--nk", type=int, help="fixed N*k; k is derived per N")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    _add_learner_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ingest-check", help="parse a dataset and print its shape")
    p.add_argument("path")
    p.add_argument("--format", choices=["csv", "idx"], default="csv")
    p.add_argument("--labels", help="IDX label file")
    p.set_defaults(func=cmd_ingest_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return args.func(args)
    except DatasetParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvalidArgumentError, InfeasibleConfigError, EnumerationLimitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
