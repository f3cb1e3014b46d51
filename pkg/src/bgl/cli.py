"""Command-line interface: ``bgl {train,eval,gradcheck,bench,synth}``.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical failure (divergence, failed gradient check).
"""
from __future__ import annotations

import argparse
import errno
import logging
import os
import sys
import time

from . import bench as bench_mod
from .errors import BGLError, DivergedLoss, NonFiniteLoss
from .gradcheck import run_checks
from .graph import read_graph, write_graph
from .loss import DEFAULT_LAMBDA, LossConfig
from .model import MODES, init_model, read_model
from .synth import SynthSpec, generate, read_dataset, train_test, write_dataset
from .trainer import TrainConfig, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("bgl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_config(path):
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--lr-decay", type=float, default=0.97)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--lam", type=float, default=DEFAULT_LAMBDA, help="hierarchical prior strength")
    p.add_argument("--kind", choices=("identity", "affine", "hidden"), default="identity")
    p.add_argument("--feature-dim", type=int, default=None)
    p.add_argument("--hidden-dim", type=int, default=0)
    p.add_argument("--coarse-kind", choices=("identity", "affine", "hidden"), default=None)
    p.add_argument("--coarse-feature-dim", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-timing", action="store_true",
                   help="write 0 in the seconds column so reports are byte-reproducible")


def build_parser():
    parser = _Parser(prog="bgl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("train", help="train a model and write a CSV report and checkpoint")
    p.add_argument("--config", help="key = value file with defaults for any flag")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", help="dataset for the accuracy columns (default: training data)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--config")
    p.add_argument("--graph", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--config")
    p.add_argument("--graph", help="graph file; omit to use random graphs")
    p.add_argument("--random", action="store_true", help="use random graphs (the default without --graph)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--kj", type=int, default=3)
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--sabotage", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("bench", help="time forward/backward passes against plain softmax")
    p.add_argument("--config")
    p.add_argument("--k", type=_int_list, default=[1000])
    p.add_argument("--m", type=_int_list, default=[3])
    p.add_argument("--kj", type=_int_list, default=[100])
    p.add_argument("--repetitions", type=int, default=50)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("synth", help="generate a synthetic dataset and graph")
    p.add_argument("--config")
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--sizes", type=_int_list, default=None, help="coarse sizes, e.g. 8,8")
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--n", type=int, default=5, help="samples per class")
    p.add_argument("--test-n", type=int, default=0, help="also write test.txt with this many per class")
    p.add_argument("--sigma-f", type=float, default=2.0)
    p.add_argument("--coarse-scale", type=float, default=1.0)
    p.add_argument("--fine-scale", type=float, default=0.6)
    p.add_argument("--randomize-parents", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _apply_config(parser, argv):
    """Parse ``argv`` with ``--config`` values as defaults so flags still win."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if not known.config or command is None or "-h" in argv or "--help" in argv:
        return parser.parse_args(argv)
    path = known.config
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    values = read_config(path)
    subparser = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"{path}: unknown key {key!r} for '{command}'")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            conv = action.type or str
            try:
                defaults[key] = conv(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{path}: bad value for {key!r}: {exc}") from None
            if action.choices is not None and defaults[key] not in action.choices:
                raise UsageError(f"{path}: {key} must be one of {list(action.choices)}")
        action.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _require_files(*paths):
    for p in paths:
        if p is not None and not os.path.isfile(p):
            raise FileNotFoundError(errno.ENOENT, "no such file", p)


def cmd_train(args):
    _require_files(args.graph, args.data, args.eval_data)
    graph = read_graph(args.graph)
    data = read_dataset(args.data, graph)
    eval_set = read_dataset(args.eval_data, graph) if args.eval_data else None
    os.makedirs(args.out, exist_ok=True)
    model = init_model(
        graph, args.mode, data.d, kind=args.kind, feature_dim=args.feature_dim,
        hidden_dim=args.hidden_dim, coarse_kind=args.coarse_kind,
        coarse_feature_dim=args.coarse_feature_dim, loss_cfg=LossConfig(args.lam), seed=args.seed,
    )
    ckpt = os.path.join(args.out, "model.bin")
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
        lr_decay=args.lr_decay, weight_decay=args.weight_decay, rng_seed=args.seed,
        eval_every=args.eval_every, checkpoint_path=ckpt, workers=args.workers,
    )
    report_path = os.path.join(args.out, "report.csv")
    try:
        report, _ = train(model, data, cfg, eval_set=eval_set, clock=None if args.no_timing else time.perf_counter)
    except DivergedLoss as exc:
        if exc.report is not None:
            exc.report.write_csv(report_path)
        raise
    report.write_csv(report_path)
    final = report.final
    if final is not None:
        coarse = " ".join(f"{a:.4f}" for a in final.coarse_acc)
        print(f"epoch {final.epoch}: loss {final.loss:.6g} fine_acc {final.fine_acc:.4f}"
              + (f" coarse_acc {coarse}" if coarse else ""))
    print(f"wrote {report_path} and {ckpt}")
    return EXIT_OK


def cmd_eval(args):
    _require_files(args.graph, args.data, args.model)
    graph = read_graph(args.graph)
    data = read_dataset(args.data, graph)
    model = read_model(args.model, graph)
    res = evaluate(model, data)
    print(f"fine_acc {res.fine_acc:.6f}")
    for j, a in enumerate(res.coarse_acc, start=1):
        print(f"coarse_acc_{j} {a:.6f}")
    return EXIT_OK


def cmd_gradcheck(args):
    graph = None
    if args.graph and not args.random:
        _require_files(args.graph)
        graph = read_graph(args.graph)
    if args.instances < 1:
        raise UsageError("--instances must be >= 1")
    results = run_checks(graph, k=args.k, m=args.m, kj=args.kj, seed=args.seed,
                         instances=args.instances, sabotage=args.sabotage)
    worst = {}
    for r in results:
        key = r.name.rsplit("/", 1)[0] if r.name.startswith("model/") else r.name
        worst[key] = max(worst.get(key, 0.0), r.rel_error)
    ok = True
    for key, err in worst.items():
        status = "ok" if err < args.tol else "FAIL"
        ok &= err < args.tol
        print(f"{key:20s} max_rel_error {err:.3e} {status}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_bench(args):
    rows = bench_mod.bench_grid(args.k, args.m, args.kj, args.repetitions, args.warmup, args.seed)
    text = bench_mod.rows_to_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args):
    sizes = args.sizes if args.sizes is not None else [8] * args.m
    spec = SynthSpec(
        k=args.k, m=args.m, coarse_sizes=tuple(sizes), d=args.d, n=args.n,
        sigma_f=args.sigma_f, coarse_scale=args.coarse_scale, fine_scale=args.fine_scale,
        seed=args.seed, randomize_parents=args.randomize_parents,
    )
    os.makedirs(args.out, exist_ok=True)
    if args.test_n:
        data, test, graph = train_test(spec, args.n, args.test_n)
        write_dataset(test, os.path.join(args.out, "test.txt"))
    else:
        data, graph = generate(spec)
    write_graph(graph, os.path.join(args.out, "graph.txt"))
    write_dataset(data, os.path.join(args.out, "data.txt"))
    print(f"wrote {len(data)} samples to {args.out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"bgl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bgl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"bgl: error: no such file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergedLoss, NonFiniteLoss, FloatingPointError) as exc:
        print(f"bgl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BGLError, OSError) as exc:
        print(f"bgl: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
