"""Command-line entry point: ``qldpc code|data|train|sweep``.

Every command prints its effective configuration (all defaults filled in)
before running, so a run can be repeated from that block alone.  Exit codes:
0 success, 2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _out_path(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.parent.exists():
        raise UsageError(f"output directory {p.parent} does not exist")
    return p


def _in_path(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file {p} not found")
    return p


def _probability(text) -> float:
    p = float(text)
    if not 0.0 <= p < 0.5:
        raise argparse.ArgumentTypeError(f"p_f must lie in [0, 0.5), got {p}")
    return p


def _load_code(path):
    from .codes import CssCode

    return CssCode.load(_in_path(path, "code"))


# ---------------------------------------------------------------------------
# commands


def cmd_code_build(args) -> int:
    from .codes import build_bicycle, build_hgp_bch

    out = _out_path(args.out)
    if args.family == "hgp":
        code = build_hgp_bch()
    else:
        code = build_bicycle(args.n, args.k, args.row_weight, seed=args.seed, deletion=args.deletion)
    print(code.summary())
    print(f"n={code.n} k={code.k} m={code.m} row_weight_max={code.row_bound} col_weight_max={code.col_bound}")
    if out is not None:
        code.save(out)
        print(f"wrote {out}")
    return EXIT_OK


def cmd_data_gen(args) -> int:
    from .channel import ChannelParams, gen_training_set, write_test_stream

    code = _load_code(args.code)
    out = _out_path(args.out)
    if out is None:
        raise UsageError("--out is required")
    params = ChannelParams(args.pf)
    if args.recipe == "train":
        if args.count < 2 * code.n + 1:
            raise UsageError(f"train recipe needs --count >= 2n+1 = {2 * code.n + 1}")
        ds = gen_training_set(code, params, args.count, np.random.default_rng(args.seed))
        ds.metadata["seed"] = args.seed
        ds.save(out)
    else:
        write_test_stream(out, code, params, args.count, args.seed)
    print(f"wrote {args.count} {args.recipe} entries to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .channel import Dataset
    from .codes import tanner_graph
    from .gnn import GnnHyperparams, GnnModel, train_gnn
    from .nbp import NbpHyperparams, NbpModel, train_nbp

    code = _load_code(args.code)
    try:
        dataset = Dataset.load(_in_path(args.data, "data"), code)
    except ValueError as exc:
        raise UsageError(f"dataset does not match code: {exc}") from None
    out = _out_path(args.out)
    if out is None:
        raise UsageError("--out is required")
    log_path = _out_path(args.log) if args.log else out.with_suffix(".csv")
    common = dict(lr=args.lr, batch_size=args.batch_size, clip=args.clip, clip_mode=args.clip_mode,
                  epochs=args.epochs, seed=args.seed, plateau_patience=args.plateau_patience,
                  plateau_tol=args.plateau_tol)
    graph = tanner_graph(code)
    t0 = time.perf_counter()
    if args.model == "gnn":
        hp = GnnHyperparams(layers=args.layers, embed=args.embed, tied=not args.untied,
                            schedule=args.schedule, dtype=args.dtype, **common)
        model = GnnModel(graph, hp, _resume_store(args.resume, "gnn")) if args.resume else None
        model, history = train_gnn(code, dataset, hp, model=model, checkpoint_path=out, time_budget=args.time_budget)
    else:
        hp = NbpHyperparams(iterations=args.iterations, tied=args.tied, **common)
        model = NbpModel(graph, hp, _resume_store(args.resume, "nbp")) if args.resume else None
        model, history = train_nbp(code, dataset, hp, model=model, time_budget=args.time_budget)
    elapsed = time.perf_counter() - t0
    meta = {
        "code": code.name, "code_hash": code.digest(), "dataset": dataset.metadata, "seed": args.seed,
        "epochs_run": len(history.epochs), "final_loss": history.mean_loss[-1] if history.mean_loss else None,
        "loss_history": history.mean_loss, "train_seconds": elapsed, "optimizer_steps": model.params.step,
    }
    model.save(out, meta)
    history.write_csv(log_path)
    for e, loss in zip(history.epochs, history.mean_loss):
        print(f"epoch {e} mean_loss {loss:.6f}")
    print(f"wrote {out} and {log_path} ({elapsed:.1f}s, {model.params.step} steps)")
    return EXIT_OK


def _resume_store(path, kind: str):
    from .nn.optim import load_checkpoint

    store, _, _, found = load_checkpoint(_in_path(path, "resume"))
    if found != kind:
        raise UsageError(f"--resume checkpoint holds a {found} model, expected {kind}")
    return store


def _make_decoder(args, code):
    from .bp import BpConfig, BpDecoder
    from .codes import tanner_graph
    from .gnn import GnnModel
    from .nbp import NbpModel
    from .osd import BpOsdDecoder, OsdConfig

    bp_cfg = BpConfig(max_iter=args.max_iter)
    if args.decoder == "bp":
        return BpDecoder.for_code(code, bp_cfg)
    if args.decoder == "bp-osd":
        return BpOsdDecoder(code, bp_cfg, OsdConfig(args.order, args.candidate_limit, args.osd_strategy))
    if args.model is None:
        raise UsageError(f"--decoder {args.decoder} needs --model")
    path = _in_path(args.model, "model")
    try:
        if args.decoder == "nbp":
            return NbpModel.load(path, tanner_graph(code))[0]
        return GnnModel.load(path, tanner_graph(code))[0]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_sweep(args) -> int:
    from .evaluation import run_sweep, write_curve_csv, write_curve_xy

    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if not args.pf_list:
        raise UsageError("--pf-list needs at least one value")
    code = _load_code(args.code)
    prefix = _out_path(args.out)
    decoder = _make_decoder(args, code)

    def show(pt):
        print(f"p_f={pt.p_f:g} trials={pt.trials} failures={pt.failures} ler={pt.ler:.6g} "
              f"ci=[{pt.ci_low:.6g}, {pt.ci_high:.6g}] {pt.seconds:.1f}s", flush=True)

    points = run_sweep(code, decoder, args.pf_list, args.trials, args.seed, workers=args.workers,
                       stop_after_failures=args.stop_after_failures, progress=show)
    if prefix is not None:
        xy, table = Path(f"{prefix}.txt"), Path(f"{prefix}.csv")
        write_curve_xy(points, xy, label=f"ler_{args.decoder}")
        write_curve_csv(points, table)
        print(f"wrote {xy} and {table}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    from .evaluation import default_workers
    from .gnn import GnnHyperparams

    gdef = {f.name: f.default for f in fields(GnnHyperparams)}
    p = argparse.ArgumentParser(prog="qldpc", description="QLDPC code construction, decoder training and evaluation")
    p.add_argument("--config", help="JSON file with option values; explicit flags override it")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    code = sub.add_parser("code").add_subparsers(dest="action", required=True)
    cb = code.add_parser("build", help="construct a code and write its bundle")
    cb.add_argument("--family", choices=["hgp", "bicycle"], required=True)
    cb.add_argument("--seed", type=int, default=0)
    cb.add_argument("--n", type=int, default=256)
    cb.add_argument("--k", type=int, default=32)
    cb.add_argument("--row-weight", type=int, default=8, help="weight of the bicycle seed vector")
    cb.add_argument("--deletion", choices=["uniform", "random"], default="uniform")
    cb.add_argument("--out")
    cb.set_defaults(func=cmd_code_build)

    data = sub.add_parser("data").add_subparsers(dest="action", required=True)
    dg = data.add_parser("gen", help="generate a training set or test stream")
    dg.add_argument("--code")
    dg.add_argument("--pf", type=_probability, default=0.01)
    dg.add_argument("--count", type=int, default=5000)
    dg.add_argument("--recipe", choices=["train", "test"], default="train")
    dg.add_argument("--seed", type=int, default=0)
    dg.add_argument("--out")
    dg.set_defaults(func=cmd_data_gen)

    tr = sub.add_parser("train", help="train a GNN or neural-BP decoder")
    tr.add_argument("model", choices=["gnn", "nbp"])
    tr.add_argument("--code")
    tr.add_argument("--data")
    tr.add_argument("--out")
    tr.add_argument("--log", help="loss CSV path (default: checkpoint path with .csv)")
    tr.add_argument("--resume", help="checkpoint to continue from")
    tr.add_argument("--layers", type=int, default=gdef["layers"])
    tr.add_argument("--embed", type=int, default=gdef["embed"])
    tr.add_argument("--lr", type=float, default=gdef["lr"])
    tr.add_argument("--batch-size", type=int, default=gdef["batch_size"])
    tr.add_argument("--clip", type=float, default=gdef["clip"])
    tr.add_argument("--clip-mode", choices=["global_norm", "value"], default=gdef["clip_mode"])
    tr.add_argument("--epochs", type=int, default=gdef["epochs"])
    tr.add_argument("--plateau-patience", type=int, default=gdef["plateau_patience"])
    tr.add_argument("--plateau-tol", type=float, default=gdef["plateau_tol"])
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--dtype", choices=["float64", "float32"], default=gdef["dtype"])
    tr.add_argument("--untied", action="store_true", help="GNN: separate parameters per round")
    tr.add_argument("--schedule", choices=["sequential", "simultaneous"], default=gdef["schedule"])
    tr.add_argument("--iterations", type=int, default=12, help="NBP iterations")
    tr.add_argument("--tied", action="store_true", help="NBP: share weights across iterations")
    tr.add_argument("--time-budget", type=float, help="stop after the epoch that crosses this many seconds")
    tr.set_defaults(func=cmd_train)

    sw = sub.add_parser("sweep", help="logical error rate versus p_f")
    sw.add_argument("--code")
    sw.add_argument("--decoder", choices=["bp", "bp-osd", "nbp", "gnn"], required=True)
    sw.add_argument("--order", type=int, default=0)
    sw.add_argument("--osd-strategy", choices=["exhaustive", "combination_sweep"], default="exhaustive")
    sw.add_argument("--candidate-limit", type=int)
    sw.add_argument("--max-iter", type=int, default=12)
    sw.add_argument("--model")
    sw.add_argument("--pf-list", type=_probability, nargs="+")
    sw.add_argument("--trials", type=int, default=10000)
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--workers", type=int, default=default_workers())
    sw.add_argument("--stop-after-failures", type=int)
    sw.add_argument("--out", help="output prefix; writes PREFIX.txt and PREFIX.csv")
    sw.set_defaults(func=cmd_sweep)
    return p


def _subparser(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.ArgumentParser:
    """The innermost subparser selected by ``argv``."""
    current = parser
    for tok in argv:
        actions = [a for a in current._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions:
            break
        if tok in actions[0].choices:
            current = actions[0].choices[tok]
    return current


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            doc = json.loads(Path(known.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {known.config}: {exc}")
        if not isinstance(doc, dict):
            parser.error("config file must hold a JSON object")
        target = _subparser(parser, argv)
        valid = {a.dest for a in target._actions}
        unknown = sorted(set(k.replace("-", "_") for k in doc) - valid)
        if unknown:
            parser.error(f"unknown config keys for this command: {unknown}")
        target.set_defaults(**{k.replace("-", "_"): v for k, v in doc.items()})
    return parser.parse_args(argv)


def effective_config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    print("# effective config")
    print(json.dumps(effective_config(args), indent=2, sort_keys=True, default=str))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
