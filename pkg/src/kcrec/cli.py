"""Command-line interface: synth, train, evaluate, recommend, explain, bench, ablate.

Exit codes: 0 success, 2 usage/config errors, 3 data or format errors,
4 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from kcrec.config import VARIANTS, RunConfig
from kcrec.errors import KcrecError, UsageError

log = logging.getLogger("kcrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# -- helpers ------------------------------------------------------------------

def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(args) -> RunConfig:
    """Defaults, then the config file, then ``--set`` pairs and direct flags, then ``--ablate``."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = RunConfig.from_text(Path(args.config).read_text(encoding="utf-8"), cfg)
    cfg = RunConfig.from_mapping(_overrides(getattr(args, "set", None)), cfg)
    direct = {k: getattr(args, k) for k in ("seed", "epochs", "lr", "batch")
              if getattr(args, k, None) is not None}
    cfg = RunConfig.from_mapping(direct, cfg)
    if getattr(args, "ablate", None):
        return cfg.with_variant(args.ablate)
    return cfg.resolved()


def _load(data_dir, cfg: RunConfig, features_seed=None):
    from kcrec.hin import load_dataset, split_interactions
    seed = cfg.seed if features_seed is None else features_seed
    hin, feats = load_dataset(data_dir, cfg.d0, seed)
    split = split_interactions(hin, cfg.split, cfg.seed, cfg.interaction, cfg.split_ratio,
                               cfg.split_cutoff if cfg.split == "temporal" else None)
    return hin, feats, split


def _model_from_checkpoint(args):
    from kcrec.checkpoint import load_checkpoint
    from kcrec.hin import training_graph
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    hin, _, split = _load(args.data, cfg)
    ckpt.check_graph(hin)
    model = ckpt.build_model(training_graph(hin, split, cfg.interaction))
    return ckpt, model, split


# -- commands -----------------------------------------------------------------

def cmd_synth(args):
    from kcrec.hin import SynthConfig, synth_generate
    cfg = SynthConfig(groups=args.groups, users_per_group=args.users_per_group,
                      concepts_per_group=args.concepts_per_group,
                      courses_per_group=args.courses_per_group,
                      videos_per_group=args.videos_per_group, teachers=args.teachers,
                      p_in=args.p_in, p_out=args.p_out, seed=args.seed)
    paths = synth_generate(cfg, args.out)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_train(args):
    from kcrec.checkpoint import save_model
    from kcrec.hin import training_graph
    from kcrec.train import train
    cfg = resolve_config(args)
    out = Path(args.out)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out}")
    sys.stdout.write(cfg.to_text())
    sys.stdout.flush()
    hin, feats, split = _load(args.data, cfg)
    graph = training_graph(hin, split, cfg.interaction)
    result = train(graph, feats, split, cfg,
                   callback=lambda e, loss: log.info("epoch %d loss %.6f", e, loss))
    save_model(result.model, out / "checkpoint.bin")
    (out / "loss_trace.txt").write_text(result.trace_text(), encoding="utf-8")
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    log.info("trained %d epochs%s", len(result.losses), " (plateau stop)" if result.stopped_early else "")
    return EXIT_OK


def cmd_evaluate(args):
    from kcrec.train import evaluate
    ckpt, model, split = _model_from_checkpoint(args)
    ks = tuple(int(k) for k in args.ks.split(",")) if args.ks else tuple(ckpt.config.k_list)
    report = evaluate(model, split, ckpt.config.eval_negatives, ks, ckpt.config.seed)
    if args.out:
        Path(args.out).write_text(report.serialize(), encoding="utf-8")
    print(report.summary())
    return EXIT_OK


def cmd_recommend(args):
    from kcrec.train import recommend
    _, model, split = _model_from_checkpoint(args)
    if not 0 <= args.user < model.n_users:
        raise UsageError(f"user {args.user} does not exist (0..{model.n_users - 1})")
    scores = model.score_matrix()[args.user]
    exclude = split.train_positives()[args.user]
    for item in recommend(scores, exclude, args.n):
        print(f"{item}\t{float(scores[item])!r}")
    return EXIT_OK


def cmd_explain(args):
    from kcrec.checkpoint import load_checkpoint
    from kcrec.implicit import explain_metapaths
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    logits = ckpt.arrays["implicit.logits"]
    if logits.shape[2] != len(ckpt.relation_names):
        raise UsageError("checkpoint relation list does not match its selection logits")
    report = explain_metapaths(logits.reshape(cfg.hops, cfg.channels, -1), args.top_k,
                               ckpt.relation_names)
    text = report.serialize()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args):
    from kcrec import kernels
    _, model, split = _model_from_checkpoint(args)
    if args.batches < 1 or args.batch_size < 1:
        raise UsageError("batch count and batch size must be >= 1")
    from kcrec.rng import stream
    g = stream(model.cfg.seed, "sampling", 0xBE7C)
    model.refresh_prototypes()
    times = []
    for _ in range(args.batches):
        users = g.integers(model.n_users, size=args.batch_size)
        items = g.integers(model.n_items, size=args.batch_size)
        t0 = time.perf_counter()
        enc = model.encode()
        fu, _ = model.represent(enc, "user", users)
        fk, _ = model.represent(enc, "concept", items)
        np.einsum("ij,ij->i", fu.value, fk.value)
        times.append(time.perf_counter() - t0)
    times = np.array(times)
    print(f"backend={kernels.BACKEND}")
    print(f"batch_size={args.batch_size}")
    print(f"batches={args.batches}")
    print(f"mean_seconds={times.mean():.6f}")
    print(f"std_seconds={times.std():.6f}")
    return EXIT_OK


def cmd_ablate(args):
    from kcrec.train import ablation_suite
    cfg = resolve_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    hin, feats, split = _load(args.data, cfg)
    report = ablation_suite(hin, feats, split, cfg, seeds)
    text = report.serialize()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _config_flags(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kcrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a planted-group synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--groups", type=int, default=5)
    p.add_argument("--users-per-group", type=int, default=40)
    p.add_argument("--concepts-per-group", type=int, default=20)
    p.add_argument("--courses-per-group", type=int, default=4)
    p.add_argument("--videos-per-group", type=int, default=8)
    p.add_argument("--teachers", type=int, default=10)
    p.add_argument("--p-in", type=float, default=0.3)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablate", choices=list(VARIANTS) + ["w/o-att:concat", "w/o-att:add"])
    _config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="rank test positives under the 1+99 protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ks", help="comma-separated cutoffs (default from the checkpoint config)")
    p.add_argument("--out", help="report file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-N concepts for one user")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("-n", type=int, default=10)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("explain", help="top learned edge-type sequences per channel")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("bench", help="mean forward time per batch")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batches", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=1024)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="train and evaluate every ablation variant")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", default="0")
    p.add_argument("--out")
    _config_flags(p)
    p.set_defaults(func=cmd_ablate, ablate=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KcrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            for k, v in diag.items():
                print(f"  {k}: {v}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
