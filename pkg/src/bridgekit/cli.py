"""Command-line entry point: ``bridgekit <command> ...``.

Commands: ``synth``, ``ingest``, ``cache-teacher``, ``train``, ``sample``, ``eval``.
Run settings come from a preset, an optional flat ``key = value`` file and
trailing ``key=value`` overrides, applied in that order.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .chem import AtomVocab, SmilesError, parse_smiles
from .config import PRESETS, RunConfig, dump_config, load_config, parse_overrides, preset
from .data import generate_synthetic, ingest, write_lines
from .guidance import TeacherStore
from .inference import FUSION, evaluate, frequency_rank, rerank, sample_sets, write_candidates
from .model import RetroModel
from .train import split_records, train

log = logging.getLogger("bridgekit")


def resolve_config(args) -> RunConfig:
    cfg = preset(args.preset)
    if args.config:
        cfg = load_config(args.config, cfg)
    overrides = parse_overrides(args.overrides)
    return cfg.replace(**overrides) if overrides else cfg


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("overrides", nargs="*", metavar="key=value")


def _load_split(cfg: RunConfig):
    if not cfg.dataset:
        raise SystemExit("dataset is not set (pass dataset=PATH)")
    vocab, records, report = ingest(cfg.dataset, n_cap=cfg.N_cap)
    log.info("%s", report.summary())
    if not records:
        raise SystemExit("no usable records in dataset")
    train_recs, val_recs = split_records(records, cfg.val_size)
    return vocab, records[0].n, train_recs, val_recs


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    lines = generate_synthetic(args.count, np.random.default_rng(args.seed), args.rule)
    write_lines(args.out, lines, header=f"synthetic {args.rule} count={args.count} seed={args.seed}")
    print(f"wrote {len(lines)} reactions to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    vocab, records, report = ingest(args.dataset, n_cap=args.n_cap)
    print(report.summary())
    for line, reason in report.rejected[: args.show]:
        print(f"  line {line}: {reason}")
    if records:
        print(f"N = {records[0].n}, vocabulary = {len(vocab) - 1} atom types")
    if args.vocab_out:
        vocab.save(args.vocab_out)
    return 0 if records else 1


def cmd_cache_teacher(args) -> int:
    cfg = resolve_config(args)
    gcfg = cfg.guidance_config()
    if gcfg.teacher is None:
        raise SystemExit(f"scheme {cfg.scheme!r} uses no teacher")
    _, _, train_recs, _ = _load_split(cfg)
    out = args.out or cfg.teacher_cache
    if not out:
        raise SystemExit("no output path (pass --out or teacher_cache=PATH)")
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        store = TeacherStore(gcfg, cfg.token_dim).fit(train_recs)
    store.save(out)
    print(f"cached {gcfg.teacher} targets for {len(train_recs)} records in {out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    vocab, N, train_recs, val_recs = _load_split(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(dump_config(cfg), encoding="utf-8")
    if cfg.vocab_out:
        vocab.save(cfg.vocab_out)
    res = train(cfg, train_recs, val_recs, vocab, N, out_dir=out)
    best = f", best val top-1 {res.best_val:.3f} at epoch {res.best_epoch}" if res.best_val is not None else ""
    print(f"trained {cfg.epochs} epochs in {res.seconds:.0f}s{best}; checkpoint {out / 'model.bkpt'}")
    return 0


def _load_model(path, want_rerank: bool) -> RetroModel:
    model = RetroModel.load(path)
    if want_rerank and not model.guided:
        raise SystemExit("--rerank needs a model trained with an alignment scheme (align_graph, align_node or grg)")
    return model


def cmd_sample(args) -> int:
    model = _load_model(args.model, args.rerank)
    products, smiles = [], []
    for smi in args.smiles:
        try:
            g = parse_smiles(smi, model.vocab)
        except SmilesError as exc:
            raise SystemExit(f"cannot parse {smi!r}: {exc}") from None
        if g.num_real > model.N:
            raise SystemExit(f"{smi!r} has {g.num_real} atoms; model holds {model.N} slots")
        products.append(g.pad(model.N))
        smiles.append(smi)
    sets = sample_sets(model, products, args.n, np.random.default_rng(args.seed), args.window)
    fh = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for cs, smi in zip(sets, smiles):
            ranked = rerank(cs, tuple(args.weights)) if args.rerank else frequency_rank(cs)
            write_candidates(fh, cs, ranked, model.vocab, smi)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.model, args.rerank)
    vocab = AtomVocab(model.vocab.entries[1:], frozen=True)
    _, records, report = ingest(args.data, vocab=vocab, n_cap=model.N, n_fixed=model.N)
    print(report.summary())
    if not records:
        raise SystemExit("no usable test records")
    res = evaluate(model, [r.product for r in records], [r.reactants for r in records], args.n, args.seed,
                   rerank_weights=tuple(args.weights) if args.rerank else None, window=args.window)
    table = res.report()
    cols = list(next(iter(table.values())))
    print(f"{'ranking':<10}" + "".join(f"{c:>11}" for c in cols))
    for name, row in table.items():
        print(f"{name:<10}" + "".join(f"{row[c]:>11.4f}" for c in cols))
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["ranking", *cols])
            for name, row in table.items():
                w.writerow([name, *(row[c] for c in cols)])
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bridgekit", description="Guided Markov-bridge retrosynthesis on molecular graphs")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic bond-cut dataset")
    p.add_argument("--count", type=int, default=2200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rule", default="bond-cut")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse a dataset, report rejections, build the vocabulary")
    p.add_argument("dataset")
    p.add_argument("--n-cap", type=int, default=64)
    p.add_argument("--vocab-out")
    p.add_argument("--show", type=int, default=20, help="rejections to list")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cache-teacher", help="precompute whitened teacher targets for the training split")
    _config_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cache_teacher)

    p = sub.add_parser("train", help="train a model")
    _config_args(p)
    p.set_defaults(func=cmd_train)

    for name, helptext in (("sample", "sample ranked candidates for product SMILES"),
                           ("eval", "top-k and diversity on a test file")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--model", required=True, help="model.bkpt written by train")
        p.add_argument("--n", type=int, default=100, help="trajectories per product")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--window", type=int, default=10, help="similarity window in steps")
        p.add_argument("--rerank", action="store_true", help="rank by fused frequency and similarity")
        p.add_argument("--weights", type=float, nargs=2, default=list(FUSION), metavar=("W_F", "W_S"))
        p.add_argument("--out")
        if name == "sample":
            p.add_argument("smiles", nargs="+")
            p.set_defaults(func=cmd_sample)
        else:
            p.add_argument("--data", required=True)
            p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
