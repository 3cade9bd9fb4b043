"""Command-line entry point.

Subcommands: generate, detect, attack, sweep, theory, chunk-sim, report.
The secret key is read from --key-hex or the MIRRORMARK_KEY environment
variable.  A --config JSON file overrides the corresponding flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .attacks import ATTACK_KINDS, AttackSpec
from .experiment import (
    SWEEPABLE,
    ChunkSimConfig,
    ExperimentConfig,
    SourceSpec,
    TheoryGrid,
    WatermarkSpec,
    load_manifest,
    run_attack,
    run_chunk_sim,
    run_detect,
    run_generate,
    run_report,
    run_sweep,
    run_theory,
)
from .records import read_json
from .rng import KEY_ENV_VAR, ConfigError, SecretKey


def _floats(text: str):
    return tuple(float(x) for x in text.split(",") if x)


def _ints(text: str):
    return tuple(int(x) for x in text.split(",") if x)


def _key(args) -> SecretKey:
    if getattr(args, "key_hex", None):
        return SecretKey.from_hex(args.key_hex)
    return SecretKey.from_env(KEY_ENV_VAR)


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="JSON config file; its values override flags")
    g.add_argument("--key-hex", help=f"secret key as hex (default: ${KEY_ENV_VAR})")
    g.add_argument("--source", default="synthetic", choices=["synthetic", "ngram", "fixed"])
    g.add_argument("--vocab-size", type=int, default=50)
    g.add_argument("--entropy", type=float, default=1.7)
    g.add_argument("--source-seed", type=int, default=0)
    g.add_argument("--shape", default="softmax", choices=["softmax", "flat"],
                   help="synthetic distribution family")
    g.add_argument("--order", type=int, help="Markov order of the synthetic source (default: full prefix)")
    g.add_argument("--corpus", help="whitespace-tokenised text file for the n-gram source")
    g.add_argument("--vocab", help="vocabulary file (one token per line)")
    g.add_argument("--ngram", type=int, default=3)
    g.add_argument("--probs", type=_floats, help="comma-separated probabilities for the fixed source")
    g.add_argument("-m", type=int, default=3, help="bits per symbol")
    g.add_argument("-H", type=int, default=12, help="message positions")
    g.add_argument("--sampler", default="gumbel", choices=["gumbel", "tournament"])
    g.add_argument("-L", type=int, default=1, help="tournament layers")
    g.add_argument("--weights", type=_floats)
    g.add_argument("--scheduler", default="cabs", choices=["cabs", "naive"])
    g.add_argument("--window", type=int, default=4, help="frame hash window W")
    g.add_argument("--frame-bits", type=int, default=3, help="frame hash bits f")
    g.add_argument("--context", type=int, default=4, help="PRF context length h")
    g.add_argument("--top-k", type=int)
    g.add_argument("--temperature", type=float, default=1.0)
    g.add_argument("-T", type=int, default=300, help="tokens per sequence")
    g.add_argument("-n", "--n-sequences", type=int, default=100)
    g.add_argument("--decoder", default="gumbel", choices=["gumbel", "wmean", "bayes"])
    g.add_argument("--scorer", choices=["gumbel", "wmean", "bayes"])
    g.add_argument("--pi-model", default="logistic", choices=["logistic", "oracle"])
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("-o", "--output-dir", default="runs/default")
    g.add_argument("-j", "--workers", type=int, default=1)


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig(
        source=SourceSpec(
            kind=args.source,
            vocab_size=args.vocab_size,
            entropy=args.entropy,
            seed=args.source_seed,
            corpus=args.corpus,
            vocab=args.vocab,
            n=args.ngram,
            probs=args.probs,
            shape=args.shape,
            order=args.order,
        ),
        watermark=WatermarkSpec(
            m=args.m,
            H=args.H,
            sampler=args.sampler,
            L=args.L,
            weights=args.weights,
            scheduler=args.scheduler,
            W=args.window,
            f=args.frame_bits,
            h=args.context,
            top_k=args.top_k,
            temperature=args.temperature,
        ),
        T=args.T,
        n_sequences=args.n_sequences,
        decoder=args.decoder,
        scorer=args.scorer,
        master_seed=args.seed,
        output_dir=args.output_dir,
        workers=args.workers,
        pi_model=args.pi_model,
    )
    if args.config:
        base = cfg.to_dict()
        over = read_json(args.config)
        for k, v in over.items():
            if isinstance(v, dict) and isinstance(base.get(k), dict):
                base[k].update(v)
            else:
                base[k] = v
        cfg = ExperimentConfig.from_dict(base)
    return cfg


def cmd_generate(args) -> int:
    out = run_generate(config_from_args(args), _key(args))
    print(out)
    return 0


def cmd_attack(args) -> int:
    cfg = load_manifest(args.dataset)
    spec = AttackSpec(args.kind, args.epsilon, args.attack_seed, args.segment_len)
    out = run_attack(cfg, args.dataset, spec, args.out, _key(args))
    print(out)
    return 0


def cmd_detect(args) -> int:
    cfg = load_manifest(args.dataset)
    if args.config:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **read_json(args.config)})
    if args.decoder:
        cfg = replace(cfg, decoder=args.decoder)
    if args.scorer:
        cfg = replace(cfg, scorer=args.scorer)
    rep = run_detect(cfg, args.dataset, _key(args), args.out)
    print(json.dumps(rep["metrics"], indent=2, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    values = [v for v in args.values.split(",") if v]
    rows = run_sweep(cfg, args.param, values, _key(args), args.attack_kind)
    for r in rows:
        print(f"{r['param']}={r['value']}: auc={r['auc']:.4f} eer={r['eer']:.4f} bit_acc={r['bit_accuracy']:.4f}")
    return 0


def cmd_theory(args) -> int:
    grid = TheoryGrid(T=args.T, entropy=args.entropy, m=args.m, L=args.L, collisions=args.collisions)
    rows = run_theory(grid, args.out)
    print(f"{len(rows)} rows -> {args.out}")
    return 0


def cmd_chunk_sim(args) -> int:
    cfg = ChunkSimConfig(K=args.K, m=args.m, alpha=args.alpha, prior_w=args.prior_w, n_trials=args.trials,
                         seed=args.seed, glrt_tau=args.glrt_tau, n_tokens=args.tokens_per_chunk)
    table = run_chunk_sim(cfg, args.out)
    for k, v in table.items():
        print(f"{k:>20s}  fpr={v['fpr']:.4f}  fnr={v['fnr']:.4f}  ber={v['ber']:.4f}")
    return 0


def cmd_report(args) -> int:
    rows = run_report(args.root, args.out)
    for r in rows:
        print(f"{r['run']}: auc={float(r['auc']):.4f} tpr@1%={float(r['tpr_at_1pct_fpr']):.4f} "
              f"eer={float(r['eer']):.4f} bit_acc={float(r['bit_accuracy']):.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mirrormark", description="Multi-bit mirrored-randomness watermark experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write paired watermarked/null datasets")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("attack", help="apply an attack to a generated dataset")
    p.add_argument("dataset")
    p.add_argument("--kind", required=True, choices=ATTACK_KINDS)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--attack-seed", type=int, default=0)
    p.add_argument("--segment-len", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--key-hex")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("detect", help="detect and decode a dataset; writes metrics")
    p.add_argument("dataset")
    p.add_argument("--config", help="JSON overrides of the stored configuration")
    p.add_argument("--decoder", choices=["gumbel", "wmean", "bayes"])
    p.add_argument("--scorer", choices=["gumbel", "wmean", "bayes"])
    p.add_argument("--out")
    p.add_argument("--key-hex")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("sweep", help="generate and detect over a grid of one parameter")
    _add_experiment_flags(p)
    p.add_argument("--param", required=True, choices=SWEEPABLE)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--attack-kind", default="substitute", choices=ATTACK_KINDS)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("theory", help="closed-form EER over a grid, as CSV")
    p.add_argument("-T", type=_ints, default=TheoryGrid.T)
    p.add_argument("--entropy", type=_floats, default=TheoryGrid.entropy)
    p.add_argument("-m", type=_ints, default=TheoryGrid.m)
    p.add_argument("-L", type=int, default=TheoryGrid.L)
    p.add_argument("--collisions", type=_floats, default=TheoryGrid.collisions)
    p.add_argument("--out", default="theory.csv")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("chunk-sim", help="chunk-level detector comparison")
    p.add_argument("-K", type=int, default=20)
    p.add_argument("-m", type=int, default=2)
    p.add_argument("--alpha", type=float, default=5.0)
    p.add_argument("--prior-w", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--glrt-tau", type=float)
    p.add_argument("--tokens-per-chunk", type=int, default=1)
    p.add_argument("--out", default="runs/chunk_sim")
    p.set_defaults(func=cmd_chunk_sim)

    p = sub.add_parser("report", help="collect metrics.json files into one CSV")
    p.add_argument("root")
    p.add_argument("--out", default="summary.csv")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
