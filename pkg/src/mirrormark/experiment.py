"""Reproducible experiment runs: generation, attacks, detection, theory and chunk sweeps.

Every run directory holds ``config.json`` with the configuration and its
digest.  Sequence ``i`` always uses ``derive_seed(master_seed, i)``, so the
worker count never changes the output bytes.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import gamma as gamma_dist

from . import evalkit, theory
from .attacks import AttackSpec, apply_attack
from .cabs import CabsParams, replay_positions
from .chunkbayes import ChunkModel, comparison_table, simulate_chunks
from .codec import (
    MessageSequence,
    PiModel,
    WatermarkParams,
    detect,
    encode,
    sample_unwatermarked,
    simulate_pi_samples,
    train_pi_model,
)
from .lm import FixedSource, SyntheticSource, load_corpus
from .records import SequenceRecord, read_json, read_jsonl, write_csv, write_json, write_jsonl
from .rng import ConfigError, SecretKey, derive_seed, prf_uniform_many

log = logging.getLogger(__name__)

WM_FILE = "watermarked.jsonl"
NULL_FILE = "null.jsonl"
CONFIG_FILE = "config.json"
PI_TRAIN_DISTS = 400
PI_MAX_LITERAL_L = 10


class DigestMismatch(ConfigError):
    """A stored artifact was produced under a different configuration."""


@dataclass(frozen=True)
class SourceSpec:
    kind: str = "synthetic"
    vocab_size: int = 50
    entropy: float = 1.7
    seed: int = 0
    corpus: Optional[str] = None
    vocab: Optional[str] = None
    n: int = 3
    probs: Optional[tuple] = None
    shape: str = "softmax"
    order: Optional[int] = None

    def __post_init__(self):
        if self.shape not in ("softmax", "flat"):
            raise ConfigError(f"unknown distribution shape {self.shape!r}")
        if self.kind not in ("synthetic", "ngram", "fixed"):
            raise ConfigError(f"unknown source kind {self.kind!r}")
        if self.kind == "ngram" and not self.corpus:
            raise ConfigError("ngram source needs a corpus path")
        if self.kind == "fixed" and not self.probs:
            raise ConfigError("fixed source needs probabilities")
        if self.probs is not None:
            object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))

    def build(self):
        if self.kind == "synthetic":
            return SyntheticSource(self.vocab_size, self.entropy, self.seed, shape=self.shape, order=self.order)
        if self.kind == "fixed":
            return FixedSource(np.asarray(self.probs))
        return load_corpus(self.corpus, self.n, self.vocab)

    @property
    def V(self) -> int:
        if self.kind == "fixed":
            return len(self.probs)
        if self.kind == "ngram":
            return self.build().vocab_size
        return self.vocab_size


@dataclass(frozen=True)
class WatermarkSpec:
    """Key-free watermark parameters (the key comes from the environment or a flag)."""

    m: int = 3
    H: int = 12
    sampler: str = "gumbel"
    L: int = 1
    weights: Optional[tuple] = None
    scheduler: str = "cabs"
    W: int = 4
    f: int = 3
    h: int = 4
    min_len: Optional[int] = None
    max_factor: float = 1.5
    top_k: Optional[int] = None
    temperature: float = 1.0

    def params(self, key: SecretKey) -> WatermarkParams:
        cabs = CabsParams(H=self.H, W=self.W, f=self.f, h=self.h, min_len=self.min_len, max_factor=self.max_factor)
        return WatermarkParams(
            key=key,
            m=self.m,
            H=self.H,
            sampler=self.sampler,
            L=self.L,
            weights=self.weights,
            cabs=cabs,
            scheduler=self.scheduler,
            top_k=self.top_k,
            temperature=self.temperature,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    source: SourceSpec = field(default_factory=SourceSpec)
    watermark: WatermarkSpec = field(default_factory=WatermarkSpec)
    T: int = 300
    n_sequences: int = 100
    attack: Optional[AttackSpec] = None
    decoder: str = "gumbel"
    scorer: Optional[str] = None
    metrics: tuple = ("auc", "tpr_at_1pct_fpr", "bit_accuracy", "eer")
    master_seed: int = 0
    output_dir: str = "runs/default"
    workers: int = 1
    pi_model: str = "logistic"

    def __post_init__(self):
        if self.T < 1 or self.n_sequences < 1:
            raise ConfigError("T and n_sequences must be positive")
        if self.pi_model not in ("logistic", "oracle"):
            raise ConfigError("pi_model must be 'logistic' or 'oracle'")
        object.__setattr__(self, "metrics", tuple(self.metrics))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attack"] = None if self.attack is None else self.attack.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["source"] = SourceSpec(**d.get("source", {}))
        wm = dict(d.get("watermark", {}))
        if wm.get("weights") is not None:
            wm["weights"] = tuple(wm["weights"])
        d["watermark"] = WatermarkSpec(**wm)
        d["attack"] = AttackSpec.from_dict(d.get("attack"))
        return cls(**d)

    def digest(self) -> str:
        """Hash of everything that affects results (not output_dir or workers)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def dataset_digest(self) -> str:
        """Hash of the fields that determine the generated tokens."""
        d = self.to_dict()
        keep = ("source", "watermark", "T", "n_sequences", "attack", "master_seed")
        return hashlib.sha256(json.dumps({k: d[k] for k in keep}, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def effective_scorer(self) -> str:
        return self.scorer or self.decoder


def write_manifest(out_dir: Path, config: ExperimentConfig, extra: Optional[dict] = None) -> None:
    d = {"config": config.to_dict(), "digest": config.digest(), "dataset_digest": config.dataset_digest()}
    if extra:
        d.update(extra)
    write_json(out_dir / CONFIG_FILE, d)


def load_manifest(run_dir) -> ExperimentConfig:
    d = read_json(Path(run_dir) / CONFIG_FILE)
    cfg = ExperimentConfig.from_dict(d["config"])
    if cfg.digest() != d["digest"]:
        raise DigestMismatch(f"{run_dir}: stored digest does not match its configuration")
    return cfg


def _ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {p}: {exc}") from exc
    if not os.access(p, os.W_OK):
        raise ConfigError(f"output directory {p} is not writable")
    return p


# --------------------------------------------------------------------------
# per-sequence work (top level so worker processes can pickle it)


@functools.lru_cache(maxsize=8)
def _source_from_json(blob: str):
    return SourceSpec(**json.loads(blob)).build()


def _source(spec: SourceSpec):
    return _source_from_json(json.dumps(asdict(spec), sort_keys=True))


def _replay_u(tokens: Sequence[int], params: WatermarkParams):
    """Positions and raw layer values of every eligible token, by scheduler replay."""
    positions = replay_positions(tokens, params.cabs, params.key, params.scheduler)
    u: List[Optional[List[float]]] = []
    h = params.h
    for t, pos in enumerate(positions):
        if pos is None:
            u.append(None)
            continue
        ctx = tokens[t - h : t]
        u.append([float(prf_uniform_many(params.key, ctx, [tokens[t]], l)[0]) for l in range(1, params.L + 1)])
    return positions, u


def _generate_one(cfg_json: str, key_hex: str, index: int):
    cfg = ExperimentConfig.from_dict(json.loads(cfg_json))
    params = cfg.watermark.params(SecretKey.from_hex(key_hex))
    source = _source(cfg.source)
    seed = derive_seed(cfg.master_seed, index)
    msg = MessageSequence.random(params.H, params.m, derive_seed(seed, 1))
    res = encode(source, params, msg, cfg.T, seed)
    wm = SequenceRecord(
        tokens=res.tokens,
        positions=res.positions,
        u=[s.u for s in res.trace],
        msg=list(msg.symbols),
        params_digest=params.digest(),
        seed=seed,
        label="watermarked",
        index=index,
    )
    null_seed = derive_seed(seed, 2)
    null_tokens = sample_unwatermarked(source, params, cfg.T, null_seed)
    pos, u = _replay_u(null_tokens, params)
    null = SequenceRecord(
        tokens=null_tokens, positions=pos, u=u, msg=None, params_digest=params.digest(),
        seed=null_seed, label="null", index=index,
    )
    return wm, null


def _map(fn, args: List[tuple], workers: int):
    if workers <= 1 or len(args) < 2:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*args), chunksize=max(1, len(args) // (4 * workers))))


def run_generate(config: ExperimentConfig, key: SecretKey) -> Path:
    out = _ensure_dir(config.output_dir)
    blob = json.dumps(config.to_dict())
    pairs = _map(_generate_one, [(blob, key.hex(), i) for i in range(config.n_sequences)], config.workers)
    write_jsonl(out / WM_FILE, [p[0] for p in pairs])
    write_jsonl(out / NULL_FILE, [p[1] for p in pairs])
    write_manifest(out, config)
    log.info("wrote %d sequence pairs to %s", len(pairs), out)
    return out


# --------------------------------------------------------------------------
# attacks


def run_attack(config: ExperimentConfig, dataset_dir, spec: AttackSpec, out_dir, key: SecretKey) -> Path:
    """Attack the watermarked split; the null split is copied unchanged."""
    src = Path(dataset_dir)
    stored = load_manifest(src)
    if stored.dataset_digest() != config.dataset_digest():
        raise DigestMismatch("dataset was generated with a different configuration")
    out = _ensure_dir(out_dir)
    params = config.watermark.params(key)
    wm = read_jsonl(src / WM_FILE)
    null = read_jsonl(src / NULL_FILE)
    V = config.source.V
    attacked = []
    for rec, clean in zip(wm, null):
        s = replace(spec, seed=derive_seed(spec.seed, rec.index))
        toks = apply_attack(s, rec.tokens, V, clean.tokens)
        positions = replay_positions(toks, params.cabs, params.key, params.scheduler)
        attacked.append(replace(rec, tokens=toks, positions=positions, u=None))
    write_jsonl(out / WM_FILE, attacked)
    write_jsonl(out / NULL_FILE, null)
    write_manifest(out, replace(config, attack=spec, output_dir=str(out)))
    return out


# --------------------------------------------------------------------------
# detection


def build_pi_model(config: ExperimentConfig, key: SecretKey) -> Optional[PiModel]:
    """Layer-collision model for the Bayesian scorer, trained on source distributions."""
    wm = config.watermark
    if config.decoder != "bayes" and config.effective_scorer != "bayes":
        return None
    source = _source(config.source)
    rng = np.random.default_rng(derive_seed(config.master_seed, 2**32))
    V = config.source.V
    dists = [source.next_dist([int(x) for x in rng.integers(0, V, size=wm.h)]) for _ in range(PI_TRAIN_DISTS)]
    if config.pi_model == "oracle" or wm.L > PI_MAX_LITERAL_L:
        return PiModel.oracle(theory.collision_profile(dists, wm.L, rng))
    feats, labels = simulate_pi_samples(dists, wm.L, rng)
    if np.all(labels == labels[0]):
        return PiModel.oracle(theory.collision_profile(dists, wm.L, rng))
    return train_pi_model(feats, labels)


def _detect_one(cfg_json: str, key_hex: str, tokens: List[int], pi: Optional[dict]):
    cfg = ExperimentConfig.from_dict(json.loads(cfg_json))
    params = cfg.watermark.params(SecretKey.from_hex(key_hex))
    pi_model = None
    if pi is not None:
        pi_model = PiModel(**{k: (np.asarray(v) if k == "collisions" and v is not None else v) for k, v in pi.items()})
    rep = detect(tokens, params, decoder=cfg.decoder, scorer=cfg.effective_scorer, pi_model=pi_model)
    return length_adjusted_score(rep), rep.decoded, rep.n_eligible, sum(rep.empty_positions)


def length_adjusted_score(rep) -> float:
    """Score comparable across texts of different lengths.

    The log score is a sum over eligible tokens, Gamma(n, 1) under the null,
    so it is replaced by its null tail -ln Pr[Gamma(n) >= score].  The
    weighted mean is already length-free and the Bayes log-odds is left as is.
    """
    if rep.scorer != "gumbel" or rep.n_eligible == 0:
        return rep.score
    return float(-gamma_dist.logsf(rep.score, rep.n_eligible))


def _finite_scores(x: np.ndarray) -> np.ndarray:
    # texts without eligible tokens score -inf; rank them below every real score
    x = np.asarray(x, dtype=float)
    finite = x[np.isfinite(x)]
    floor = (finite.min() - 1.0) if finite.size else 0.0
    return np.where(np.isfinite(x), x, floor)


def compute_metrics(pos: np.ndarray, neg: np.ndarray, bit_acc: np.ndarray, fpr: float = 0.01) -> Dict[str, float]:
    both = _finite_scores(np.r_[pos, neg])
    p, n = both[: len(pos)], both[len(pos) :]
    lo, hi = evalkit.bootstrap_ci(bit_acc, n_resamples=500, seed=0)
    return {
        "auc": evalkit.auc(p, n),
        "tpr_at_1pct_fpr": evalkit.tpr_at_fpr(p, n, fpr),
        "eer": evalkit.empirical_eer(p, n),
        "bit_accuracy": float(np.mean(bit_acc)),
        "bit_accuracy_ci90_low": lo,
        "bit_accuracy_ci90_high": hi,
        "threshold": float(np.quantile(n, 1.0 - fpr, method="higher")),
        "n_pos": int(len(pos)),
        "n_neg": int(len(neg)),
    }


def run_detect(config: ExperimentConfig, dataset_dir, key: SecretKey, out_dir=None) -> dict:
    src = Path(dataset_dir)
    stored = load_manifest(src)
    if stored.dataset_digest() != config.dataset_digest():
        raise DigestMismatch("dataset digest does not match the detection configuration; refusing to detect")
    params = config.watermark.params(key)
    wm = read_jsonl(src / WM_FILE)
    null = read_jsonl(src / NULL_FILE)
    for r in wm + null:
        if r.params_digest != params.digest():
            raise DigestMismatch("record was produced with different watermark parameters or key")
    pi = build_pi_model(config, key)
    pi_d = None
    if pi is not None:
        pi_d = {"mode": pi.mode, "weight": pi.weight, "bias": pi.bias,
                "collisions": None if pi.collisions is None else pi.collisions.tolist()}
    blob = json.dumps(config.to_dict())
    args = [(blob, key.hex(), r.tokens, pi_d) for r in wm + null]
    res = _map(_detect_one, args, config.workers)
    n = len(wm)
    pos = np.array([r[0] for r in res[:n]])
    neg = np.array([r[0] for r in res[n:]])
    m = config.watermark.m
    bit_acc = np.array([evalkit.bit_accuracy(res[i][1], wm[i].msg, m) for i in range(n)])
    metrics = compute_metrics(pos, neg, bit_acc)
    report = {
        "digest": config.digest(),
        "dataset_digest": config.dataset_digest(),
        "params_digest": params.digest(),
        "decoder": config.decoder,
        "scorer": config.effective_scorer,
        "attack": None if config.attack is None else config.attack.to_dict(),
        "metrics": {k: metrics[k] for k in metrics},
    }
    out = _ensure_dir(out_dir if out_dir is not None else src)
    write_json(out / "metrics.json", report)
    write_json(out / "calibration.json", {"digest": config.digest(), "scorer": config.effective_scorer,
                                          "fpr": 0.01, "threshold": metrics["threshold"]})
    write_csv(out / "metrics.csv", [dict(digest=config.digest(), **metrics)])
    rows = []
    for i, r in enumerate(res):
        label = "watermarked" if i < n else "null"
        rows.append({"index": (wm + null)[i].index, "label": label, "score": r[0], "n_eligible": r[2], "n_empty": r[3],
                     "bit_accuracy": bit_acc[i] if i < n else None})
    write_csv(out / "scores.csv", rows, ["index", "label", "score", "n_eligible", "n_empty", "bit_accuracy"])
    return report


# --------------------------------------------------------------------------
# theory and chunk simulation


@dataclass(frozen=True)
class TheoryGrid:
    T: tuple = (50, 100, 200, 300, 400)
    entropy: tuple = (0.5, 1.0, 1.7, 2.5)
    m: tuple = (1, 2, 3, 4)
    L: int = 30
    collisions: tuple = (0.5, 0.7, 0.75, 0.8)


def run_theory(grid: TheoryGrid, out_path=None) -> List[dict]:
    rows = []
    for T in grid.T:
        for H in grid.entropy:
            for m in grid.m:
                ex = theory.eer_gumbel_exact(T, H, m)
                asy = theory.eer_gumbel_asymptotic(T, H, m)
                rows.append({"family": "gumbel", "T": T, "entropy": H, "m": m, "L": 1, "collision": None,
                             "zeta": None, "eer": ex.eer, "log_eer": ex.log_eer, "asymptotic_log_eer": asy.log_eer,
                             "degenerate": ex.degenerate})
        for c in grid.collisions:
            t = theory.eer_tournament(T, theory.TournamentRegime.constant(grid.L, c))
            rows.append({"family": "tournament", "T": T, "entropy": None, "m": 1, "L": grid.L, "collision": c,
                         "zeta": t.zeta, "eer": t.eer, "log_eer": t.log_eer, "asymptotic_log_eer": None,
                         "degenerate": t.degenerate})
    if out_path is not None:
        write_csv(out_path, rows)
    return rows


@dataclass(frozen=True)
class ChunkSimConfig:
    K: int = 20
    m: int = 2
    alpha: float = 5.0
    prior_w: float = 0.5
    n_trials: int = 10_000
    seed: int = 0
    glrt_tau: Optional[float] = None
    n_tokens: int = 1


def run_chunk_sim(config: ChunkSimConfig, out_dir=None) -> dict:
    model = ChunkModel(config.K, config.m, config.alpha, config.prior_w)
    sim = simulate_chunks(model, config.n_trials, config.seed, config.glrt_tau, config.n_tokens)
    table = comparison_table(sim, config.prior_w)
    if out_dir is not None:
        out = _ensure_dir(out_dir)
        rows = [{"method": k, **v} for k, v in table.items()]
        write_csv(out / "chunk_table.csv", rows, ["method", "fpr", "fnr", "ber"])
        trials = []
        for label in ("h0", "h1"):
            for i in range(config.n_trials):
                trials.append({
                    "hypothesis": label, "trial": i,
                    "marginal": sim[f"{label}_marginal"][i], "glrt": sim[f"{label}_glrt"][i],
                    "marginal_decision": bool(sim[f"{label}_marginal_decision"][i]),
                    "dtd_decision": bool(sim[f"{label}_dtd_decision"][i]),
                    "glrt_decision": bool(sim[f"{label}_glrt_decision"][i]),
                    "bit_error": sim[f"{label}_bit_errors"][i],
                })
        write_csv(out / "chunk_trials.csv", trials)
        write_json(out / "chunk_config.json", asdict(config))
    return table


# --------------------------------------------------------------------------
# sweeps and reports

SWEEPABLE = ("T", "m", "H", "entropy", "epsilon", "L")


def _with_value(config: ExperimentConfig, param: str, value, out_dir: str) -> ExperimentConfig:
    if param == "T":
        return replace(config, T=int(value), output_dir=out_dir)
    if param in ("m", "H", "L"):
        return replace(config, watermark=replace(config.watermark, **{param: int(value)}), output_dir=out_dir)
    if param == "entropy":
        return replace(config, source=replace(config.source, entropy=float(value)), output_dir=out_dir)
    raise ConfigError(f"cannot sweep {param!r}")


def run_sweep(config: ExperimentConfig, param: str, values: Sequence, key: SecretKey, attack_kind: str = "substitute") -> List[dict]:
    if param not in SWEEPABLE:
        raise ConfigError(f"sweep parameter must be one of {SWEEPABLE}")
    base = Path(config.output_dir)
    rows = []
    if param == "epsilon":
        clean = replace(config, output_dir=str(base / "clean"))
        run_generate(clean, key)
    for v in values:
        sub = str(base / f"{param}_{v}")
        if param == "epsilon":
            spec = AttackSpec(attack_kind, float(v), seed=config.master_seed)
            run_dir = run_attack(clean, clean.output_dir, spec, sub, key)
            cfg = replace(clean, attack=spec, output_dir=sub)
        else:
            cfg = _with_value(config, param, v, sub)
            run_dir = run_generate(cfg, key)
        rep = run_detect(cfg, run_dir, key)
        H_src = cfg.source.entropy
        th = theory.eer_gumbel_exact(cfg.T, H_src, cfg.watermark.m) if H_src > 0 else None
        rows.append({"param": param, "value": v, **rep["metrics"],
                     "theory_eer": None if th is None else th.eer})
    write_csv(base / f"sweep_{param}.csv", rows)
    return rows


def run_report(root, out_path=None) -> List[dict]:
    """Collect every metrics.json under ``root`` into one table."""
    rows = []
    for path in sorted(Path(root).rglob("metrics.json")):
        rep = read_json(path)
        rows.append({"run": str(path.parent), "digest": rep["digest"], "decoder": rep["decoder"],
                     "scorer": rep["scorer"], **rep["metrics"]})
    if out_path is not None and rows:
        write_csv(out_path, rows)
    return rows
