"""Multi-bit encoder, per-position symbol decoders and whole-text detection."""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from . import sampler
from .cabs import CabsParams, make_scheduler
from .lm import DistributionSource, truncate_topk
from .mirror import apply_mirror
from .rng import SecretKey, layer_randomness, prf_uniform_many

U_CLAMP = 1.0 - 2.0**-53
LIK_FLOOR = 1e-300

SAMPLERS = ("gumbel", "tournament")
DECODERS = ("gumbel", "wmean", "bayes")


@dataclass(frozen=True)
class WatermarkParams:
    key: SecretKey
    m: int = 3
    H: int = 12
    sampler: str = "gumbel"
    L: int = 1
    weights: Optional[tuple] = None
    cabs: Optional[CabsParams] = None
    scheduler: str = "cabs"
    top_k: Optional[int] = None
    temperature: float = 1.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.sampler == "gumbel" and self.L != 1:
            raise ValueError("gumbel sampling uses exactly one layer")
        if self.cabs is None:
            object.__setattr__(self, "cabs", CabsParams(H=self.H))
        elif self.cabs.H != self.H:
            raise ValueError("cabs.H must equal H")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != self.L:
                raise ValueError("need one weight per layer")
            object.__setattr__(self, "weights", w)

    @property
    def payload_bits(self) -> int:
        return self.m * self.H

    @property
    def h(self) -> int:
        return self.cabs.h

    @property
    def alpha(self) -> np.ndarray:
        return np.ones(self.L) if self.weights is None else np.asarray(self.weights)

    def public_dict(self) -> dict:
        """Parameters without key material (the key enters as a fingerprint)."""
        d = {
            "m": self.m,
            "H": self.H,
            "sampler": self.sampler,
            "L": self.L,
            "weights": list(self.weights) if self.weights is not None else None,
            "cabs": asdict(self.cabs),
            "scheduler": self.scheduler,
            "top_k": self.top_k,
            "temperature": self.temperature,
            "key_fingerprint": hashlib.blake2b(self.key.data, digest_size=8).hexdigest(),
        }
        return d

    def digest(self) -> str:
        blob = json.dumps(self.public_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class MessageSequence:
    symbols: tuple
    m: int

    def __post_init__(self):
        syms = tuple(int(s) for s in self.symbols)
        if any(not 0 <= s < (1 << self.m) for s in syms):
            raise ValueError(f"symbols must lie in [0, {1 << self.m})")
        object.__setattr__(self, "symbols", syms)

    def __len__(self) -> int:
        return len(self.symbols)

    def __getitem__(self, i: int) -> int:
        return self.symbols[i]

    @classmethod
    def random(cls, H: int, m: int, seed) -> "MessageSequence":
        rng = np.random.default_rng(seed)
        return cls(tuple(int(x) for x in rng.integers(0, 1 << m, size=H)), m)


@dataclass
class TraceStep:
    token: int
    position: Optional[int]
    u: Optional[List[float]]
    prob: float


@dataclass
class EncodeResult:
    tokens: List[int]
    trace: List[TraceStep]

    @property
    def positions(self) -> List[Optional[int]]:
        return [s.position for s in self.trace]

    @property
    def selected_probs(self) -> List[float]:
        return [s.prob for s in self.trace]


def _step_distribution(source: DistributionSource, params: WatermarkParams, prefix) -> np.ndarray:
    p = source.next_dist(prefix)
    if params.top_k is not None or params.temperature != 1.0:
        p = truncate_topk(p, params.top_k or p.size, params.temperature)
    return p


def encode(
    source: DistributionSource,
    params: WatermarkParams,
    msg: MessageSequence,
    T: int,
    master_seed: int,
) -> EncodeResult:
    h = params.h
    if T <= h:
        raise ValueError(f"sequence length must exceed the context length h={h}")
    if len(msg) != params.H or msg.m != params.m:
        raise ValueError("message does not match the watermark parameters")
    rng = np.random.default_rng(master_seed)
    sched = make_scheduler(params.scheduler, params.cabs, params.key)
    tokens: List[int] = []
    trace: List[TraceStep] = []
    for t in range(T):
        p = _step_distribution(source, params, tokens)
        pos = sched.peek(tokens[t - h : t]) if t >= h else None
        if pos is None:
            tok = sampler.sample_plain(p, rng)
            trace.append(TraceStep(tok, None, None, float(p[tok])))
            tokens.append(tok)
            if t >= h:
                sched.assign(tokens[t - h : t], tok)
            continue
        ctx = tokens[t - h : t]
        support = np.flatnonzero(p > 0)
        u = layer_randomness(params.key, ctx, support, params.L)
        um = apply_mirror(u, params.m, msg[pos])
        ps = p[support]
        if params.sampler == "gumbel":
            j = sampler.gumbel_select(ps, um[0])
        else:
            j = sampler.tournament_sample(ps, um, params.L, rng)
        tok = int(support[j])
        sched.assign(ctx, tok)
        trace.append(TraceStep(tok, pos, [float(x) for x in u[:, j]], float(p[tok])))
        tokens.append(tok)
    return EncodeResult(tokens, trace)


def sample_unwatermarked(
    source: DistributionSource, params: WatermarkParams, T: int, seed: int
) -> List[int]:
    rng = np.random.default_rng(seed)
    tokens: List[int] = []
    for _ in range(T):
        p = _step_distribution(source, params, tokens)
        tokens.append(sampler.sample_plain(p, rng))
    return tokens


# --------------------------------------------------------------------------
# scores


def log_score(u_list, return_flag: bool = False):
    """-sum ln(1 - u); values at 1 are clamped to 1 - 2**-53 and flagged."""
    u = np.asarray(u_list, dtype=float).ravel()
    clamped = bool(np.any(u >= 1.0))
    if clamped:
        u = np.minimum(u, U_CLAMP)
        if not return_flag:
            warnings.warn("u value of 1 clamped in log_score", RuntimeWarning, stacklevel=2)
    val = float(-np.sum(np.log1p(-u)))
    return (val, clamped) if return_flag else val


def wmean_score(u_matrix, weights=None) -> float:
    u = np.atleast_2d(np.asarray(u_matrix, dtype=float))
    if u.size == 0:
        return float("nan")
    T, L = u.shape
    a = np.ones(L) if weights is None else np.asarray(weights, dtype=float)
    if a.size != L:
        raise ValueError("weights length must equal the number of layers")
    return float((u * a[None, :]).sum() / (T * L))


@dataclass
class PiModel:
    """Predicts P(pi = 2 | u of earlier layers): two distinct values met in the layer's match.

    ``mode="logistic"`` uses one feature, the mean of the earlier-layer values
    (0.5 at the first layer).  ``mode="oracle"`` returns ``1 - C_l`` from
    exact per-layer collision probabilities.
    """

    mode: str = "logistic"
    weight: float = 0.0
    bias: float = 0.0
    collisions: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in ("logistic", "oracle"):
            raise ValueError("mode must be 'logistic' or 'oracle'")
        if self.mode == "oracle":
            if self.collisions is None:
                raise ValueError("oracle mode needs collision probabilities")
            self.collisions = np.asarray(self.collisions, dtype=float)

    @classmethod
    def oracle(cls, collisions) -> "PiModel":
        return cls(mode="oracle", collisions=np.asarray(collisions, dtype=float))

    @staticmethod
    def features(u_matrix) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u_matrix, dtype=float))
        T, L = u.shape
        csum = np.cumsum(u, axis=1)
        feat = np.full((T, L), 0.5)
        if L > 1:
            feat[:, 1:] = csum[:, :-1] / np.arange(1, L)[None, :]
        return feat

    def prob_pi2(self, u_matrix) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u_matrix, dtype=float))
        if self.mode == "oracle":
            c = np.broadcast_to(self.collisions, u.shape) if self.collisions.ndim else np.full(u.shape, float(self.collisions))
            return 1.0 - c
        z = self.weight * self.features(u) + self.bias
        return 1.0 / (1.0 + np.exp(-z))


def layer_log_likelihood(u_matrix, pi_model: PiModel) -> np.ndarray:
    """ln of P(u|pi=1) P(pi=1) + P(u|pi=2) P(pi=2) with P(u|pi=1)=1 and P(u|pi=2)=2u."""
    u = np.atleast_2d(np.asarray(u_matrix, dtype=float))
    p2 = pi_model.prob_pi2(u)
    lik = (1.0 - p2) + p2 * 2.0 * u
    return np.log(np.maximum(lik, LIK_FLOOR))


def bayes_log_odds(u_matrix, pi_model: PiModel, prior_w: float = 0.5) -> float:
    if not 0.0 < prior_w < 1.0:
        raise ValueError("prior_w must lie in (0, 1)")
    u = np.atleast_2d(np.asarray(u_matrix, dtype=float))
    llr = float(layer_log_likelihood(u, pi_model).sum()) if u.size else 0.0
    return llr + math.log(prior_w / (1.0 - prior_w))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def bayes_score(u_matrix, pi_model: PiModel, prior_w: float = 0.5) -> float:
    """Posterior probability that the text is watermarked."""
    return _sigmoid(bayes_log_odds(u_matrix, pi_model, prior_w))


def train_pi_model(features, labels, lr: float = 1.0, tol: float = 1e-6, max_epochs: int = 10_000) -> PiModel:
    """Full-batch gradient descent on the logistic loss; labels are 1 or 2 (pi values)."""
    x = np.asarray(features, dtype=float).ravel()
    y = (np.asarray(labels).ravel() == 2).astype(float)
    if x.size != y.size:
        raise ValueError("features and labels differ in length")
    n_pos, n_neg = int(y.sum()), int(y.size - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes (pi=1 and pi=2) are required")
    mu, sd = x.mean(), x.std()
    sd = sd if sd > 0 else 1.0
    xs = (x - mu) / sd
    w, b = 0.0, math.log(n_pos / n_neg)
    for _ in range(max_epochs):
        p = 1.0 / (1.0 + np.exp(-(w * xs + b)))
        gw = float(np.mean((p - y) * xs))
        gb = float(np.mean(p - y))
        w -= lr * gw
        b -= lr * gb
        if max(abs(gw), abs(gb)) < tol:
            break
    return PiModel(mode="logistic", weight=w / sd, bias=b - w * mu / sd)


def simulate_pi_samples(dists: Sequence, L: int, seed) -> tuple:
    """Observed (feature, pi) pairs along the winner's path of literal brackets.

    One bracket per distribution, with fresh uniform layer values; the feature
    at layer l is the mean of the winner's values at layers < l.
    """
    if L > sampler.NAIVE_MAX_LAYERS:
        raise ValueError(f"literal brackets are limited to L <= {sampler.NAIVE_MAX_LAYERS}")
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for dist in dists:
        p = np.asarray(dist, dtype=float)
        u = rng.random((L, p.size))
        cand = rng.choice(p.size, size=1 << L, p=p)
        # track, for each surviving slot, the per-layer pi labels of its path
        paths = [[] for _ in range(cand.size)]
        for layer in range(L):
            a, b = cand[0::2], cand[1::2]
            ua, ub = u[layer][a], u[layer][b]
            new_c, new_p = [], []
            for i in range(a.size):
                pi = 1 if ua[i] == ub[i] else 2
                win_a = ua[i] > ub[i] or (ua[i] == ub[i] and rng.random() < 0.5)
                new_c.append(a[i] if win_a else b[i])
                new_p.append(paths[2 * i + (0 if win_a else 1)] + [pi])
            cand, paths = np.asarray(new_c), new_p
        winner = int(cand[0])
        wu = u[:, winner]
        f = PiModel.features(wu[None, :])[0]
        feats.extend(f.tolist())
        labels.extend(paths[0])
    return np.asarray(feats), np.asarray(labels)


# --------------------------------------------------------------------------
# per-position decoders


class DecodedSymbol(NamedTuple):
    symbol: int
    empty: bool


def _argmax_lowest(scores: np.ndarray) -> int:
    return int(np.argmax(scores))  # first maximum, i.e. lowest symbol


def decode_position_gumbel(u_list, m: int) -> DecodedSymbol:
    u = np.asarray(u_list, dtype=float).ravel()
    if u.size == 0:
        return DecodedSymbol(0, True)
    scores = [log_score(np.minimum(apply_mirror(u, m, M), U_CLAMP)) for M in range(1 << m)]
    return DecodedSymbol(_argmax_lowest(np.asarray(scores)), False)


def decode_position_wmean(u_matrix, weights, m: int) -> DecodedSymbol:
    u = np.asarray(u_matrix, dtype=float)
    if u.size == 0:
        return DecodedSymbol(0, True)
    u = np.atleast_2d(u)
    scores = [wmean_score(apply_mirror(u, m, M), weights) for M in range(1 << m)]
    return DecodedSymbol(_argmax_lowest(np.asarray(scores)), False)


def decode_position_bayes(u_matrix, weights, m: int, pi_model: PiModel, msg_prior=None) -> DecodedSymbol:
    """MAP symbol; ``weights`` scale each layer's log-likelihood (all ones by default)."""
    u = np.asarray(u_matrix, dtype=float)
    if u.size == 0:
        return DecodedSymbol(0, True)
    u = np.atleast_2d(u)
    n_sym = 1 << m
    prior = np.full(n_sym, 1.0 / n_sym) if msg_prior is None else np.asarray(msg_prior, dtype=float)
    a = np.ones(u.shape[1]) if weights is None else np.asarray(weights, dtype=float)
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior)
    scores = np.empty(n_sym)
    for M in range(n_sym):
        ll = layer_log_likelihood(apply_mirror(u, m, M), pi_model)
        scores[M] = log_prior[M] + float((ll * a[None, :]).sum())
    return DecodedSymbol(_argmax_lowest(scores), False)


# --------------------------------------------------------------------------
# detection


@dataclass
class DetectionReport:
    decoded: List[int]
    empty_positions: List[bool]
    score: float
    decision: bool
    threshold: float
    n_eligible: int
    scorer: str
    decoder: str
    posterior: Optional[float] = None
    position_u: Dict[int, List[List[float]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "decoded": self.decoded,
            "empty_positions": self.empty_positions,
            "score": self.score,
            "decision": self.decision,
            "threshold": self.threshold,
            "n_eligible": self.n_eligible,
            "scorer": self.scorer,
            "decoder": self.decoder,
            "posterior": self.posterior,
            "position_u": {str(k): v for k, v in self.position_u.items()},
        }


def collect_position_u(tokens: Sequence[int], params: WatermarkParams) -> Dict[int, np.ndarray]:
    """Replay the scheduler and recompute each eligible token's layer values, bucketed by position."""
    h = params.h
    sched = make_scheduler(params.scheduler, params.cabs, params.key)
    buckets: Dict[int, list] = {i: [] for i in range(params.H)}
    for t in range(h, len(tokens)):
        ctx = tokens[t - h : t]
        pos = sched.assign(ctx, tokens[t])
        if pos is None:
            continue
        u = np.array(
            [prf_uniform_many(params.key, ctx, [tokens[t]], layer)[0] for layer in range(1, params.L + 1)]
        )
        buckets[pos].append(u)
    return {k: (np.vstack(v) if v else np.empty((0, params.L))) for k, v in buckets.items()}


def decode_symbol(u_rows: np.ndarray, params: WatermarkParams, decoder: str, pi_model=None, msg_prior=None) -> DecodedSymbol:
    if decoder == "gumbel":
        return decode_position_gumbel(u_rows.ravel(), params.m)
    if decoder == "wmean":
        return decode_position_wmean(u_rows, params.alpha, params.m)
    if decoder == "bayes":
        if pi_model is None:
            raise ValueError("bayes decoding needs a PiModel")
        return decode_position_bayes(u_rows, params.alpha, params.m, pi_model, msg_prior)
    raise ValueError(f"unknown decoder {decoder!r}")


def score_mirrored(mirrored: np.ndarray, params: WatermarkParams, scorer: str, pi_model=None, prior_w: float = 0.5) -> float:
    """Global score; for ``bayes`` this is the posterior log-odds (monotone in the posterior)."""
    if scorer == "gumbel":
        return log_score(np.minimum(mirrored.ravel(), U_CLAMP))
    if scorer == "wmean":
        return wmean_score(mirrored, params.alpha)
    if scorer == "bayes":
        if pi_model is None:
            raise ValueError("bayes scoring needs a PiModel")
        return bayes_log_odds(mirrored, pi_model, prior_w)
    raise ValueError(f"unknown scorer {scorer!r}")


def detect(
    tokens: Sequence[int],
    params: WatermarkParams,
    decoder: str = "gumbel",
    scorer: Optional[str] = None,
    threshold: float = float("inf"),
    pi_model: Optional[PiModel] = None,
    prior_w: float = 0.5,
    msg_prior=None,
    keep_u: bool = False,
) -> DetectionReport:
    scorer = scorer or decoder
    tokens = [int(t) for t in tokens]
    if len(tokens) <= params.h:
        return DetectionReport(
            decoded=[0] * params.H,
            empty_positions=[True] * params.H,
            score=float("-inf"),
            decision=False,
            threshold=threshold,
            n_eligible=0,
            scorer=scorer,
            decoder=decoder,
        )
    buckets = collect_position_u(tokens, params)
    decoded, empty, mirrored = [], [], []
    for pos in range(params.H):
        rows = buckets[pos]
        sym = decode_symbol(rows, params, decoder, pi_model, msg_prior)
        decoded.append(sym.symbol)
        empty.append(sym.empty)
        if rows.size:
            mirrored.append(np.atleast_2d(apply_mirror(rows, params.m, sym.symbol)))
    n_elig = int(sum(b.shape[0] for b in buckets.values()))
    if n_elig == 0:
        score = float("-inf")
    else:
        score = score_mirrored(np.vstack(mirrored), params, scorer, pi_model, prior_w)
    posterior = _sigmoid(score) if scorer == "bayes" and math.isfinite(score) else None
    return DetectionReport(
        decoded=decoded,
        empty_positions=empty,
        score=score,
        decision=bool(score > threshold),
        threshold=threshold,
        n_eligible=n_elig,
        scorer=scorer,
        decoder=decoder,
        posterior=posterior,
        position_u={k: v.tolist() for k, v in buckets.items()} if keep_u else {},
    )
