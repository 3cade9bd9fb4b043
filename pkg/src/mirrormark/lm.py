"""Next-token distribution sources standing in for a language model.

Two sources are provided: a synthetic one whose per-step distributions have
a prescribed Shannon entropy, and an add-one smoothed n-gram model fit from
a whitespace-tokenised corpus.
"""

from __future__ import annotations

import hashlib
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

SUM_TOL = 1e-9


class DistributionError(ValueError):
    pass


def validate(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise DistributionError("distribution must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DistributionError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > SUM_TOL:
        raise DistributionError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def entropy(dist) -> float:
    """Shannon entropy in nats, with 0 ln 0 = 0."""
    p = np.asarray(dist, dtype=float)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def empirical_entropy(selected_probs: Sequence[float]) -> float:
    p = np.asarray(selected_probs, dtype=float)
    if p.size == 0:
        raise DistributionError("need at least one selected probability")
    if np.any(p <= 0) or np.any(p > 1):
        raise DistributionError("selected probabilities must lie in (0, 1]")
    return float(np.mean(-np.log(p)))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def synthetic_distribution(V: int, target_entropy: float, seed: int) -> np.ndarray:
    """Temperature-scaled random logits whose entropy matches ``target_entropy``.

    Entropy of softmax(z / T) increases monotonically from 0 to ln V in T, so
    the temperature is found by root bracketing on log T.
    """
    if V < 1:
        raise DistributionError("vocabulary must be non-empty")
    max_h = np.log(V)
    if target_entropy < 0 or target_entropy > max_h + 1e-12:
        raise DistributionError(f"target entropy must lie in [0, ln V={max_h:.6f}]")
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal(V)
    if target_entropy >= max_h - 1e-12:
        return np.full(V, 1.0 / V)
    if target_entropy <= 0.0:
        p = np.zeros(V)
        p[int(np.argmax(logits))] = 1.0
        return p

    def gap(log_t: float) -> float:
        return entropy(_softmax(logits / np.exp(log_t))) - target_entropy

    lo, hi = -12.0, 12.0
    while gap(lo) > 0:
        lo -= 12.0
    while gap(hi) < 0:
        hi += 12.0
    log_t = brentq(gap, lo, hi, xtol=1e-12, rtol=1e-12, maxiter=500)
    return _softmax(logits / np.exp(log_t))


def flat_distribution(V: int, target_entropy: float, seed: int) -> np.ndarray:
    """Near-uniform mass on ceil(e^H) random tokens with entropy exactly H.

    All but one of the k = ceil(e^H) tokens share a common probability and the
    last one takes the remainder; when e^H is an integer the result is
    uniform on k tokens, i.e. an effective candidate pool of exactly e^H.
    """
    if V < 1:
        raise DistributionError("vocabulary must be non-empty")
    max_h = np.log(V)
    if target_entropy < 0 or target_entropy > max_h + 1e-12:
        raise DistributionError(f"target entropy must lie in [0, ln V={max_h:.6f}]")
    rng = np.random.default_rng(seed)
    k = min(V, int(np.ceil(np.exp(target_entropy) - 1e-9)))
    support = rng.choice(V, size=k, replace=False)
    p = np.zeros(V)
    if k == 1:
        p[support[0]] = 1.0
        return p
    if abs(target_entropy - np.log(k)) < 1e-12:
        p[support] = 1.0 / k
        return p

    def h_of(a: float) -> float:
        b = 1.0 - (k - 1) * a
        return float(-(k - 1) * a * np.log(a) - (b * np.log(b) if b > 0 else 0.0))

    # a ranges over (0, 1/(k-1)); entropy at a = 1/k is ln k (the maximum)
    a = brentq(lambda x: h_of(x) - target_entropy, 1e-300, 1.0 / k, xtol=1e-15, rtol=1e-14)
    p[support[:-1]] = a
    p[support[-1]] = 1.0 - (k - 1) * a
    return p


_SHAPES = {"softmax": synthetic_distribution, "flat": flat_distribution}


def truncate_topk(dist, k: int, temperature: float = 1.0) -> np.ndarray:
    """Keep the k most probable tokens (ties to the lower index), sharpen by 1/temperature."""
    p = validate(dist)
    if k < 1:
        raise DistributionError("k must be >= 1")
    if temperature <= 0:
        raise DistributionError("temperature must be positive")
    k = min(k, p.size)
    # stable sort on -p keeps lower indices first among ties
    keep = np.argsort(-p, kind="stable")[:k]
    kept = p[keep]
    out = np.zeros_like(p)
    if temperature == 1.0:
        w = kept
    else:
        with np.errstate(divide="ignore"):
            logw = np.where(kept > 0, np.log(np.where(kept > 0, kept, 1.0)), -np.inf) / temperature
        w = np.exp(logw - logw.max())
    out[keep] = w / w.sum()
    return out


class DistributionSource(Protocol):
    vocab_size: int

    def next_dist(self, context: Sequence[int]) -> np.ndarray: ...

    def describe(self) -> dict: ...


def _context_seed(seed: int, context: Sequence[int]) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack(">QI", int(seed) % 2**64, len(context)))
    for t in context:
        h.update(struct.pack(">Q", int(t)))
    return int.from_bytes(h.digest(), "big")


@dataclass
class SyntheticSource:
    """Fresh entropy-controlled distribution per generation step.

    The distribution is a deterministic function of (seed, prefix), so a
    detector replaying the text sees the same source the encoder did.  With
    ``order=k`` only the last k tokens matter, which makes the source a
    k-th order Markov chain that revisits contexts the way real text does;
    ``order=None`` conditions on the full prefix.
    """

    vocab_size: int
    target_entropy: float
    seed: int = 0
    top_k: Optional[int] = None
    temperature: float = 1.0
    shape: str = "softmax"
    order: Optional[int] = None
    _cache: Dict[Tuple[int, ...], np.ndarray] = field(default_factory=dict, repr=False)

    def next_dist(self, context: Sequence[int]) -> np.ndarray:
        key = tuple(int(t) for t in context)
        if self.order is not None:
            key = key[len(key) - self.order :] if self.order > 0 else ()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if self.shape not in _SHAPES:
            raise DistributionError(f"shape must be one of {sorted(_SHAPES)}")
        p = _SHAPES[self.shape](self.vocab_size, self.target_entropy, _context_seed(self.seed, key))
        if self.top_k is not None or self.temperature != 1.0:
            p = truncate_topk(p, self.top_k or self.vocab_size, self.temperature)
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = p
        return p

    def describe(self) -> dict:
        return {
            "kind": "synthetic",
            "vocab_size": self.vocab_size,
            "target_entropy": self.target_entropy,
            "seed": self.seed,
            "shape": self.shape,
            "order": self.order,
            "top_k": self.top_k,
            "temperature": self.temperature,
        }


@dataclass
class FixedSource:
    """The same distribution at every step; used by distortion checks."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = validate(self.probs)

    @property
    def vocab_size(self) -> int:
        return int(self.probs.size)

    def next_dist(self, context: Sequence[int]) -> np.ndarray:
        return self.probs

    def describe(self) -> dict:
        return {"kind": "fixed", "probs": [float(x) for x in self.probs]}


# --------------------------------------------------------------------------
# n-gram model


class Vocabulary:
    """Token string <-> id mapping persisted one token per line (line number = id)."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.tokens: List[str] = []
        self.index: Dict[str, int] = {}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: Sequence[str]) -> List[int]:
        return [self.index[w] for w in words]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)


@dataclass
class NGramModel:
    n: int
    vocab: Vocabulary
    counts: Dict[int, Dict[Tuple[int, ...], Counter]]

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def next_dist(self, context: Sequence[int]) -> np.ndarray:
        return ngram_next_dist(self, context)

    def describe(self) -> dict:
        return {"kind": "ngram", "n": self.n, "vocab_size": self.vocab_size}


def fit_ngram(token_ids: Sequence[int], n: int, vocab: Vocabulary) -> NGramModel:
    if len(vocab) == 0:
        raise DistributionError("cannot fit an n-gram model with an empty vocabulary")
    if n < 1:
        raise DistributionError("n must be >= 1")
    counts: Dict[int, Dict[Tuple[int, ...], Counter]] = {}
    ids = list(token_ids)
    for order in range(1, n + 1):
        table: Dict[Tuple[int, ...], Counter] = defaultdict(Counter)
        for i in range(order - 1, len(ids)):
            table[tuple(ids[i - order + 1 : i])][ids[i]] += 1
        counts[order] = dict(table)
    return NGramModel(n=n, vocab=vocab, counts=counts)


def fit_ngram_from_text(text: str, n: int, vocab: Optional[Vocabulary] = None) -> NGramModel:
    words = text.split()
    vocab = vocab if vocab is not None else Vocabulary()
    for w in words:
        vocab.add(w)
    return fit_ngram(vocab.encode(words), n, vocab)


def load_corpus(corpus_path, n: int, vocab_path=None) -> NGramModel:
    """Fit from a UTF-8 corpus; reuses ``vocab_path`` if it exists, else writes it."""
    text = Path(corpus_path).read_text(encoding="utf-8")
    vocab = None
    if vocab_path is not None and Path(vocab_path).exists():
        vocab = Vocabulary.load(vocab_path)
    model = fit_ngram_from_text(text, n, vocab)
    if vocab_path is not None:
        model.vocab.save(vocab_path)
    return model


def ngram_next_dist(model: NGramModel, context: Sequence[int]) -> np.ndarray:
    """Add-one smoothed conditional; short contexts back off to the matching lower order."""
    V = model.vocab_size
    hist = tuple(context)[-(model.n - 1):] if model.n > 1 else ()
    order = len(hist) + 1
    counter = model.counts[order].get(hist)
    p = np.ones(V)
    total = 0
    if counter:
        for tok, c in counter.items():
            p[tok] += c
            total += c
    return p / (total + V)
