"""Token-level robustness attacks: copy-paste mixing and random edits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np

ATTACK_KINDS = ("copy_paste", "insert", "delete", "substitute")
EDIT_KINDS = ("insert", "delete", "substitute")
DEFAULT_SEGMENT_LEN = 20


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilon: float
    seed: int = 0
    segment_len: int = DEFAULT_SEGMENT_LEN

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"attack kind must be one of {ATTACK_KINDS}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.segment_len < 1:
            raise ValueError("segment_len must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> Optional["AttackSpec"]:
        return None if d is None else cls(**d)


def _segment_lengths(n_replace: int, segment_len: int) -> List[int]:
    full, rest = divmod(n_replace, segment_len)
    return [segment_len] * full + ([rest] if rest else [])


def copy_paste(wm_tokens: Sequence[int], clean_tokens: Sequence[int], epsilon: float, segment_len: int, seed) -> List[int]:
    """Overwrite ceil(epsilon * T) tokens with clean text, in contiguous spans.

    Spans are placed at uniformly random non-overlapping offsets and copy the
    clean tokens found at the same offsets, so the result keeps length T.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if segment_len < 1:
        raise ValueError("segment_len must be >= 1")
    wm = [int(t) for t in wm_tokens]
    T = len(wm)
    # round before ceil so that e.g. 0.4 * 400 is not pushed to 161
    n_replace = min(T, math.ceil(round(epsilon * T, 9)))
    if n_replace == 0:
        return wm
    if len(clean_tokens) < T:
        raise ValueError("clean sequence must be at least as long as the watermarked one")
    rng = np.random.default_rng(seed)
    segs = _segment_lengths(n_replace, segment_len)
    free = T - n_replace
    # random composition: place len(segs) spans among `free` untouched tokens
    # by choosing gap sizes uniformly (stars and bars), then shuffle span order
    rng.shuffle(segs)
    k = len(segs)
    cuts = np.sort(rng.choice(free + k, size=k, replace=False))
    gaps = np.diff(np.r_[-1, cuts]) - 1
    out = list(wm)
    start = 0
    for g, s in zip(gaps, segs):
        start += int(g)
        out[start : start + s] = [int(t) for t in clean_tokens[start : start + s]]
        start += s
    return out


def edit_attack(tokens: Sequence[int], kind: str, epsilon: float, vocab_size: int, seed) -> List[int]:
    """Independent per-token insertion, deletion or substitution with probability epsilon."""
    if kind not in EDIT_KINDS:
        raise ValueError(f"edit kind must be one of {EDIT_KINDS}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if kind == "substitute" and vocab_size < 2:
        raise ValueError("substitution needs a vocabulary of at least 2 tokens")
    toks = [int(t) for t in tokens]
    rng = np.random.default_rng(seed)
    hit = rng.random(len(toks)) < epsilon
    if kind == "delete":
        out = [t for t, h in zip(toks, hit) if not h]
        if toks and not out:
            raise ValueError("deletion removed every token")
        return out
    if kind == "insert":
        new = rng.integers(0, vocab_size, size=len(toks))
        out = []
        for t, h, n in zip(toks, hit, new):
            out.append(t)
            if h:
                out.append(int(n))
        return out
    # uniform over the other vocab_size - 1 ids
    offs = rng.integers(1, vocab_size, size=len(toks))
    return [int((t + o) % vocab_size) if h else t for t, h, o in zip(toks, hit, offs)]


def apply_attack(spec: AttackSpec, tokens: Sequence[int], vocab_size: int, clean_tokens: Optional[Sequence[int]] = None) -> List[int]:
    if spec.kind == "copy_paste":
        if clean_tokens is None:
            raise ValueError("copy_paste needs clean tokens")
        return copy_paste(tokens, clean_tokens, spec.epsilon, spec.segment_len, spec.seed)
    return edit_attack(tokens, spec.kind, spec.epsilon, vocab_size, spec.seed)
