"""Token-to-position schedulers.

``CabsScheduler`` is the context-anchored balanced scheduler: eligible tokens
go to the least-filled message position (ties broken by a keyed draw on the
context), and frames end when a keyed hash of the recent-token window has its
``f`` low bits zero (after ``min_len`` tokens) or when ``max_len`` is reached.
``NaiveScheduler`` picks a position by hashing the context alone.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Sequence, Set, Tuple

import numpy as np

from .rng import (
    TAG_CABS_CHOICE,
    TAG_NAIVE_POSITION,
    ContextLike,
    ContextWindow,
    SecretKey,
    frame_hash,
    tagged_uniform,
)


@dataclass(frozen=True)
class CabsParams:
    H: int
    W: int = 4
    f: int = 3
    h: int = 4
    min_len: Optional[int] = None
    max_factor: float = 1.5

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if self.W < 1:
            raise ValueError("W must be >= 1")
        if self.f < 0:
            raise ValueError("f must be >= 0")
        if self.h < 1:
            raise ValueError("h must be >= 1")
        if self.min_len is None:
            object.__setattr__(self, "min_len", self.H)
        if self.max_len < 1 or self.min_len > self.max_len:
            raise ValueError(
                f"need 1 <= min_len <= max_len, got min_len={self.min_len}, max_len={self.max_len}"
            )

    @property
    def max_len(self) -> int:
        return int(math.floor(self.max_factor * self.H + 1e-9))


def _ctx_tuple(context: ContextLike) -> Tuple[int, ...]:
    if isinstance(context, ContextWindow):
        return context.tokens
    return tuple(int(t) for t in context)


@dataclass
class CabsState:
    H: int
    counters: List[int] = field(default_factory=list)
    queue: Deque[int] = field(default_factory=deque)
    frame_len: int = 0
    seen_contexts: Set[Tuple[int, ...]] = field(default_factory=set)
    frame_index: int = 0

    def __post_init__(self):
        if not self.counters:
            self.counters = [0] * self.H


class CabsScheduler:
    """Stateful per-sequence replay of the balanced scheduler."""

    def __init__(self, params: CabsParams, key: SecretKey):
        self.params = params
        self.key = key
        self.state = CabsState(params.H)

    def eligible(self, context: ContextLike) -> bool:
        return _ctx_tuple(context) not in self.state.seen_contexts

    def peek(self, context: ContextLike) -> Optional[int]:
        """Position the next token would receive, without mutating state."""
        ctx = _ctx_tuple(context)
        if ctx in self.state.seen_contexts:
            return None
        return self._choose(ctx)

    def _choose(self, ctx: Tuple[int, ...]) -> int:
        c = self.state.counters
        low = min(c)
        candidates = [i for i, v in enumerate(c) if v == low]
        r = tagged_uniform(self.key, TAG_CABS_CHOICE, ctx)
        return candidates[min(int(r * len(candidates)), len(candidates) - 1)]

    def assign(self, context: ContextLike, token: int) -> Optional[int]:
        ctx = _ctx_tuple(context)
        st = self.state
        if ctx in st.seen_contexts:
            return None
        st.seen_contexts.add(ctx)
        p = self.params
        F = frame_hash(self.key, tuple(st.queue))
        st.queue.append(int(token))
        while len(st.queue) > p.W:
            st.queue.popleft()
        pos = self._choose(ctx)
        st.counters[pos] += 1
        st.frame_len += 1
        cut = (st.frame_len >= p.min_len and F % (1 << p.f) == 0) or st.frame_len >= p.max_len
        if cut:
            st.counters = [0] * p.H
            st.queue.clear()
            st.frame_len = 0
            st.frame_index += 1
        return pos


def cabs_assign(
    state: CabsState, params: CabsParams, key: SecretKey, context: ContextLike, token: int
) -> Tuple[Optional[int], CabsState]:
    """Functional wrapper: updates ``state`` in place and returns it with the position."""
    sched = CabsScheduler(params, key)
    sched.state = state
    pos = sched.assign(context, token)
    return pos, sched.state


def naive_assign(key: SecretKey, context: ContextLike, H: int) -> int:
    if H < 1:
        raise ValueError("H must be >= 1")
    r = tagged_uniform(key, TAG_NAIVE_POSITION, _ctx_tuple(context))
    return min(int(r * H), H - 1)


class NaiveScheduler:
    """Stateless hash allocation with the same repeated-context eligibility rule."""

    def __init__(self, params: CabsParams, key: SecretKey):
        self.params = params
        self.key = key
        self.seen: Set[Tuple[int, ...]] = set()

    def eligible(self, context: ContextLike) -> bool:
        return _ctx_tuple(context) not in self.seen

    def peek(self, context: ContextLike) -> Optional[int]:
        ctx = _ctx_tuple(context)
        if ctx in self.seen:
            return None
        return naive_assign(self.key, ctx, self.params.H)

    def assign(self, context: ContextLike, token: int) -> Optional[int]:
        ctx = _ctx_tuple(context)
        if ctx in self.seen:
            return None
        self.seen.add(ctx)
        return naive_assign(self.key, ctx, self.params.H)


def make_scheduler(kind: str, params: CabsParams, key: SecretKey):
    if kind == "cabs":
        return CabsScheduler(params, key)
    if kind == "naive":
        return NaiveScheduler(params, key)
    raise ValueError(f"unknown scheduler {kind!r}")


def replay_positions(
    tokens: Sequence[int], params: CabsParams, key: SecretKey, scheduler: str = "cabs"
) -> List[Optional[int]]:
    """Position for every token (None for the first h tokens and ineligible ones)."""
    sched = make_scheduler(scheduler, params, key)
    out: List[Optional[int]] = [None] * min(params.h, len(tokens))
    for t in range(params.h, len(tokens)):
        out.append(sched.assign(tokens[t - params.h : t], tokens[t]))
    return out


def position_counts(positions: Sequence[Optional[int]], H: int) -> np.ndarray:
    counts = np.zeros(H, dtype=int)
    for p in positions:
        if p is not None:
            counts[p] += 1
    return counts


def gini(counts) -> float:
    x = np.asarray(counts, dtype=float)
    if x.size == 0 or np.any(x < 0):
        raise ValueError("counts must be a non-empty vector of non-negative values")
    mu = x.mean()
    if mu <= 0:
        raise ValueError("gini is undefined for all-zero counts")
    n = x.size
    return float(np.abs(x[:, None] - x[None, :]).sum() / (2.0 * n * n * mu))
