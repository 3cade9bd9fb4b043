"""Distortion-free token selection from (mirrored) pseudorandom values.

Tournament sampling is computed exactly: one layer of pairwise matches
between i.i.d. draws from ``q`` produces the winner distribution

    q'(x) = q(x) * (2 * Pr[u(Y) < u(x)] + Pr[u(Y) = u(x)]),   Y ~ q,

so ``L`` layers cost O(L * V log V) instead of materialising ``2**L``
candidates.  :func:`tournament_naive` runs the literal bracket and is kept as
the oracle for that recursion.
"""

from __future__ import annotations

from typing import List, Union

import numpy as np

from .lm import DistributionError

NAIVE_MAX_LAYERS = 10

SeedLike = Union[int, np.random.Generator, None]


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def collision_probability(dist) -> float:
    p = np.asarray(dist, dtype=float)
    return float(np.dot(p, p))


def gumbel_select(dist, u_values) -> int:
    """argmax_i u_i ** (1 / p_i) over the support, evaluated as ln(u_i) / p_i."""
    p = np.asarray(dist, dtype=float)
    u = np.asarray(u_values, dtype=float)
    if u.shape != p.shape:
        raise ValueError("u_values must have one entry per token")
    support = np.flatnonzero(p > 0)
    if support.size == 0:
        raise DistributionError("distribution has no positive entries")
    with np.errstate(divide="ignore", over="ignore"):
        scores = np.log(u[support]) / p[support]
    # np.argmax returns the first maximum, i.e. the lowest token id
    return int(support[int(np.argmax(scores))])


def tournament_layer_update(dist, u_values) -> np.ndarray:
    """Winner distribution of one match between two i.i.d. draws from ``dist``."""
    q = np.asarray(dist, dtype=float)
    u = np.asarray(u_values, dtype=float)
    if u.shape != q.shape:
        raise ValueError("u_values must have one entry per token")
    support = np.flatnonzero(q > 0)
    out = np.zeros_like(q)
    if support.size == 0:
        return out
    us = u[support]
    qs = q[support]
    order = np.argsort(us, kind="stable")
    u_sorted = us[order]
    q_sorted = qs[order]
    # group identical u values
    starts = np.flatnonzero(np.r_[True, u_sorted[1:] != u_sorted[:-1]])
    group_mass = np.add.reduceat(q_sorted, starts)
    below = np.concatenate(([0.0], np.cumsum(group_mass)[:-1]))
    group_id = np.repeat(np.arange(starts.size), np.diff(np.r_[starts, u_sorted.size]))
    factor = 2.0 * below[group_id] + group_mass[group_id]
    new_sorted = q_sorted * factor
    vals = np.empty_like(new_sorted)
    vals[order] = new_sorted
    out[support] = vals
    total = out.sum()
    return out / total


def tournament_distributions(dist, layers) -> List[np.ndarray]:
    """``[p_0, p_1, ..., p_L]`` where p_0 is the input and p_l follows layer l."""
    p = np.asarray(dist, dtype=float)
    out = [p]
    for row in np.asarray(layers, dtype=float):
        p = tournament_layer_update(p, row)
        out.append(p)
    return out


def layer_collisions(dist, layers) -> np.ndarray:
    """Collision probability of the distribution each layer's match draws from."""
    ps = tournament_distributions(dist, layers)
    return np.array([collision_probability(p) for p in ps[:-1]])


def _inverse_cdf(p: np.ndarray, r: float) -> int:
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, r * cdf[-1], side="right"))
    idx = min(idx, p.size - 1)
    # never land on a zero-probability token because of round-off
    while p[idx] <= 0:
        idx -= 1
    return idx


def sample_plain(dist, seed: SeedLike) -> int:
    p = np.asarray(dist, dtype=float)
    return _inverse_cdf(p, _rng(seed).random())


def tournament_sample(dist, layers, L: int, seed: SeedLike) -> int:
    if L < 1:
        raise ValueError("tournament needs at least one layer")
    u = np.asarray(layers, dtype=float)
    if u.shape[0] < L:
        raise ValueError(f"need {L} layers of randomness, got {u.shape[0]}")
    p_final = tournament_distributions(dist, u[:L])[-1]
    return _inverse_cdf(p_final, _rng(seed).random())


def tournament_naive_batch(dist, layers, L: int, n_sims: int, seed: SeedLike) -> np.ndarray:
    """Winners of ``n_sims`` independent literal brackets of ``2**L`` candidates."""
    if L > NAIVE_MAX_LAYERS:
        raise ValueError(f"naive tournament refuses L > {NAIVE_MAX_LAYERS}")
    if L < 1:
        raise ValueError("tournament needs at least one layer")
    rng = _rng(seed)
    p = np.asarray(dist, dtype=float)
    u = np.asarray(layers, dtype=float)
    cand = rng.choice(p.size, size=(n_sims, 1 << L), p=p / p.sum())
    # random pairing at the first layer; the bracket fixes later pairings
    cand = np.take_along_axis(cand, rng.permuted(np.tile(np.arange(1 << L), (n_sims, 1)), axis=1), axis=1)
    for layer in range(L):
        a, b = cand[:, 0::2], cand[:, 1::2]
        ua, ub = u[layer][a], u[layer][b]
        coin = rng.random(a.shape) < 0.5
        take_a = (ua > ub) | ((ua == ub) & coin)
        cand = np.where(take_a, a, b)
    return cand[:, 0]


def tournament_naive(dist, layers, L: int, rng_seed: SeedLike) -> int:
    return int(tournament_naive_batch(dist, layers, L, 1, rng_seed)[0])
