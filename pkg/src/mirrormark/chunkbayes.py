"""Chunk-level detection: marginal Bayes detector, GLRT, detect-then-decode.

A chunk's statistic ``z`` is its PRF value mirrored with reference symbol 0.
Under message ``M`` the value mirrored with ``M`` is Beta(alpha, 1), so ``z``
follows a wrapped Beta density shifted by ``2 * (pivot(0) - pivot(M))``.
Chunks may carry several tokens sharing one message; pass ``z`` with shape
``(K, n_tokens)`` for that case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
from scipy.special import logsumexp

from .codec import log_score
from .mirror import mirror, pivot


@dataclass(frozen=True)
class ChunkModel:
    K: int
    m: int
    alpha: float
    prior_w: float = 0.5
    msg_prior: Optional[tuple] = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if not 0 < self.prior_w < 1:
            raise ValueError("prior_w must lie in (0, 1)")
        if self.msg_prior is not None:
            pr = tuple(float(x) for x in self.msg_prior)
            if len(pr) != self.n_symbols or abs(sum(pr) - 1) > 1e-9 or min(pr) < 0:
                raise ValueError("msg_prior must be a distribution over 2**m symbols")
            object.__setattr__(self, "msg_prior", pr)

    @property
    def n_symbols(self) -> int:
        return 1 << self.m

    @property
    def log_msg_prior(self) -> np.ndarray:
        if self.msg_prior is None:
            return np.full(self.n_symbols, -self.m * math.log(2.0))
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.msg_prior))

    def shifts(self) -> np.ndarray:
        """Shift of the reference statistic under each hypothesised symbol."""
        return np.array([(2.0 * (pivot(self.m, 0) - pivot(self.m, M))) % 1.0 for M in range(self.n_symbols)])

    @property
    def threshold(self) -> float:
        return math.log((1 - self.prior_w) / self.prior_w)


def wrapped_beta_pdf(x, alpha: float, delta: float):
    x = np.asarray(x, dtype=float)
    y = np.where(x >= delta, x - delta, x - delta + 1.0)
    out = alpha * np.power(y, alpha - 1.0)
    return float(out) if out.ndim == 0 else out


def beta_pdf(x, alpha: float):
    return wrapped_beta_pdf(x, alpha, 0.0)


def score_pdf(s, alpha: float, delta: Optional[float] = None):
    """Density of S = -ln(1 - Z); ``delta=None`` is the correct-message case."""
    s = np.asarray(s, dtype=float)
    x = -np.expm1(-s)
    if delta is None:
        out = alpha * np.exp(-s) * np.power(x, alpha - 1.0)
    else:
        out = np.exp(-s) * wrapped_beta_pdf(x, alpha, delta)
    return float(out) if np.ndim(out) == 0 else out


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10, max_depth: int = 50) -> float:
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return rec(a, m, fa, flm, fm, left, tol / 2, depth - 1) + rec(m, b, fm, frm, fb, right, tol / 2, depth - 1)

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


def reference_statistic(u) -> np.ndarray:
    """Chunk statistic from raw PRF values: mirror with reference symbol 0."""
    return np.asarray(mirror(np.asarray(u, dtype=float), 0, 0))


def hypothesis_log_densities(z, model: ChunkModel) -> np.ndarray:
    """Per-chunk log f(z_k | M, w=1), summed over a chunk's tokens.

    ``z`` has shape ``(K,)``, ``(K, n_tokens)`` or ``(n_trials, K, n_tokens)``;
    the result puts the symbol axis first: ``(2**m, K)`` or ``(2**m, n_trials, K)``.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    out = np.empty((model.n_symbols,) + z.shape[:-1])
    for M, d in enumerate(model.shifts()):
        dens = wrapped_beta_pdf(z, model.alpha, d)
        with np.errstate(divide="ignore"):
            out[M] = np.log(dens).sum(axis=-1)
    return out


def _prior_column(model: ChunkModel, ndim: int) -> np.ndarray:
    return model.log_msg_prior.reshape((-1,) + (1,) * (ndim - 1))


def per_chunk_marginal_llr(z, model: ChunkModel) -> np.ndarray:
    # null density is 1, so the log-LR is the log of the message-averaged density
    logd = hypothesis_log_densities(z, model)
    return logsumexp(logd + _prior_column(model, logd.ndim), axis=0)


def marginal_detector(z, model: ChunkModel, threshold: Optional[float] = None):
    thr = model.threshold if threshold is None else threshold
    llr = float(per_chunk_marginal_llr(z, model).sum())
    return llr > thr, llr


def glrt_detector(z, model: ChunkModel, tau: float):
    stat = float(hypothesis_log_densities(z, model).max(axis=0).sum())
    return stat > tau, stat


def map_decode(z_k, model: ChunkModel) -> int:
    z_k = np.atleast_1d(np.asarray(z_k, dtype=float))
    lp = hypothesis_log_densities(z_k[None, :], model)[:, 0] + model.log_msg_prior
    return int(np.argmax(lp))


def detect_then_decode(z, model: ChunkModel, threshold: Optional[float] = None):
    """Detect through the joint posterior over (w, messages), then decode chunk-wise.

    The w=1 evidence is accumulated as log P(w=1) + sum_k logsumexp_M of the
    joint log-density, and compared with log P(w=0); decoding happens only
    after a positive decision.
    """
    thr = model.threshold if threshold is None else threshold
    joint = hypothesis_log_densities(z, model) + model.log_msg_prior[:, None]
    log_w1 = math.log(model.prior_w) + float(np.sum(logsumexp(joint, axis=0)))
    log_w0 = math.log(1 - model.prior_w)
    detected = (log_w1 - log_w0) > thr - model.threshold
    decoded = [int(M) for M in np.argmax(joint, axis=0)] if detected else None
    return detected, decoded


def detect_then_decode_batch(z, model: ChunkModel, threshold: Optional[float] = None):
    """Vectorised :func:`detect_then_decode` over trials; ``z`` is ``(n_trials, K, n_tokens)``.

    Returns the detection flags and the decoded symbols, with -1 rows for
    trials that were not detected.
    """
    thr = model.threshold if threshold is None else threshold
    logd = hypothesis_log_densities(z, model)
    joint = logd + _prior_column(model, logd.ndim)
    log_w1 = math.log(model.prior_w) + logsumexp(joint, axis=0).sum(axis=-1)
    log_w0 = math.log(1 - model.prior_w)
    detected = (log_w1 - log_w0) > thr - model.threshold
    decoded = np.where(detected[:, None], np.argmax(joint, axis=0), -1)
    return detected, decoded


def lambda_statistic(z_list) -> float:
    return log_score(z_list)


def fpr_bound(tau: float, T: int) -> float:
    if tau <= T:
        return 1.0
    r = tau / T
    return math.exp(-T * (r - 1.0 - math.log(r)))


def fnr_bound(tau: float, T: int, H_emp: float, c: float = 0.1) -> float:
    if c <= 0:
        raise ValueError("c must be positive")
    r = tau / T
    if r >= H_emp:
        return 1.0
    return math.exp(-c * T * (H_emp - r) ** 2)


def _bits(symbols: np.ndarray, m: int) -> np.ndarray:
    return (symbols[..., None] >> np.arange(m)) & 1


def sample_chunks(model: ChunkModel, n_trials: int, watermarked: bool, rng, n_tokens: int = 1):
    """Reference statistics (n_trials, K, n_tokens) plus true messages (None under the null)."""
    shape = (n_trials, model.K, n_tokens)
    if not watermarked:
        return rng.random(shape), None
    if model.msg_prior is None:
        msgs = rng.integers(0, model.n_symbols, size=(n_trials, model.K))
    else:
        msgs = rng.choice(model.n_symbols, size=(n_trials, model.K), p=model.msg_prior)
    Z = rng.beta(model.alpha, 1.0, size=shape)
    d = model.shifts()[msgs][..., None]
    z = np.mod(Z + d, 1.0)
    z = np.where(z >= 1.0, 0.0, z)
    return z, msgs


def simulate_chunks(model: ChunkModel, n_trials: int, seed, glrt_tau: Optional[float] = None, n_tokens: int = 1) -> Dict[str, np.ndarray]:
    """Per-trial statistics and decisions for all four methods under both hypotheses.

    Null trials also carry a reference message drawn from the message prior,
    so a payload decoded from unwatermarked text can be scored (about half
    its bits are wrong).
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    tau = model.threshold if glrt_tau is None else glrt_tau
    out: Dict[str, np.ndarray] = {}
    for label, wm in (("h0", False), ("h1", True)):
        z, msgs = sample_chunks(model, n_trials, wm, rng, n_tokens)
        if msgs is None:
            msgs = rng.choice(model.n_symbols, size=(n_trials, model.K), p=np.exp(model.log_msg_prior))
        logd = hypothesis_log_densities(z, model)
        joint = logd + _prior_column(model, logd.ndim)
        marg = logsumexp(joint, axis=0).sum(axis=-1)
        glrt = logd.max(axis=0).sum(axis=-1)
        decoded = np.argmax(joint, axis=0)
        dtd, _ = detect_then_decode_batch(z, model)
        out[f"{label}_marginal"] = marg
        out[f"{label}_marginal_decision"] = marg > model.threshold
        out[f"{label}_dtd_decision"] = dtd
        out[f"{label}_glrt"] = glrt
        out[f"{label}_glrt_decision"] = glrt > tau
        out[f"{label}_decoded"] = decoded
        out[f"{label}_messages"] = msgs
        if model.m > 0:
            err = (_bits(decoded, model.m) != _bits(msgs, model.m)).mean(axis=(1, 2))
        else:
            err = np.zeros(n_trials)
        out[f"{label}_bit_errors"] = err
    return out


def _emitted_ber(sim: Dict[str, np.ndarray], prior_w: float, emit0: np.ndarray, emit1: np.ndarray) -> float:
    """Bit error rate over the texts a method emits a payload for, mixing hypotheses by the prior."""
    e0, e1 = sim["h0_bit_errors"], sim["h1_bit_errors"]
    mass = (1 - prior_w) * emit0.mean() + prior_w * emit1.mean()
    if mass == 0:
        return float("nan")
    errs = (1 - prior_w) * (e0 * emit0).mean() + prior_w * (e1 * emit1).mean()
    return float(errs / mass)


def comparison_table(sim: Dict[str, np.ndarray], prior_w: float = 0.5) -> Dict[str, Dict[str, float]]:
    """FPR / FNR / BER per method from :func:`simulate_chunks` output.

    The marginal detector's BER is the MAP decoder on watermarked text (the
    baseline).  The other BER values are taken over every text the method
    emits a payload for: detected texts for detect-then-decode and GLRT, all
    texts for always-decode.
    """
    n0, n1 = sim["h0_bit_errors"].size, sim["h1_bit_errors"].size
    every0, every1 = np.ones(n0, dtype=bool), np.ones(n1, dtype=bool)
    return {
        "bayes_marginal": {
            "fpr": float(sim["h0_marginal_decision"].mean()),
            "fnr": float(1 - sim["h1_marginal_decision"].mean()),
            "ber": float(sim["h1_bit_errors"].mean()),
        },
        "detect_then_decode": {
            "fpr": float(sim["h0_dtd_decision"].mean()),
            "fnr": float(1 - sim["h1_dtd_decision"].mean()),
            "ber": _emitted_ber(sim, prior_w, sim["h0_dtd_decision"], sim["h1_dtd_decision"]),
        },
        "glrt": {
            "fpr": float(sim["h0_glrt_decision"].mean()),
            "fnr": float(1 - sim["h1_glrt_decision"].mean()),
            "ber": _emitted_ber(sim, prior_w, sim["h0_glrt_decision"], sim["h1_glrt_decision"]),
        },
        "always_decode": {"fpr": float("nan"), "fnr": float("nan"),
                          "ber": _emitted_ber(sim, prior_w, every0, every1)},
    }
