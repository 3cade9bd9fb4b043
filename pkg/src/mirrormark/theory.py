"""Special functions and closed-form equal error rates.

Gumbel-max: sequence score = mean of -ln(1 - mirrored u) over T tokens, null
Exp(1) per token, signal mean H_{1/p}; the EER solves FPR = FNR under a normal
approximation with a 2**m union bound on the null side.

Tournament (m = 1): per-token statistic max(S_0, S_1) = 1/2 + |S_0 - 1/2| with
folded-normal moments under both hypotheses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_ndtr

EULER_GAMMA = 0.57721566490153286061

# B_2, B_4, ..., B_16
_BERNOULLI = (
    1.0 / 6,
    -1.0 / 30,
    1.0 / 42,
    -1.0 / 30,
    5.0 / 66,
    -691.0 / 2730,
    7.0 / 6,
    -3617.0 / 510,
)
_ASYMPTOTIC_FROM = 12.0


def _check_positive(x: float) -> None:
    if not x > 0:
        raise ValueError("argument must be positive")


def digamma(x: float) -> float:
    _check_positive(x)
    acc = 0.0
    while x < _ASYMPTOTIC_FROM:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for k, b in enumerate(_BERNOULLI, start=1):
        series += b / (2 * k) * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x: float) -> float:
    _check_positive(x)
    acc = 0.0
    while x < _ASYMPTOTIC_FROM:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    power = inv2 * inv
    for b in _BERNOULLI:
        series += b * power
        power *= inv2
    return acc + inv + 0.5 * inv2 + series


def harmonic(x: float) -> float:
    """Generalised harmonic number psi(x + 1) - psi(1)."""
    _check_positive(x)
    return digamma(x + 1.0) + EULER_GAMMA


def gaussian_tail(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def log_gaussian_tail(z: float) -> float:
    return float(log_ndtr(-z))


def folded_normal_moments(mu: float, sigma: float):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    mean = sigma * math.sqrt(2.0 / math.pi) * math.exp(-mu * mu / (2 * sigma * sigma)) + mu * (
        1.0 - 2.0 * (1.0 - gaussian_tail(-mu / sigma))
    )
    var = mu * mu + sigma * sigma - mean * mean
    return mean, var


# --------------------------------------------------------------------------
# Gumbel-max


@dataclass(frozen=True)
class GumbelEER:
    eer: float
    z: float
    log_eer: float
    degenerate: bool = False


def gumbel_z_exact(T: float, H: float, m: int) -> float:
    x = math.exp(H)
    dmu = harmonic(x) - 1.0
    if dmu <= 0:
        return float("-inf")
    denom = 1.0 + math.sqrt(trigamma(1.0) - trigamma(1.0 + x))
    return dmu * math.sqrt(T) / denom - m * math.log(2.0) / (dmu * math.sqrt(T))


def eer_gumbel_exact(T: float, H: float, m: int) -> GumbelEER:
    """Normal-approximation EER with exact digamma/trigamma terms (1/p = e^H)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if H <= 0:
        raise ValueError("entropy must be positive")
    z = gumbel_z_exact(T, H, m)
    if not z > 0:
        return GumbelEER(0.5, z, math.log(0.5), degenerate=True)
    return GumbelEER(gaussian_tail(z), z, log_gaussian_tail(z))


def gumbel_constants():
    k = 1.0 + math.pi / math.sqrt(6.0)
    return 1.0 / (2.0 * k * k), math.log(2.0) / k


@dataclass(frozen=True)
class GumbelAsymptotic:
    log_eer: float
    z: float
    leading: float
    degenerate: bool = False


def gumbel_z_asymptotic(T: float, H: float, m: int) -> float:
    g = H + EULER_GAMMA - 1.0
    if g <= 0:
        return float("-inf")
    return g * math.sqrt(T) / (1.0 + math.pi / math.sqrt(6.0)) - m * math.log(2.0) / (g * math.sqrt(T))


def eer_gumbel_asymptotic(T: float, H: float, m: int) -> GumbelAsymptotic:
    """Large-vocabulary log-EER: -c1 T g^2 + c2 m - (m ln2)^2 / (2 T g^2) - ln(z sqrt(2 pi)), g = H + gamma - 1."""
    c1, c2 = gumbel_constants()
    g = H + EULER_GAMMA - 1.0
    z = gumbel_z_asymptotic(T, H, m)
    if not z > 0:
        return GumbelAsymptotic(math.log(0.5), z, float("nan"), degenerate=True)
    leading = -c1 * T * g * g + c2 * m
    log_eer = leading - (m * math.log(2.0)) ** 2 / (2.0 * T * g * g) - math.log(z * math.sqrt(2.0 * math.pi))
    return GumbelAsymptotic(log_eer, z, leading)


# --------------------------------------------------------------------------
# tournament


@dataclass(frozen=True)
class TournamentRegime:
    L: int
    collisions: tuple
    alpha: Optional[tuple] = None

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        c = tuple(float(x) for x in np.broadcast_to(np.asarray(self.collisions, dtype=float), (self.L,)))
        if any(not 0.0 <= x <= 1.0 for x in c):
            raise ValueError("collision probabilities must lie in [0, 1]")
        object.__setattr__(self, "collisions", c)
        a = (1.0,) * self.L if self.alpha is None else tuple(float(x) for x in self.alpha)
        if len(a) != self.L:
            raise ValueError("need one weight per layer")
        if abs(sum(a) / self.L - 1.0) > 1e-9:
            raise ValueError("layer weights must average to 1")
        object.__setattr__(self, "alpha", a)

    @property
    def A(self) -> float:
        return float(sum(a * a for a in self.alpha))

    @classmethod
    def constant(cls, L: int, c: float) -> "TournamentRegime":
        return cls(L, (c,) * L)


@dataclass(frozen=True)
class TournamentEER:
    eer: float
    zeta: float
    log_eer: float
    Gamma: float
    beta: float
    kappa: tuple = field(default=())
    degenerate: bool = False


def tournament_h0_moments(L: int, T: int, alpha: Optional[Sequence[float]] = None):
    """Normal-approximation mean and variance of C_max under the null."""
    a = np.ones(L) if alpha is None else np.asarray(alpha, dtype=float)
    A = float(np.sum(a * a))
    mean = 0.5 + math.sqrt(A / (6.0 * math.pi * L * L))
    var = A / (12.0 * L * L * T) * (1.0 - 2.0 / math.pi)
    return mean, var


def _m_of_z(z: float) -> float:
    return math.sqrt(2.0 / math.pi) * math.exp(-z * z / 2.0) / z + 2.0 * (1.0 - gaussian_tail(z)) - 1.0


def eer_tournament(T: float, regime: TournamentRegime) -> TournamentEER:
    L = regime.L
    a = np.asarray(regime.alpha)
    c = np.asarray(regime.collisions)
    C1 = float(np.sum(a * c) / L)
    C2 = float(np.sum(a * a * (2.0 + 2.0 * c - c * c) / 36.0) / L)
    mu_d = (1.0 - C1) / 6.0
    v_s = C2 / L
    A = regime.A
    k0 = math.sqrt(A / (6.0 * math.pi * L * L))
    k1 = math.sqrt(A * (1.0 - 2.0 / math.pi) / (12.0 * L * L))
    if mu_d <= 0 or v_s <= 0:
        return TournamentEER(0.5, 0.0, math.log(0.5), 0.0, float("nan"), (k0, k1), degenerate=True)
    z = mu_d / math.sqrt(v_s)
    mz = _m_of_z(z)
    k2 = mu_d * mz
    k3 = mu_d * math.sqrt(max(1.0 - mz * mz + 1.0 / (z * z), 0.0))
    Gamma = k2 / (k3 + k1)
    beta = k0 / (k3 + k1)
    zeta = Gamma - beta
    kappa = (k0, k1, k2, k3)
    if k2 <= k0:
        return TournamentEER(0.5, zeta, math.log(0.5), Gamma, beta, kappa, degenerate=True)
    arg = zeta * math.sqrt(T)
    log_tail = -T * zeta * zeta / 2.0 - 0.5 * math.log(2.0 * math.pi * T) - math.log(zeta)
    return TournamentEER(gaussian_tail(arg), zeta, log_tail, Gamma, beta, kappa)


def eer_from_zeta(zeta: float, T: float) -> float:
    return 0.5 if zeta <= 0 else gaussian_tail(zeta * math.sqrt(T))


def collision_profile(dists, L: int, seed) -> np.ndarray:
    """Per-layer collision probabilities averaged over fresh uniform layer values.

    Entry l is the expected collision probability of the distribution that
    layer l+1's matches draw from.
    """
    from .sampler import layer_collisions

    rng = np.random.default_rng(seed)
    acc = np.zeros(L)
    n = 0
    for p in dists:
        p = np.asarray(p, dtype=float)
        acc += layer_collisions(p, rng.random((L, p.size)))
        n += 1
    if n == 0:
        raise ValueError("need at least one distribution")
    return acc / n
