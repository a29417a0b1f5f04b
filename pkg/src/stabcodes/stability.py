"""Stability and efficiency analysis of stabilizing erasure codes.

Covers the variance bounds for independent and correlated descriptions,
sum-rate and efficiency expressions, the average-variance stability test
and the Markov jump linear system (MJLS) mean-square stability test.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .lti import ClosedLoopSystem, LoopMetrics, h2_norm_sq, sensitivity
from .mdc import SideDistortionProfile

__all__ = [
    "StabilizingCodeSpec",
    "ErasureDistribution",
    "MJLSModel",
    "AvgVarianceResult",
    "SpectralResult",
    "lemma1_variance_bound",
    "lemma5_variance_bound",
    "lemma2_sumrate_lb",
    "lemma3_efficiency",
    "lemma4_performance",
    "s_plus_one_norm",
    "efficiency_eta",
    "practical_efficiency",
    "avg_variance_test",
    "build_mjls",
    "mss_spectral_test",
    "spectral_radius_power",
    "critical_loss",
]

EMPTY_TERMS = ("conditional", "source", "omit")


@dataclass(frozen=True)
class StabilizingCodeSpec:
    k: int
    k_prime: int
    construction: str
    sigma2_profile: SideDistortionProfile
    rho: float = 0.0

    def __post_init__(self):
        if not 1 <= self.k_prime <= self.k:
            raise ValueError(f"need 1 <= k' <= k, got k={self.k}, k'={self.k_prime}")
        if self.construction not in ("independent", "md", "repetition"):
            raise ValueError(f"unknown construction {self.construction!r}")
        if self.construction == "independent" and self.rho != 0:
            raise ValueError("independent encodings have uncorrelated noise (rho = 0)")
        if self.k > 1 and not (-1.0 / (self.k - 1) < self.rho <= 0):
            raise ValueError(f"rho={self.rho} outside (-1/(k-1), 0]")
        if self.sigma2_profile.k != self.k:
            raise ValueError("distortion profile does not match k")


@dataclass(frozen=True)
class ErasureDistribution:
    """I.i.d. loss of each of ``k`` descriptions with probability ``p_loss``."""

    p_loss: float
    k: int

    def __post_init__(self):
        if not 0.0 <= self.p_loss <= 1.0:
            raise ValueError(f"p_loss must lie in [0, 1], got {self.p_loss}")
        if self.k < 1:
            raise ValueError("k must be at least 1")

    def probs(self) -> np.ndarray:
        """``p_s(l)``, probability of receiving exactly ``l`` descriptions, ``l = 0..k``."""
        return stats.binom.pmf(np.arange(self.k + 1), self.k, 1.0 - self.p_loss)


# ----------------------------------------------------------------- bounds


def _check_gamma(m: LoopMetrics):
    if not m.gamma > m.snorm:
        raise ValueError(
            f"system not stabilizable at this SNR (gamma={m.gamma:.6g} <= ||S-1||^2={m.snorm:.6g})"
        )


def lemma1_variance_bound(m: LoopMetrics, k_prime: int) -> float:
    """Largest common noise variance of ``k`` uncorrelated descriptions such
    that any ``k_prime`` of them keep the loop stable."""
    _check_gamma(m)
    return m.gamma * k_prime * m.ly_norm / (m.snorm * (m.gamma - m.snorm))


def lemma5_variance_bound(m: LoopMetrics, k_prime: int, rho: float) -> float:
    """As :func:`lemma1_variance_bound` with pairwise noise correlation ``rho``."""
    if k_prime > 1 and not (-1.0 / (k_prime - 1) < rho <= 0):
        raise ValueError(f"rho={rho} outside (-1/(k'-1), 0]")
    if k_prime == 1 and rho > 0:
        raise ValueError("rho must be nonpositive")
    return lemma1_variance_bound(m, k_prime) / (1.0 + (k_prime - 1) * rho)


def lemma2_sumrate_lb(k: int, k_prime: int, snorm: float) -> float:
    """Sum-rate lower bound for independent encodings, ``(k/2) log2(1 + snorm/k')``.

    Pass ``||S-1||^2`` for the bound as derived; :func:`s_plus_one_norm`
    gives the alternative ``||S+1||^2`` value for side-by-side reporting.
    """
    if snorm < 0:
        raise ValueError("snorm must be nonnegative")
    return 0.5 * k * math.log2(1.0 + snorm / k_prime)


def s_plus_one_norm(loop: ClosedLoopSystem) -> float:
    return h2_norm_sq(sensitivity(loop) + 1.0)


def lemma3_efficiency(k: int, k_prime: int, snorm: float) -> float:
    if snorm <= 0:
        raise ValueError("snorm must be positive")
    return math.log1p(k * snorm / k_prime) / (k * math.log1p(snorm / k_prime))


def lemma4_performance(m: LoopMetrics, k_prime: int, ell: int) -> float:
    """Output variance when ``ell >= k_prime`` descriptions at the largest
    admissible common variance are averaged."""
    if ell < k_prime:
        raise ValueError(f"ell={ell} below the stabilizing threshold k'={k_prime}")
    _check_gamma(m)
    g, s = m.gamma, m.snorm
    return m.perf_floor + k_prime * g * m.noise_gain * m.ly_norm / (ell * s * (g - s))


def efficiency_eta(gamma_single: float, gamma_all: float, k: int) -> float:
    if gamma_single <= 0 or gamma_all <= 0:
        raise ValueError("SNRs must be positive")
    eta = math.log1p(gamma_all) / (k * math.log1p(gamma_single))
    if eta > 1.0:
        warnings.warn(f"efficiency {eta:.6g} exceeds 1; inputs are inconsistent", RuntimeWarning,
                      stacklevel=2)
        return 1.0
    return eta


def practical_efficiency(sigma_v2: float, delta: float, measured_sumrate: float) -> float:
    """Rate of a single description of the central quantizer over the measured sum-rate."""
    if measured_sumrate <= 0:
        raise ValueError("measured sum-rate must be positive")
    num = 0.5 * math.log2(1.0 + 12.0 * sigma_v2 / delta**2) + 0.5 * math.log2(2 * math.pi / 6)
    return num / measured_sumrate


# ------------------------------------------------------- average variance


@dataclass(frozen=True)
class AvgVarianceResult:
    lhs: float
    rhs: float
    stable: bool
    critical_p: float

    @property
    def margin(self):
        return self.rhs - self.lhs


def _avg_lhs(profile: SideDistortionProfile, dist: ErasureDistribution, empty_term: str) -> float:
    s = profile.sigma2
    p = dist.probs()
    if empty_term == "source":
        return float(p @ s)
    if empty_term == "omit":
        return float(p[1:] @ s[1:])
    if dist.p_loss >= 1.0:
        return math.inf
    return float(p[1:] @ s[1:] / (1.0 - p[0]))


def avg_variance_test(spec: StabilizingCodeSpec, dist: ErasureDistribution, m: LoopMetrics,
                      sigma_v2: float | None = None, empty_term: str = "conditional",
                      tol: float = 1e-4) -> AvgVarianceResult:
    """Compare the loss-averaged noise variance with ``sigma_v2 / ||S-1||^2``.

    ``empty_term`` selects how instants with no description enter the
    average: ``"conditional"`` averages over the instants with at least one
    description, ``"source"`` counts them with variance ``sigma_v2`` and
    ``"omit"`` leaves them out of an unnormalized sum.
    """
    if empty_term not in EMPTY_TERMS:
        raise ValueError(f"empty_term must be one of {EMPTY_TERMS}")
    if dist.k != spec.k:
        raise ValueError("erasure distribution and code disagree on k")
    sigma_v2 = m.sigma_v2 if sigma_v2 is None else sigma_v2
    rhs = sigma_v2 / m.snorm if m.snorm > 0 else math.inf
    prof = spec.sigma2_profile
    if empty_term == "source":
        prof = SideDistortionProfile(np.r_[sigma_v2, prof.sigma2[1:]], prof.psi)
    lhs = _avg_lhs(prof, dist, empty_term)

    def stable_at(p):
        if p >= 1.0:
            return False
        return _avg_lhs(prof, ErasureDistribution(p, spec.k), empty_term) < rhs

    crit = critical_loss(stable_at, tol=tol)
    return AvgVarianceResult(lhs, rhs, bool(lhs < rhs) and dist.p_loss < 1.0, crit)


def critical_loss(stable_at, tol: float = 1e-4, grid: int = 201) -> float:
    """Smallest loss probability at which ``stable_at`` turns false.

    A coarse scan locates the first change, bisection refines it to ``tol``.
    Returns 1.0 if stable throughout and 0.0 if unstable at zero loss.
    """
    if not stable_at(0.0):
        return 0.0
    ps = np.linspace(0.0, 1.0, grid)
    lo = 0.0
    for p in ps[1:]:
        if not stable_at(float(p)):
            hi = float(p)
            break
        lo = float(p)
    else:
        return 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if stable_at(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ------------------------------------------------------------------- MJLS


@dataclass(frozen=True)
class MJLSModel:
    """Jump system ``x(i+1) = A[xi] x(i) + B[xi] [d(i); qbar(i)]``.

    ``probs`` is the i.i.d. mode distribution; ``transition[j, j']`` is the
    probability of mode ``j`` following mode ``j'`` for Markov jumps.
    ``noise_var`` holds the variances of ``[d; qbar]``.
    """

    A: tuple
    B: tuple
    probs: np.ndarray
    noise_var: np.ndarray = field(default_factory=lambda: np.zeros(0))
    transition: np.ndarray | None = None

    def __post_init__(self):
        n = self.A[0].shape[0]
        for i, a in enumerate(self.A):
            if a.shape != (n, n):
                raise ValueError(f"mode {i}: state matrix has shape {a.shape}, expected {(n, n)}")
        for i, b in enumerate(self.B):
            if b.shape[0] != n:
                raise ValueError(f"mode {i}: input matrix has {b.shape[0]} rows, expected {n}")
        if len(self.probs) != len(self.A):
            raise ValueError("one probability per mode required")
        if abs(float(np.sum(self.probs)) - 1.0) > 1e-9 or np.any(np.asarray(self.probs) < 0):
            raise ValueError("mode probabilities must be nonnegative and sum to 1")
        if self.transition is not None:
            T = np.asarray(self.transition)
            if T.shape != (len(self.A),) * 2 or not np.allclose(T.sum(axis=0), 1.0):
                raise ValueError("transition matrix must be square with columns summing to 1")

    @property
    def state_dim(self):
        return self.A[0].shape[0]

    @property
    def modes(self):
        return len(self.A)


def build_mjls(loop: ClosedLoopSystem, spec: StabilizingCodeSpec, dist: ErasureDistribution) -> MJLSModel:
    """Modes indexed by the number of received descriptions ``xi = 0..k``.

    With ``xi = 0`` the decoder outputs zero, which cuts the ``v`` path.
    The noise vector is ``qbar = [0, q_1, ..., q_k]`` and mode ``xi``
    selects entry ``xi``.
    """
    if dist.k != spec.k:
        raise ValueError("erasure distribution and code disagree on k")
    real = loop.realization()
    k = spec.k
    A, B = [], []
    for xi in range(k + 1):
        mflag = 0.0 if xi == 0 else 1.0
        sel = np.zeros(k + 1)
        sel[xi] = 1.0
        bd = real.Gd + mflag * real.Gw * real.gd
        bq = mflag * np.outer(real.Gw, sel) / loop.beta
        A.append(real.closed(mflag))
        B.append(np.column_stack([bd, bq]))
    noise = np.r_[1.0, 0.0, spec.sigma2_profile.sigma2[1:]]
    return MJLSModel(tuple(A), tuple(B), dist.probs(), noise)


@dataclass(frozen=True)
class SpectralResult:
    rho_A: float
    stable: bool


def _big_matrix(model: MJLSModel) -> np.ndarray:
    n2 = model.state_dim**2
    K = model.modes
    T = (np.tile(np.asarray(model.probs)[:, None], (1, K)) if model.transition is None
         else np.asarray(model.transition))
    big = np.zeros((K * n2, K * n2))
    for jp in range(K):
        kron = np.kron(model.A[jp], model.A[jp])
        for j in range(K):
            if T[j, jp]:
                big[j * n2:(j + 1) * n2, jp * n2:(jp + 1) * n2] = T[j, jp] * kron
    return big


def mss_spectral_test(model: MJLSModel) -> SpectralResult:
    """Mean-square stability through the spectral radius of the second-moment operator."""
    rho = float(np.max(np.abs(np.linalg.eigvals(_big_matrix(model)))))
    return SpectralResult(rho, rho < 1.0)


def spectral_radius_power(model: MJLSModel, iters: int = 5000, tol: float = 1e-12) -> float:
    """Power iteration on ``X -> sum_j p_j A_j X A_j^T`` (i.i.d. jumps).

    The map preserves the PSD cone, so the growth rate of ``trace(X)``
    from ``X = I`` converges to the spectral radius.
    """
    n = model.state_dim
    X = np.eye(n) / n
    est = 0.0
    for _ in range(iters):
        Y = sum(p * a @ X @ a.T for p, a in zip(model.probs, model.A))
        s = float(np.trace(Y))
        if s == 0.0:
            return 0.0
        X = Y / s
        if abs(s - est) < tol * max(1.0, s):
            return s
        est = s
    return est
