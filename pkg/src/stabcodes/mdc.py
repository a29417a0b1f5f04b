"""Multiple-description scalar quantization by nested lattices and index assignment.

All lattice points are handled as integers in units of the central step
``delta`` ("normalized" units): the central lattice is ``Z``, the side
lattice is ``r Z`` and the assignment repeats with period ``r**2``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .quantizer import round_half_away

__all__ = [
    "PSI",
    "LatticeParams",
    "IndexAssignment",
    "SideDistortionProfile",
    "AssignmentError",
    "build_V",
    "enumerate_tuples",
    "solve_assignment",
    "md_encode",
    "md_decode",
    "sigma2_profile",
    "sumrate_approx",
    "correlated_sumrate_lb",
]

# Expansion factors of the scalar index assignment.
PSI = {2: 1.0, 3: 1.1547}

_MAX_GROWTH = 8


class AssignmentError(RuntimeError):
    pass


@dataclass(frozen=True)
class LatticeParams:
    delta: float
    r: int
    k: int

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.r < 1 or self.r % 2 == 0:
            raise ValueError(f"nesting ratio must be an odd positive integer, got {self.r}")
        if self.k < 1:
            raise ValueError("k must be at least 1")

    @property
    def delta_s(self):
        return self.r * self.delta

    @property
    def period(self):
        """Shift period ``r**2`` of the assignment (normalized)."""
        return self.r * self.r


def build_V(r: int) -> np.ndarray:
    """Central points (normalized) closer to the origin than to any other point of ``r**2 Z``."""
    if r < 1 or r % 2 == 0:
        raise ValueError(f"nesting ratio must be an odd positive integer, got {r}")
    h = (r * r - 1) // 2
    return np.arange(-h, h + 1)


def enumerate_tuples(a1: int, r: int, k: int, bound: float) -> list[tuple]:
    """All ordered ``k``-tuples on ``r Z`` starting with ``a1`` whose
    pairwise distances are at most ``bound`` (normalized units)."""
    if a1 % r:
        raise ValueError(f"{a1} is not a side-lattice point for r={r}")
    reach = int(math.floor(bound / r + 1e-12))
    others = [a1 + r * i for i in range(-reach, reach + 1)]
    out = []
    for rest in itertools.product(others, repeat=k - 1):
        tup = (a1,) + rest
        if max(tup) - min(tup) <= bound + 1e-12:
            out.append(tup)
    return out


def _preference(t):
    return (tuple(sorted(abs(a) for a in t)), t)


@dataclass(frozen=True)
class IndexAssignment:
    """Index assignment on the ``r**2`` points of ``V``.

    ``table[i]`` is the tuple assigned to the central point ``V[i]``
    (normalized units).  ``cost`` is ``sum |b - mean(tuple)|``.
    """

    params: LatticeParams
    V: np.ndarray
    table: np.ndarray
    cost: float
    bound: float
    inverse: dict = field(repr=False)

    @property
    def k(self):
        return self.params.k

    @property
    def r(self):
        return self.params.r

    def lookup(self, b):
        """Tuples for central indices ``b`` using the shift rule (vectorized)."""
        b = np.asarray(b, dtype=np.int64)
        per = self.params.period
        h = (per - 1) // 2
        m = np.floor_divide(b + h, per)
        base = b - m * per
        return self.table[base + h] + (m * per)[..., None]

    def invert(self, tuples):
        """Central index for complete tuples (vectorized); raises on unassigned tuples."""
        a = np.asarray(tuples, dtype=np.int64)
        per = self.params.period
        h = (per - 1) // 2
        m = np.floor_divide(a[..., 0] + h, per)
        base = a - (m * per)[..., None]
        flat = base.reshape(-1, self.k)
        out = np.empty(flat.shape[0], dtype=np.int64)
        for i, row in enumerate(map(tuple, flat.tolist())):
            try:
                out[i] = self.inverse[row]
            except KeyError:
                raise AssignmentError(f"unassigned tuple {row}") from None
        return out.reshape(a.shape[:-1]) + m * per

    def rows(self):
        """Table rows ``(b, a_1, ..., a_k)`` ordered by ``b``."""
        return [(int(b), *map(int, t)) for b, t in zip(self.V, self.table)]


def _cost_matrix(V, pool, k):
    sums = np.array([sum(t) for t in pool], dtype=np.int64)
    return np.abs(k * V[:, None] - sums[None, :])


def solve_assignment(params: LatticeParams, bound: float | None = None) -> IndexAssignment:
    """Exact minimum-cost assignment of tuples to the points of ``V``.

    The tuple pool is the union of ``S(a1)`` for side points ``a1`` in
    ``V``, using the smallest pairwise bound (a multiple of ``r``) that
    gives every ``S(a1)`` at least ``r`` tuples.  Among optimal matchings,
    the central points are settled in order of increasing ``|b|``
    (negative first) and each takes the most
    preferred tuple still compatible with global optimality; preference
    is by sorted absolute values, then signed values.
    """
    r, k = params.r, params.k
    V = build_V(r)
    if k == 1:
        table = V[:, None].copy()
        return IndexAssignment(params, V, table, 0.0, 0.0, {(int(b),): int(b) for b in V})
    side = V[V % r == 0]
    # Smallest bound on the side lattice with |S(a1)| >= r and a pool of r**2 tuples.
    bound = float(r) if bound is None else float(bound)
    for _ in range(_MAX_GROWTH + 1):
        sets = [enumerate_tuples(int(a1), r, k, bound) for a1 in side]
        pool = [t for s_ in sets for t in s_]
        if len(pool) >= V.size and min(map(len, sets)) >= r:
            break
        bound += r
    else:
        raise AssignmentError(f"tuple pool still too small after {_MAX_GROWTH} enlargements")

    pool.sort(key=_preference)
    C = _cost_matrix(V, pool, k)
    rows, cols = linear_sum_assignment(C)
    best = int(C[rows, cols].sum())

    # Settle rows one at a time; ranks break ties without touching the primary cost.
    big = len(pool) + 1
    order = sorted(range(V.size), key=lambda i: (abs(int(V[i])), int(V[i])))
    free_rows = list(range(V.size))
    free_cols = np.ones(len(pool), dtype=bool)
    choice = {}
    fixed_cost = 0
    for i in order:
        rr = np.array(free_rows)
        cc = np.flatnonzero(free_cols)
        sub = C[np.ix_(rr, cc)] * big
        pos = free_rows.index(i)
        sub[pos] += np.arange(cc.size)
        sr, sc = linear_sum_assignment(sub)
        j = int(cc[sc[list(sr).index(pos)]])
        choice[i] = j
        fixed_cost += int(C[i, j])
        free_rows.remove(i)
        free_cols[j] = False
    if fixed_cost != best:
        raise AssignmentError("tie-breaking lost optimality")  # pragma: no cover

    table = np.array([pool[choice[i]] for i in range(V.size)], dtype=np.int64)
    inverse = {tuple(map(int, t)): int(b) for b, t in zip(V, table)}
    if len(inverse) != V.size:
        raise AssignmentError("assigned tuples are not distinct")  # pragma: no cover
    return IndexAssignment(params, V, table, best / k, bound, inverse)


def md_encode(assign: IndexAssignment, v):
    """Side indices (normalized, on ``r Z``) for input ``v``; trailing axis has length ``k``."""
    b = round_half_away(np.asarray(v, dtype=float) / assign.params.delta)
    return assign.lookup(b)


def md_decode(assign: IndexAssignment, received, empty_value: float = 0.0) -> float:
    """Reconstruction from a mapping ``{description index: side index}``.

    All ``k`` received: inverse map to the central point.  Some received:
    mean of the received side points.  None: ``empty_value``.
    """
    if not received:
        return float(empty_value)
    delta = assign.params.delta
    if len(received) == assign.k:
        tup = [received[j] for j in range(assign.k)]
        return float(assign.invert(tup)) * delta
    return float(np.mean(list(received.values()))) * delta


@dataclass(frozen=True)
class SideDistortionProfile:
    """``sigma2[l]`` is the reconstruction noise variance with ``l`` descriptions.

    ``sigma2[0]`` is the variance of the source itself (reconstruction 0).
    """

    sigma2: np.ndarray
    psi: float

    @property
    def k(self):
        return len(self.sigma2) - 1

    def db(self):
        return 10 * np.log10(self.sigma2)


def sigma2_profile(params: LatticeParams, sigma_v2: float, psi: float | None = None) -> SideDistortionProfile:
    """Approximate noise variance when averaging ``l`` of the ``k`` descriptions."""
    k, r, d = params.k, params.r, params.delta
    if psi is None:
        if k == 1:
            psi = 1.0
        elif k in PSI:
            psi = PSI[k]
        else:
            raise ValueError(f"psi({k}) is not tabulated; supply it explicitly")
    central = d * d / 12.0
    s = np.empty(k + 1)
    s[0] = sigma_v2
    for ell in range(1, k + 1):
        extra = 0.0 if ell == k else (k - ell) / (2 * k * ell) * central * r ** (2 * k / (k - 1)) * psi**2
        s[ell] = central + extra
    return SideDistortionProfile(s, float(psi))


def sumrate_approx(params: LatticeParams, sigma_v2: float) -> float:
    """Sum-rate of all ``k`` descriptions for a Gaussian input of variance ``sigma_v2``."""
    if sigma_v2 <= 0:
        raise ValueError("sigma_v2 must be positive")
    k, ds = params.k, params.delta_s
    if ds * ds >= 2 * math.pi * math.e * sigma_v2:
        warnings.warn("side step too coarse for this input variance; the approximation is not valid",
                      RuntimeWarning, stacklevel=2)
    return 0.5 * k * math.log2(2 * math.pi * math.e * sigma_v2) - k * math.log2(ds)


def correlated_sumrate_lb(k: int, k_prime: int, rho: float, sigma2: float) -> float:
    """Sum-rate lower bound for ``k`` descriptions with pairwise noise
    correlation ``rho`` and variance ``sigma2`` (unit-variance Gaussian source)."""
    if not (-1.0 / (k - 1) < rho <= 0 if k > 1 else rho == 0):
        raise ValueError(f"rho={rho} outside (-1/(k-1), 0]")
    a = (k_prime + sigma2 * (1 + (k_prime - 1) * rho)) / (sigma2 * (1 - rho))
    b = (1 - rho) / (1 + (k - 1) * rho)
    return k / (2 * k_prime) * math.log2(a) + 0.5 * math.log2(b)
