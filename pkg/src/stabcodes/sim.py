"""Seeded Monte Carlo simulation of the coded feedback loop over an erasure channel."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations

import numba
import numpy as np

from .lti import ClosedLoopSystem, loop_metrics
from .mdc import IndexAssignment, LatticeParams, sigma2_profile, solve_assignment
from .quantizer import (
    SymbolStats,
    build_prefix_code,
    dither_uniform,
    empirical_entropy,
    gaussian_pmf,
    measure_rate,
    round_half_away,
)
from .stability import ErasureDistribution

__all__ = [
    "SimulationConfig",
    "RunResult",
    "run",
    "sweep",
    "theory_sigma2",
    "theory_sigma_e2_db",
    "measure_distortion_table",
    "derive_seed",
    "tail_index",
    "simulate_mjls",
    "CONSTRUCTIONS",
    "EMPTY_POLICIES",
    "CODERS",
]

CONSTRUCTIONS = ("independent", "repetition", "md")
EMPTY_POLICIES = ("zero", "mean", "hold")
CODERS = ("entropy_measure", "huffman_stream", "gaussian_designed")
DIVERGENCE_LIMIT = 1e150
TAIL_FRACTION = 0.002
WARMUP = 1000


@dataclass(frozen=True)
class SimulationConfig:
    """One simulation run.

    ``delta`` is the central step in quantizer-input units; ``r`` is the
    nesting ratio (MD only).  ``receive_pattern`` fixes the set of received
    descriptions at every instant and overrides the random channel.
    """

    loop: ClosedLoopSystem
    construction: str
    k: int
    delta: float
    channel: ErasureDistribution
    horizon: int = 1_000_000
    seed: int = 0
    r: int = 1
    decoder_on_empty: str = "zero"
    empty_mean: float = 0.0
    coder: str = "huffman_stream"
    receive_pattern: tuple | None = None
    warmup: int = WARMUP

    def __post_init__(self):
        if self.construction not in CONSTRUCTIONS:
            raise ValueError(f"construction must be one of {CONSTRUCTIONS}")
        if self.decoder_on_empty not in EMPTY_POLICIES:
            raise ValueError(f"decoder_on_empty must be one of {EMPTY_POLICIES}")
        if self.coder not in CODERS:
            raise ValueError(f"coder must be one of {CODERS}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.k < 1 or self.channel.k != self.k:
            raise ValueError("channel and code disagree on k")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.construction == "md" and self.k > 1:
            LatticeParams(self.delta, self.r, self.k)
        if self.receive_pattern is not None and len(self.receive_pattern) != self.k:
            raise ValueError("receive_pattern needs one flag per description")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class RunResult:
    sigma_e2_db: float
    sigma_v2: float
    sumrate: float
    per_description_rate: list
    empirical_entropy: list
    loss_realization_stats: tuple
    diverged: bool
    steps: int
    variance_growth: float = field(default=float("nan"))
    tail_index: float = field(default=float("nan"))

    @property
    def sigma_e2(self):
        return 10 ** (self.sigma_e2_db / 10)


def derive_seed(seed: int, index: int) -> int:
    return int(seed) ^ int(index)


# ------------------------------------------------------------------ kernel

_IND, _REP, _MD = 0, 1, 2
_ZERO, _MEAN, _HOLD = 0, 1, 2


@numba.njit(cache=True)
def _round_half_away(x):
    return math.copysign(math.floor(abs(x) + 0.5), x)


@numba.njit(cache=True)
def _kernel(Phi, Gd, Gw, Gv, gd, He, hd, hw, beta, d, recv, dith, mode, delta, k,
            table, inv, inv_R, r, empty_policy, empty_mean, sym_out, e_out, v_out):
    N = Phi.shape[0]
    xa = np.zeros(N)
    nxt = np.zeros(N)
    per = r * r
    h = (per - 1) // 2
    width = 2 * inv_R + 1
    tup = np.zeros(k, dtype=np.int64)
    w_prev = 0.0
    H = d.shape[0]
    for t in range(H):
        v = gd * d[t]
        for i in range(N):
            v += Gv[i] * xa[i]
        vq = beta * v
        nrec = 0
        acc = 0.0
        if mode == _IND:
            for j in range(k):
                s = _round_half_away((vq + dith[t, j]) / delta)
                sym_out[t, j] = np.int64(s)
                if recv[t, j]:
                    acc += s * delta - dith[t, j]
                    nrec += 1
            wq = acc / nrec if nrec > 0 else 0.0
        elif mode == _REP:
            s = _round_half_away((vq + dith[t, 0]) / delta)
            for j in range(k):
                sym_out[t, j] = np.int64(s)
                if recv[t, j]:
                    nrec += 1
            wq = s * delta - dith[t, 0] if nrec > 0 else 0.0
        else:
            b = np.int64(_round_half_away(vq / delta))
            m = (b + h) // per
            base = b - m * per
            for j in range(k):
                tup[j] = table[base + h, j] + m * per
                sym_out[t, j] = tup[j] // r
                if recv[t, j]:
                    acc += tup[j]
                    nrec += 1
            if nrec == k:
                # inverse map: shift class from the first coordinate, then table lookup
                m2 = (tup[0] + h) // per
                key = 0
                mult = 1
                for j in range(k):
                    key += ((tup[j] - m2 * per) // r + inv_R) * mult
                    mult *= width
                wq = (inv[key] + m2 * per) * delta
            elif nrec > 0:
                wq = acc / nrec * delta
            else:
                wq = 0.0
        if nrec == 0:
            if empty_policy == _MEAN:
                wq = empty_mean
            elif empty_policy == _HOLD:
                wq = w_prev
        w_prev = wq
        w = wq / beta
        e = hd * d[t] + hw * w
        for i in range(N):
            e += He[i] * xa[i]
        e_out[t] = e
        v_out[t] = vq
        for i in range(N):
            acc2 = Gd[i] * d[t] + Gw[i] * w
            for c in range(N):
                acc2 += Phi[i, c] * xa[c]
            nxt[i] = acc2
            if not abs(acc2) < DIVERGENCE_LIMIT:
                return t + 1
        for i in range(N):
            xa[i] = nxt[i]
    return H


def _inverse_table(assign: IndexAssignment):
    """Dense inverse of the base table indexed by side-lattice coordinates."""
    side = assign.table // assign.r
    R = int(np.abs(side).max())
    width = 2 * R + 1
    inv = np.full(width ** assign.k, np.iinfo(np.int64).min, dtype=np.int64)
    keys = ((side + R) * width ** np.arange(assign.k)).sum(axis=1)
    inv[keys] = assign.V
    return inv, R


# ------------------------------------------------------------------- runs


def _streams(cfg: SimulationConfig):
    ss = np.random.SeedSequence(cfg.seed)
    s_dist, s_chan, s_dith = ss.spawn(3)
    d = np.random.default_rng(s_dist).standard_normal(cfg.horizon)
    if cfg.receive_pattern is not None:
        recv = np.tile(np.asarray(cfg.receive_pattern, dtype=bool), (cfg.horizon, 1))
    else:
        recv = np.random.default_rng(s_chan).random((cfg.horizon, cfg.k)) >= cfg.channel.p_loss
    dither_seed = int(s_dith.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
    if cfg.construction == "md":
        dith = np.zeros((1, 1))
    else:
        t = np.arange(cfg.horizon)[:, None]
        dith = cfg.delta * (0.5 - dither_uniform(dither_seed, t, np.arange(cfg.k)))
    return d, recv, dith


def _rates(cfg, sym, v):
    ents, rates = [], []
    for j in range(cfg.k):
        stream = sym[:, j]
        st = SymbolStats.from_stream(stream)
        h = empirical_entropy(st)
        ents.append(h)
        if cfg.coder == "entropy_measure":
            rates.append(h)
        elif cfg.coder == "huffman_stream":
            rates.append(measure_rate(build_prefix_code(st.pmf()), stream))
        else:
            step = cfg.delta * (cfg.r if cfg.construction == "md" else 1)
            var = float(np.var(v)) + (cfg.delta**2 / 12 if cfg.construction != "md" else 0.0)
            pmf, esc = gaussian_pmf(step, var)
            rates.append(measure_rate(build_prefix_code(pmf, esc), stream))
    return rates, ents


def run(cfg: SimulationConfig) -> RunResult:
    """Simulate ``cfg.horizon`` steps; deterministic given ``cfg.seed``.

    Statistics skip the first ``cfg.warmup`` samples.  A run counts as
    diverged when the state overflows or when the tail index of the output
    falls below 2 (unbounded second moment).  Entropy coders are
    fitted to the symbol streams of the run and then applied to the same
    streams, which equals a second pass with the same seed because coding
    does not feed back into the loop.
    """
    loop = cfg.loop
    real = loop.realization()
    d, recv, dith = _streams(cfg)
    if cfg.construction == "md" and cfg.k > 1:
        assign = solve_assignment(LatticeParams(cfg.delta, cfg.r, cfg.k))
        table, r = assign.table, assign.r
        inv, R = _inverse_table(assign)
    else:
        table = np.zeros((1, cfg.k), dtype=np.int64)
        inv, R, r = np.zeros(1, dtype=np.int64), 0, 1
    mode = {"independent": _IND, "repetition": _REP, "md": _MD}[cfg.construction]
    if cfg.construction == "md" and cfg.k == 1:
        mode, dith = _IND, np.zeros((cfg.horizon, 1))
    H = cfg.horizon
    sym = np.zeros((H, cfg.k), dtype=np.int64)
    e = np.zeros(H)
    v = np.zeros(H)
    steps = _kernel(real.Phi, real.Gd, real.Gw, real.Gv, float(real.gd), real.He, float(real.hd),
                    float(real.hw), float(loop.beta), d, recv, dith, mode, float(cfg.delta), cfg.k,
                    table, inv, R, r, EMPTY_POLICIES.index(cfg.decoder_on_empty),
                    float(cfg.empty_mean), sym, e, v)
    overflow = steps < H
    hist = tuple(int(c) for c in np.bincount(recv.sum(axis=1), minlength=cfg.k + 1))
    lo = min(cfg.warmup, max(steps - 1, 0))
    es, vs, ss_ = e[lo:steps], v[lo:steps], sym[lo:steps]
    growth = _variance_growth(e[:steps])
    if overflow or not np.all(np.isfinite(es)):
        return RunResult(math.inf, math.inf, math.nan, [math.nan] * cfg.k, [math.nan] * cfg.k,
                         hist, True, steps, growth, 0.0)
    alpha = tail_index(es)
    rates, ents = _rates(cfg, ss_, vs)
    s2 = float(np.mean(es**2))
    return RunResult(10 * math.log10(s2), float(np.var(vs)), float(sum(rates)), rates, ents, hist,
                     bool(alpha < 2.0), steps, growth, alpha)


def tail_index(x, fraction: float = TAIL_FRACTION) -> float:
    """Hill estimate of the tail index of ``|x|`` from its largest order statistics.

    An index below 2 means the second moment does not exist, so the
    sample variance keeps growing with the horizon even when no sample
    overflows.
    """
    a = np.abs(np.asarray(x, dtype=float))
    m = max(int(fraction * a.size), 10)
    if a.size <= m:
        return math.nan
    top = np.partition(a, a.size - m - 1)[a.size - m - 1:]
    top.sort()
    ref = top[0]
    if ref <= 0:
        return math.inf
    return float(1.0 / np.mean(np.log(top[1:] / ref)))


def _variance_growth(x, windows=10):
    """Ratio of the last to the first windowed mean square."""
    n = x.size // windows
    if n < 1:
        return math.nan
    first = float(np.mean(x[:n] ** 2))
    last = float(np.mean(x[(windows - 1) * n:windows * n] ** 2))
    return last / first if first > 0 else math.inf


# ----------------------------------------------------------------- theory


def theory_sigma2(cfg: SimulationConfig) -> np.ndarray:
    """Noise variance (quantizer units) with ``l`` received descriptions, ``l = 0..k``.

    Entry 0 is NaN: an instant with nothing received is not additive noise.
    """
    k, d2 = cfg.k, cfg.delta**2 / 12
    ell = np.arange(k + 1, dtype=float)
    if cfg.construction == "independent":
        s = np.divide(d2, ell, out=np.full(k + 1, np.nan), where=ell > 0)
    elif cfg.construction == "repetition":
        s = np.where(ell > 0, d2, np.nan)
    else:
        s = sigma2_profile(LatticeParams(cfg.delta, cfg.r, k), np.nan).sigma2.copy()
        s[0] = np.nan
    return s


def theory_sigma_e2_db(cfg: SimulationConfig) -> float:
    """Output variance from the loop formula with the loss-averaged noise
    variance over instants with at least one description."""
    p = cfg.channel.probs()
    if p[0] >= 1.0:
        return math.inf
    s = theory_sigma2(cfg)
    sq2 = float(p[1:] @ s[1:] / (1 - p[0]))
    m = loop_metrics(cfg.loop)
    return 10 * math.log10(m.sigma_e2_at(sq2))


def sweep(base: SimulationConfig, p_grid, seed: int | None = None) -> list[dict]:
    """One row per loss probability with simulated and theoretical columns.

    Point ``i`` uses seed ``seed ^ i``.  ``seed`` defaults to ``base.seed``.
    """
    seed = base.seed if seed is None else seed
    rows = []
    for i, p in enumerate(p_grid):
        cfg = base.with_(channel=ErasureDistribution(float(p), base.k), seed=derive_seed(seed, i))
        res = run(cfg)
        row = {
            "p_loss": float(p),
            "sigma_e2_db": res.sigma_e2_db,
            "sumrate": res.sumrate,
            "diverged": res.diverged,
            "theory_sigma_e2_db": theory_sigma_e2_db(cfg),
        }
        for j, rt in enumerate(res.per_description_rate):
            row[f"rate_{j + 1}"] = rt
        rows.append(row)
    return rows


# -------------------------------------------------------------- distortion


def measure_distortion_table(r: int, k: int, deltas, samples: int = 1_000_000, seed: int = 0,
                             spread: float | None = None) -> list[dict]:
    """Side distortions ``D_l`` by Monte Carlo against the approximation ``sigma^2(l)``.

    Inputs are uniform over a span of many assignment periods, so every
    phase of the table is visited equally.  ``D_l`` averages all subsets of
    ``l`` descriptions.  Values are in dB.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for delta in deltas:
        params = LatticeParams(float(delta), r, k)
        assign = solve_assignment(params)
        span = (spread if spread is not None else 50.0) * params.period * params.delta
        v = rng.uniform(-span, span, samples)
        b = round_half_away(v / params.delta)
        tup = assign.lookup(b).astype(float) * params.delta
        theory = sigma2_profile(params, 1.0).sigma2
        row = {"delta": float(delta)}
        for ell in range(1, k + 1):
            if ell == k:
                rec = assign.invert(assign.lookup(b)) * params.delta
                D = float(np.mean((v - rec) ** 2))
            else:
                D = float(np.mean([np.mean((v - tup[:, list(c)].mean(axis=1)) ** 2)
                                   for c in combinations(range(k), ell)]))
            row[f"D{ell}_db"] = 10 * math.log10(D)
            row[f"sigma2_{ell}_db"] = 10 * math.log10(theory[ell])
        rows.append(row)
    return rows


# ------------------------------------------------------------- jump systems


@numba.njit(cache=True)
def _mjls_kernel(A, B, modes, noise, window, out):
    n = A.shape[1]
    x = np.zeros(n)
    y = np.zeros(n)
    H = modes.shape[0]
    nw = out.shape[0]
    for t in range(H):
        m = modes[t]
        for i in range(n):
            acc = 0.0
            for c in range(n):
                acc += A[m, i, c] * x[c]
            for c in range(B.shape[2]):
                acc += B[m, i, c] * noise[t, c]
            y[i] = acc
        sq = 0.0
        for i in range(n):
            x[i] = y[i]
            sq += y[i] * y[i]
        if not sq < DIVERGENCE_LIMIT:
            return t + 1
        w = t // window
        if w < nw:
            out[w] += sq / window
    return H


def simulate_mjls(model, horizon: int, seed: int = 0, windows: int = 10):
    """Windowed mean of ``|x|^2`` for the jump system driven by unit white noise.

    Modes are drawn i.i.d. from ``model.probs``.  Returns ``(window_means,
    steps)``; ``steps < horizon`` signals overflow.
    """
    rng = np.random.default_rng(seed)
    modes = rng.choice(model.modes, size=horizon, p=np.asarray(model.probs))
    A = np.stack(model.A)
    B = np.stack(model.B)
    noise = rng.standard_normal((horizon, B.shape[2]))
    out = np.zeros(windows)
    steps = _mjls_kernel(A, B, modes.astype(np.int64), noise, max(horizon // windows, 1), out)
    return out, steps
