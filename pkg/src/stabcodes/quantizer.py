"""Subtractively dithered uniform quantization and scalar entropy coding."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

__all__ = [
    "ESCAPE",
    "DitheredQuantizer",
    "SymbolStats",
    "PrefixCode",
    "round_half_away",
    "dither_uniform",
    "independent_encode",
    "empirical_entropy",
    "build_prefix_code",
    "gaussian_pmf",
    "measure_rate",
]

ESCAPE = "ESC"
ESCAPE_PAYLOAD_BITS = 64

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x):
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def dither_uniform(seed, t, j=0):
    """Counter-based uniforms in ``[0, 1)`` keyed by ``(seed, t, j)``.

    Any entry can be regenerated independently of the others, so a decoder
    only recomputes the dither of the descriptions it actually received.
    """
    t = np.asarray(t, dtype=np.int64).astype(np.uint64)
    j = np.asarray(j, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        key = _splitmix64(_splitmix64(np.asarray(seed, dtype=np.int64).astype(np.uint64)) ^ j)
        h = _splitmix64(key ^ (t * _GOLDEN))
    u = (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return u if u.ndim else float(u)


def round_half_away(x):
    """Nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=float)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


@dataclass(frozen=True)
class DitheredQuantizer:
    """Uniform quantizer on ``delta * Z`` with subtractive dither.

    The dither for time ``t`` and description ``j`` is uniform on
    ``(-delta/2, delta/2]`` and a pure function of ``(dither_seed, t, j)``.
    """

    delta: float
    dither_seed: int = 0
    rounding: str = "half_away"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"step size must be positive, got {self.delta}")
        if self.rounding != "half_away":
            raise ValueError(f"unsupported rounding rule {self.rounding!r}")

    def dither(self, t, j=0):
        return self.delta * (0.5 - dither_uniform(self.dither_seed, t, j))

    def quantize(self, v, t=0, j=0, dither=None):
        """Grid index ``round((v + z) / delta)``; the symbol is ``index * delta``."""
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("cannot quantize a non-finite value")
        z = self.dither(t, j) if dither is None else dither
        return round_half_away((v + z) / self.delta)

    def reconstruct(self, index, t=0, j=0, dither=None):
        """``w = v_c - z`` using the regenerated dither."""
        z = self.dither(t, j) if dither is None else dither
        return np.asarray(index) * self.delta - z


def independent_encode(q: DitheredQuantizer, v, k: int, t=0):
    """``k`` dithered encodings of ``v`` using description indices ``0..k-1``.

    Returns an integer array with a trailing axis of length ``k``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    v = np.asarray(v, dtype=float)[..., None]
    t = np.asarray(t)[..., None]
    return q.quantize(v, t, np.arange(k))


@dataclass(frozen=True)
class SymbolStats:
    counts: dict
    total: int

    @classmethod
    def from_stream(cls, stream):
        vals, cnt = np.unique(np.asarray(stream), return_counts=True)
        return cls(dict(zip(vals.tolist(), cnt.tolist())), int(cnt.sum()))

    def pmf(self):
        return {s: c / self.total for s, c in self.counts.items()}


def empirical_entropy(stats_: SymbolStats) -> float:
    """Entropy in bits of the relative frequencies."""
    if stats_.total <= 0:
        raise ValueError("empty symbol statistics")
    p = np.array(list(stats_.counts.values()), dtype=float) / stats_.total
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


@dataclass(frozen=True)
class PrefixCode:
    """Codeword lengths of a prefix code.

    Symbols missing from ``lengths`` are sent as the escape codeword
    followed by a fixed 64-bit grid index.  ``escape_length`` is None for
    codes without an escape.
    """

    lengths: dict
    escape_length: int | None = None
    design_pmf: dict = field(default_factory=dict, repr=False)

    def kraft_sum(self):
        s = sum(2.0 ** -l for l in self.lengths.values())
        if self.escape_length is not None:
            s += 2.0 ** -self.escape_length
        return s

    def expected_length(self, pmf=None):
        pmf = self.design_pmf if pmf is None else pmf
        return float(sum(p * self.cost(s) for s, p in pmf.items()))

    def cost(self, symbol):
        if symbol == ESCAPE:
            return self.escape_length
        if symbol in self.lengths:
            return self.lengths[symbol]
        if self.escape_length is None:
            raise KeyError(f"symbol {symbol!r} has no codeword and the code has no escape")
        return self.escape_length + ESCAPE_PAYLOAD_BITS


def _huffman_lengths(weights):
    if len(weights) == 1:
        return [1]
    tie = itertools.count()
    heap = [(w, next(tie), [i]) for i, w in enumerate(weights)]
    heapq.heapify(heap)
    lengths = [0] * len(weights)
    while len(heap) > 1:
        w1, _, a = heapq.heappop(heap)
        w2, _, b = heapq.heappop(heap)
        for i in a:
            lengths[i] += 1
        for i in b:
            lengths[i] += 1
        if len(a) < len(b):
            a, b = b, a
        a.extend(b)
        heapq.heappush(heap, (w1 + w2, next(tie), a))
    return lengths


def build_prefix_code(pmf: dict, escape_prob: float | None = None) -> PrefixCode:
    """Huffman code for ``pmf`` (symbol -> probability).

    With ``escape_prob`` the code gets an escape leaf carrying that mass,
    which makes the code total over the unbounded quantizer alphabet.
    """
    if not pmf:
        raise ValueError("empty pmf")
    symbols = list(pmf)
    weights = [float(pmf[s]) for s in symbols]
    if min(weights) <= 0:
        raise ValueError("probabilities must be positive")
    total = sum(weights) + (escape_prob or 0.0)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {total!r}, not 1")
    if escape_prob is not None:
        if escape_prob <= 0:
            raise ValueError("escape probability must be positive")
        weights.append(escape_prob)
    lengths = _huffman_lengths(weights)
    esc = lengths.pop() if escape_prob is not None else None
    design = dict(pmf)
    if escape_prob is not None:
        design[ESCAPE] = escape_prob
    return PrefixCode(dict(zip(symbols, lengths)), esc, design)


def gaussian_pmf(delta: float, variance: float, mean: float = 0.0, tail: float = 1e-12):
    """Gaussian of the given variance quantized to the grid ``delta * Z``.

    Keys are grid indices.  Returns ``(pmf, escape_mass)`` where the mass of
    cells beyond the truncation (total ``< tail``) is folded into the escape.
    """
    sd = np.sqrt(variance)
    half = int(np.ceil((abs(mean) + sd * stats.norm.isf(tail / 4)) / delta)) + 1
    idx = np.arange(-half, half + 1)
    edges = (np.append(idx - 0.5, idx[-1] + 0.5) * delta - mean) / sd
    cdf = stats.norm.cdf(edges)
    sf = stats.norm.sf(edges)
    mass = np.where(edges[:-1] > 0, sf[:-1] - sf[1:], cdf[1:] - cdf[:-1])
    keep = mass > 0
    pmf = dict(zip(idx[keep].tolist(), mass[keep].tolist()))
    esc = max(1.0 - sum(pmf.values()), tail)
    norm = (1.0 - esc) / sum(pmf.values())
    pmf = {s: p * norm for s, p in pmf.items()}
    return pmf, esc


def measure_rate(code: PrefixCode, stream) -> float:
    """Average codeword length in bits/sample, escape payloads included."""
    vals, cnt = np.unique(np.asarray(stream), return_counts=True)
    if cnt.sum() == 0:
        return 0.0
    bits = sum(code.cost(s) * c for s, c in zip(vals.tolist(), cnt.tolist()))
    return float(bits / cnt.sum())
