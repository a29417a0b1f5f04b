"""Discrete-time LTI plumbing.

Transfer functions are stored as coefficient lists in the delay operator
``z^-1``, i.e. ``G = (n0 + n1 z^-1 + ...) / (d0 + d1 z^-1 + ...)``.

The closed loop is the linear "filters + additive noise" model::

    u = F w,   w = v + q,   v = L_w z^-1 w + L_y y

around a generalized plant mapping ``(d, u)`` to ``(e, y)``.  All squared
norms are squared H2 norms computed from discrete Lyapunov equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, signal

__all__ = [
    "TransferFunction",
    "StateSpace",
    "GeneralizedPlant",
    "ClosedLoopSystem",
    "LoopRealization",
    "LoopMetrics",
    "UnstableSystemError",
    "LoopUnstableError",
    "tf_to_ss",
    "h2_norm_sq",
    "sensitivity",
    "controller",
    "loop_metrics",
    "calibrate_beta",
    "example_plant",
    "reference_filters",
]

_ZERO_TOL = 1e-14


class UnstableSystemError(ValueError):
    """A norm was requested for a system with a pole on or outside the unit circle."""


class LoopUnstableError(UnstableSystemError):
    """The supplied filters do not internally stabilize the loop."""


def _trim(c):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    nz = np.flatnonzero(np.abs(c) > _ZERO_TOL)
    if nz.size == 0:
        return np.zeros(1)
    return c[: nz[-1] + 1].copy()


def _padd(a, b):
    n = max(len(a), len(b))
    out = np.zeros(n)
    out[: len(a)] += a
    out[: len(b)] += b
    return out


class TransferFunction:
    """Rational SISO transfer function in powers of ``z^-1``.

    Common leading zeros (shared pure delays) are cancelled and the
    denominator is normalized so that ``den[0] == 1``.
    """

    __slots__ = ("num", "den")

    def __init__(self, num, den=(1.0,)):
        num = _trim(num)
        den = _trim(den)
        if not np.any(den):
            raise ValueError("denominator is identically zero")
        if not np.any(num):
            num = np.zeros(1)
            den = np.ones(1)
        else:
            while abs(den[0]) <= _ZERO_TOL and abs(num[0]) <= _ZERO_TOL:
                num, den = num[1:], den[1:]
            if abs(den[0]) <= _ZERO_TOL:
                raise ValueError(
                    "transfer function is not proper: den[0] == 0 after "
                    "cancelling common delays"
                )
        d0 = den[0]
        object.__setattr__(self, "num", num / d0)
        object.__setattr__(self, "den", den / d0)
        self.num.flags.writeable = False
        self.den.flags.writeable = False

    def __setattr__(self, name, value):
        raise AttributeError("TransferFunction is immutable")

    def __repr__(self):
        return f"TransferFunction(num={self.num.tolist()}, den={self.den.tolist()})"

    @staticmethod
    def _coerce(other):
        if isinstance(other, TransferFunction):
            return other
        return TransferFunction([float(other)])

    def __add__(self, other):
        o = self._coerce(other)
        num = _padd(np.convolve(self.num, o.den), np.convolve(o.num, self.den))
        return TransferFunction(num, np.convolve(self.den, o.den))

    __radd__ = __add__

    def __neg__(self):
        return TransferFunction(-self.num, self.den)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        o = self._coerce(other)
        return TransferFunction(np.convolve(self.num, o.num), np.convolve(self.den, o.den))

    __rmul__ = __mul__

    def inv(self):
        if not np.any(self.num):
            raise ZeroDivisionError("inverse of the zero transfer function")
        return TransferFunction(self.den, self.num)

    def __truediv__(self, other):
        return self * self._coerce(other).inv()

    def __rtruediv__(self, other):
        return self._coerce(other) * self.inv()

    def feedback(self, other=1.0, sign=-1):
        """Closed loop ``G / (1 - sign * G * other)`` with negative feedback by default."""
        o = self._coerce(other)
        return self / (1.0 - sign * self * o)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        zi = 1.0 / z
        return np.polyval(self.num[::-1], zi) / np.polyval(self.den[::-1], zi)

    def _zpoly(self):
        n = max(len(self.num), len(self.den))
        return _padd(self.num, np.zeros(n)), _padd(self.den, np.zeros(n))

    def poles(self):
        _, d = self._zpoly()
        return np.roots(d)

    def zeros(self):
        nm, _ = self._zpoly()
        return np.roots(_trim(nm)) if np.any(nm) else np.array([])

    def is_zero(self):
        return not np.any(self.num)

    def minreal(self, tol=1e-6):
        """Cancel pole/zero pairs closer than ``tol`` (relative to the pole radius)."""
        if self.is_zero():
            return self
        nm, dn = self._zpoly()
        lead = np.flatnonzero(np.abs(nm) > _ZERO_TOL)[0]
        gain = nm[lead] / dn[0]
        zeros = list(np.roots(nm[lead:]))
        poles = list(np.roots(dn))
        kept_poles = []
        for p in poles:
            dist = [abs(p - z) for z in zeros]
            if dist and min(dist) < tol * max(1.0, abs(p)):
                zeros.pop(int(np.argmin(dist)))
            else:
                kept_poles.append(p)
        zn = np.real_if_close(np.poly(zeros), tol=1e6) if zeros else np.ones(1)
        pd = np.real_if_close(np.poly(kept_poles), tol=1e6) if kept_poles else np.ones(1)
        zn = np.real(zn)
        pd = np.real(pd)
        rel_deg = len(pd) - len(zn)
        return TransferFunction(np.concatenate([np.zeros(rel_deg), gain * zn]), pd)

    def impulse(self, n):
        """First ``n`` taps of the impulse response."""
        x = np.zeros(n)
        x[0] = 1.0
        return signal.lfilter(self.num, self.den, x)

    def is_stable(self):
        p = self.poles()
        return p.size == 0 or float(np.max(np.abs(p))) < 1.0


DELAY = TransferFunction([0.0, 1.0])


@dataclass(frozen=True)
class StateSpace:
    """Discrete-time realization ``x+ = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        A = np.asarray(self.A, dtype=float)
        n = A.shape[0] if A.size else 0
        try:
            A = A.reshape(n, n)
            B = np.asarray(self.B, dtype=float).reshape(n, D.shape[1])
            C = np.asarray(self.C, dtype=float).reshape(D.shape[0], n)
        except ValueError as exc:
            raise ValueError(
                f"inconsistent dimensions A{np.shape(self.A)} B{np.shape(self.B)} "
                f"C{np.shape(self.C)} D{D.shape}"
            ) from exc
        for name, val in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, name, val)

    @property
    def order(self):
        return self.A.shape[0]

    def impulse(self, n):
        """Impulse response taps of input 0 to output 0."""
        h = np.zeros(n)
        h[0] = self.D[0, 0]
        x = self.B[:, 0].copy()
        for i in range(1, n):
            h[i] = self.C[0] @ x
            x = self.A @ x
        return h

    def poles(self):
        return np.linalg.eigvals(self.A) if self.order else np.array([])


def tf_to_ss(tf: TransferFunction) -> StateSpace:
    """Controllable-canonical realization of the minimal form of ``tf``."""
    if not isinstance(tf, TransferFunction):
        tf = TransferFunction(*tf)
    tf = tf.minreal()
    n = max(len(tf.num), len(tf.den)) - 1
    num = _padd(tf.num, np.zeros(n + 1))
    den = _padd(tf.den, np.zeros(n + 1))
    d0 = num[0]
    if n == 0:
        return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[d0]])
    A = np.zeros((n, n))
    A[0, :] = -den[1:]
    A[1:, :-1] = np.eye(n - 1)
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    C = (num[1:] - d0 * den[1:]).reshape(1, n)
    return StateSpace(A, B, C, [[d0]])


def _gramian_norm(A, B, C, D):
    if A.shape[0]:
        rad = float(np.max(np.abs(np.linalg.eigvals(A))))
        if rad >= 1.0:
            raise UnstableSystemError(f"system has a pole of radius {rad:.6g} (>= 1)")
        P = linalg.solve_discrete_lyapunov(A, B @ B.T)
        val = np.trace(C @ P @ C.T)
    else:
        val = 0.0
    return float(val + np.trace(D @ D.T))


def h2_norm_sq(sys) -> float:
    """Squared H2 norm, i.e. the energy ``sum |h(n)|^2`` of the impulse response.

    Parameters
    ----------
    sys : TransferFunction or StateSpace

    Raises
    ------
    UnstableSystemError
        If a pole lies on or outside the unit circle.
    """
    if isinstance(sys, TransferFunction):
        if sys.is_zero():
            return 0.0
        sys = tf_to_ss(sys)
    return _gramian_norm(sys.A, sys.B, sys.C, sys.D)


@dataclass(frozen=True)
class GeneralizedPlant:
    """State-space plant ``(d, u) -> (e, y)``.

    ``x+ = A x + B1 d + B2 u``, ``e = C1 x + D11 d + D12 u``,
    ``y = C2 x + D21 d``.  ``y`` has no direct feedthrough from ``u``.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: float
    D12: float
    D21: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        object.__setattr__(self, "A", A)
        for name in ("B1", "B2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(n, 1))
        for name in ("C1", "C2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(1, n))
        for name in ("D11", "D12", "D21"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def from_siso(cls, P: TransferFunction):
        """Plant with ``y = P (u + d)`` and ``e = y``."""
        ss = tf_to_ss(P)
        if abs(ss.D[0, 0]) > 0:
            raise ValueError("P must be strictly proper (no u -> y feedthrough)")
        return cls(ss.A, ss.B, ss.B, ss.C, ss.C, ss.D[0, 0], ss.D[0, 0], ss.D[0, 0])

    @property
    def order(self):
        return self.A.shape[0]

    def block(self, i: int, j: int) -> TransferFunction:
        """Transfer function ``P_ij`` (1-based, rows ``e, y``; columns ``d, u``)."""
        B = self.B1 if j == 1 else self.B2
        C = self.C1 if i == 1 else self.C2
        D = {(1, 1): self.D11, (1, 2): self.D12, (2, 1): self.D21, (2, 2): 0.0}[(i, j)]
        num, den = signal.ss2tf(self.A, B, C, [[D]])
        return TransferFunction(num[0], den).minreal()


@dataclass(frozen=True)
class LoopRealization:
    """Augmented linear recursion of the loop with the quantizer cut open.

    State ``xa = [x; x_yv; x_wv; x_F; w(i-1)]``.  Per step::

        v  = Gv xa + gd d
        xa+ = Phi xa + Gd d + Gw w
        e  = He xa + hd d + hw w

    where ``w`` is the reconstructed quantizer output in ``v`` units.
    """

    Phi: np.ndarray
    Gd: np.ndarray
    Gw: np.ndarray
    Gv: np.ndarray
    gd: float
    He: np.ndarray
    hd: float
    hw: float
    blocks: dict = field(default_factory=dict)

    @property
    def order(self):
        return self.Phi.shape[0]

    def closed(self, m: float = 1.0) -> np.ndarray:
        """State matrix when ``w = m v + noise``."""
        return self.Phi + m * np.outer(self.Gw, self.Gv)


@dataclass(frozen=True)
class ClosedLoopSystem:
    """Plant, filters and the quantizer operating point.

    ``sigma_q2`` is the quantizer noise variance in quantizer-input units.
    The quantizer sees ``beta * v`` and its output is divided by ``beta``,
    so the effective noise in the loop is ``sigma_q2 / beta**2``.
    """

    plant: GeneralizedPlant
    F: TransferFunction
    L_w: TransferFunction
    L_y: TransferFunction
    sigma_q2: float = 1.0
    beta: float = 1.0

    def with_(self, **kw):
        return replace(self, **kw)

    def realization(self) -> LoopRealization:
        p = self.plant
        ly, lw, f = tf_to_ss(self.L_y), tf_to_ss(self.L_w), tf_to_ss(self.F)
        n, ny, nw, nf = p.order, ly.order, lw.order, f.order
        N = n + ny + nw + nf + 1
        sx = slice(0, n)
        sy = slice(n, n + ny)
        sw = slice(n + ny, n + ny + nw)
        sf = slice(n + ny + nw, n + ny + nw + nf)
        iw = N - 1
        Dy, Dw, Df = ly.D[0, 0], lw.D[0, 0], f.D[0, 0]

        # v = Cy xy + Dy (C2 x + D21 d) + Cwv xwv + Dwv w_prev
        Gv = np.zeros(N)
        Gv[sx] = Dy * p.C2[0]
        Gv[sy] = ly.C[0]
        Gv[sw] = lw.C[0]
        Gv[iw] = Dw
        gd = Dy * p.D21

        # u = Cf xf + Df w
        Phi = np.zeros((N, N))
        Gd = np.zeros(N)
        Gw = np.zeros(N)
        Phi[sx, sx] = p.A
        Phi[sx, sf] = p.B2 @ f.C
        Gd[sx] = p.B1[:, 0]
        Gw[sx] = p.B2[:, 0] * Df
        Phi[sy, sx] = ly.B @ p.C2
        Phi[sy, sy] = ly.A
        Gd[sy] = ly.B[:, 0] * p.D21
        Phi[sw, sw] = lw.A
        Phi[sw, iw] = lw.B[:, 0]
        Phi[sf, sf] = f.A
        Gw[sf] = f.B[:, 0]
        Gw[iw] = 1.0

        He = np.zeros(N)
        He[sx] = p.C1[0]
        He[sf] = p.D12 * f.C[0]
        return LoopRealization(
            Phi, Gd, Gw, Gv, gd, He, p.D11, p.D12 * Df,
            blocks={"x": sx, "x_yv": sy, "x_wv": sw, "x_F": sf, "w_prev": iw},
        )


def _closed_norms(real: LoopRealization):
    """Squared norms of the noise-driven loop (every description received)."""
    Acl = real.closed(1.0)
    rad = float(np.max(np.abs(np.linalg.eigvals(Acl))))
    if rad >= 1.0:
        raise LoopUnstableError(
            f"loop not internally stabilized by supplied filters (closed-loop pole radius {rad:.6g})"
        )
    Bd = (real.Gd + real.Gw * real.gd)[:, None]
    Bq = real.Gw[:, None]
    Cv = real.Gv[None, :]
    Ce = (real.He + real.hw * real.Gv)[None, :]
    return {
        "snorm": _gramian_norm(Acl, Bq, Cv, np.zeros((1, 1))),
        "ly": _gramian_norm(Acl, Bd, Cv, np.array([[real.gd]])),
        "floor": _gramian_norm(Acl, Bd, Ce, np.array([[real.hd + real.hw * real.gd]])),
        "pfs": _gramian_norm(Acl, Bq, Ce, np.array([[real.hw]])),
        "radius": rad,
    }


def sensitivity(loop: ClosedLoopSystem) -> TransferFunction:
    """``S = (1 - L_w z^-1 - P22 F L_y)^-1``, checked for internal stability."""
    P22 = loop.plant.block(2, 2)
    S = (1.0 - loop.L_w * DELAY - P22 * loop.F * loop.L_y).inv().minreal()
    _closed_norms(loop.realization())
    if not S.is_stable():
        raise LoopUnstableError("loop not internally stabilized by supplied filters")
    return S


def controller(loop: ClosedLoopSystem) -> TransferFunction:
    """``K = F L_y (1 - L_w z^-1)^-1``."""
    return (loop.F * loop.L_y / (1.0 - loop.L_w * DELAY)).minreal()


@dataclass(frozen=True)
class LoopMetrics:
    """SNR, variances and rate floor of a loop at a given quantizer noise.

    Variances are in quantizer-input units except ``sigma_e2`` and
    ``perf_floor`` which are plant-output variances.  ``noise_gain`` is
    ``||P12 F S||^2`` per unit of quantizer-unit noise (already divided
    by ``beta**2``).
    """

    gamma: float
    sigma_e2: float
    sigma_v2: float
    snorm: float
    min_rate: float
    ly_norm: float
    perf_floor: float
    noise_gain: float
    sigma_q2: float
    stabilizing: bool

    def sigma_e2_at(self, sigma_q2: float) -> float:
        """Output variance for a different quantizer noise variance."""
        return self.perf_floor + self.noise_gain * sigma_q2

    def sigma_v2_at(self, sigma_q2: float) -> float:
        return self.snorm * sigma_q2 + self.ly_norm


def loop_metrics(loop: ClosedLoopSystem) -> LoopMetrics:
    """Evaluate gamma, sigma_e^2, sigma_v^2 and ||S-1||^2 for ``loop``."""
    nrm = _closed_norms(loop.realization())
    b2 = loop.beta ** 2
    ly = b2 * nrm["ly"]
    gain = nrm["pfs"] / b2
    sq2 = float(loop.sigma_q2)
    if sq2 <= 0:
        raise ValueError("sigma_q2 must be positive")
    gamma = nrm["snorm"] + ly / sq2
    return LoopMetrics(
        gamma=gamma,
        sigma_e2=nrm["floor"] + gain * sq2,
        sigma_v2=gamma * sq2,
        snorm=nrm["snorm"],
        min_rate=float(0.5 * np.log2(1.0 + nrm["snorm"])),
        ly_norm=ly,
        perf_floor=nrm["floor"],
        noise_gain=gain,
        sigma_q2=sq2,
        stabilizing=bool(gamma > nrm["snorm"]),
    )


def calibrate_beta(loop: ClosedLoopSystem, sigma_v2: float, sigma_q2: float) -> ClosedLoopSystem:
    """Return ``loop`` with ``beta`` and ``sigma_q2`` set so that the quantizer
    input variance equals ``sigma_v2`` at noise variance ``sigma_q2``."""
    nrm = _closed_norms(loop.realization())
    disturbance_part = sigma_v2 - nrm["snorm"] * sigma_q2
    if disturbance_part <= 0:
        raise ValueError(
            f"sigma_v2={sigma_v2} unreachable: noise alone contributes {nrm['snorm'] * sigma_q2:.4g}"
        )
    beta = float(np.sqrt(disturbance_part / nrm["ly"]))
    return replace(loop, beta=beta, sigma_q2=float(sigma_q2))


# The plant used throughout the simulation study: a single unstable pole at 4.
_PLANT_NUM = [0.0, 0.0, 0.165]
_PLANT_DEN = np.convolve([1.0, -4.0], [1.0, -0.5789])


def reference_filters(s_pole: float = 0.3):
    """Shipped filters ``(F, L_w, L_y)`` for the example plant.

    They place the closed-loop sensitivity at
    ``S = (1 - 4 z^-1) / (1 - s_pole z^-1)`` giving
    ``||S - 1||^2 = (4 - s_pole)^2 / (1 - s_pole^2)``; the infimum 15 is
    reached at ``s_pole = 0.25``.  ``F = 1``, ``L_w`` is a constant and
    ``L_y`` is first-order FIR cancelling the stable plant pole.
    """
    lw = s_pole - 4.0
    F = TransferFunction([1.0])
    L_w = TransferFunction([lw])
    L_y = TransferFunction(np.array([1.0, -0.5789]) * (4.0 * lw / 0.165))
    return F, L_w, L_y


def example_plant(s_pole: float = 0.3, sigma_q2: float = 1.0, beta: float = 1.0) -> ClosedLoopSystem:
    """The plant ``y = 0.165 / ((z - 4)(z - 0.5789)) (u + d)``, ``e = y``,
    with the shipped reference filters."""
    P = TransferFunction(_PLANT_NUM, _PLANT_DEN)
    F, L_w, L_y = reference_filters(s_pole)
    return ClosedLoopSystem(GeneralizedPlant.from_siso(P), F, L_w, L_y, sigma_q2, beta)
