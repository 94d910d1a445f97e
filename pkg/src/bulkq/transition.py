"""Transient transition probabilities of the queue.

The engine evaluates P_{n,r}(t) by pairing the birth polynomial family
against the dual vectors and the spectral functionals: a contour integral
of ``e^{x t} Q_n(x) sum_j lam^j q_{j,r}(x) fhat_{j+1}`` over a thin tube
around the spectral star, plus residue atoms for the resolvent poles the
tube leaves outside.  The tube data comes from the spectral module and is
independent of (n, r, t), so rows, columns and time grids share one pack.

On top of the point engine sit the classic sanity functionals: honesty
(row sums), the Chapman-Kolmogorov chain rule, and the spectral decay rate
with a late-window fit of the transient part.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
from scipy import special

from .algebraic import AlgebraicConfig, star_geometry
from .errors import QuadratureNotConverged, TailNotControlled
from .model import QueueParams, validate_params
from .spectral import BASE_PANELS, GL_ORDER, _atoms, _tube_pack, _TubePack

__all__ = [
    "TransitionQuery",
    "TransitionResult",
    "transition_spectral",
    "honesty_check",
    "semigroup_check",
    "decay_rate",
    "fitted_decay_rate",
]

#: stabilisation target for the panel-doubling ladder
TRANS_TOL = 1e-9
#: analytic probabilities may poke this far outside [0, 1]
EPS_NEG = 1e-7
#: largest start/end state the point engine accepts (desk scale)
STATE_CAP = 64
#: Poisson tail budget for honesty / chain-rule cutoffs
TAIL_TOL = 1e-8

_METHODS = ("spectral", "uniformization", "picard", "montecarlo")


@dataclass(frozen=True)
class TransitionQuery:
    """Start state, end state, and the evaluation times.

    Parameters
    ----------
    n, r : int
        Start and end states, both >= 0.
    times : sequence of float
        Nonempty, finite, nonnegative, sorted ascending.
    """

    n: int
    r: int
    times: tuple[float, ...]

    def __post_init__(self) -> None:
        for label, k in (("n", self.n), ("r", self.r)):
            if int(k) != k or k < 0:
                raise ValueError(f"{label} must be an integer >= 0, got {k}")
        ts = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", ts)
        if not ts:
            raise ValueError("need at least one evaluation time")
        for t in ts:
            if not (math.isfinite(t) and t >= 0.0):
                raise ValueError(f"times must be finite and >= 0, got {t}")
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"times must be ascending, got {ts}")


@dataclass(frozen=True)
class TransitionResult:
    """Per-time values of P_{n,r} with the engine tag and error estimates.

    Analytic engines must land in [-1e-7, 1 + 1e-7]; Monte Carlo carries
    sampling noise and is exempt from the range check.
    """

    values: tuple[float, ...]
    method: str
    error_estimate: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}, got {self.method!r}")
        if len(self.values) != len(self.error_estimate):
            raise ValueError("values and error_estimate must have equal length")
        if self.method != "montecarlo":
            for v in self.values:
                if not -EPS_NEG <= v <= 1.0 + EPS_NEG:
                    raise ValueError(f"analytic probability out of range: {v}")


def decay_rate(p: QueueParams) -> float:
    """Largest real part over the spectral support of the generator.

    Closed form ``-lam - mu + lam * a(mu/lam)`` with ``a`` the arm length of
    the rescaled star.  The arithmetic-geometric mean inequality puts this
    at or below zero for every parameter choice, with equality exactly on
    the critical line ``lam = m mu``; only round-off can leak a positive
    sliver there, which is clamped.
    """
    validate_params(p)
    arm = star_geometry(AlgebraicConfig(c=p.mu / p.lam, m=p.m, frame="A")).arm_length
    return min(-p.lam - p.mu + p.lam * arm, 0.0)


# --------------------------------------------------------------------------
# polynomial value streams (vectorized recurrences, O(m) history)


def _poly_stream(p: QueueParams, x: np.ndarray, nmax: int) -> Iterator[np.ndarray]:
    """Yield values Q_n(x) for n = 0..nmax on the sample array ``x``."""
    lam, mu, m = p.lam, p.mu, p.m
    base = (lam + x) / lam
    hist: list[np.ndarray] = []
    for n in range(nmax + 1):
        if n == 0:
            v = np.ones_like(x)
        elif n <= m:
            v = base**n
        else:
            v = ((lam + mu + x) * hist[-1] - mu * hist[-(m + 1)]) / lam
        hist.append(v)
        if len(hist) > m + 1:
            hist.pop(0)
        yield v


def _dual_stream(p: QueueParams, x: np.ndarray, rmax: int) -> Iterator[np.ndarray]:
    """Yield the m-vector values q_r(x) for r = 0..rmax."""
    lam, mu, m = p.lam, p.mu, p.m
    hist: list[np.ndarray] = []
    for r in range(rmax + 1):
        if r < m:
            v = np.zeros((m,) + x.shape, dtype=complex)
            v[r] = 1.0
        else:
            head = r - m
            rate = (lam + x) if head < m else (lam + mu + x)
            prev = hist[-(m + 1)] if head >= 1 else 0.0
            v = (rate * hist[-m] - lam * prev) / mu
        hist.append(v)
        if len(hist) > m + 1:
            hist.pop(0)
        yield v


def _last(stream: Iterable[np.ndarray]) -> np.ndarray:
    for v in stream:
        pass
    return v


# --------------------------------------------------------------------------
# tube contractions


def _pair_eval(
    p: QueueParams, pack: _TubePack, n: int, r: int, times: np.ndarray
) -> np.ndarray:
    """P_{n,r}(t) for each t from one tube pack (real array)."""
    shift = p.lam + p.mu
    x = pack.z - shift
    qn = _last(_poly_stream(p, x, n))
    dr = _last(_dual_stream(p, x, r))
    scale = p.lam ** np.arange(p.m)
    core = qn * np.einsum("j,jk,jk->k", scale, dr, pack.fhat) * pack.w / (2j * math.pi)
    vals = np.exp(np.multiply.outer(times, x)) @ core
    for zp, res in pack.atoms:
        xp = np.array([zp - shift])
        lump = _last(_poly_stream(p, xp, n))[0] * np.sum(
            scale * res * _last(_dual_stream(p, xp, r))[:, 0]
        )
        vals = vals + lump * np.exp(xp[0] * times)
    return vals.real


def _row_eval(p: QueueParams, pack: _TubePack, n: int, rmax: int, t: float) -> np.ndarray:
    """The row slice (P_{n,0}(t), ..., P_{n,rmax}(t)) from one pack."""
    if t == 0.0:
        out = np.zeros(rmax + 1)
        if n <= rmax:
            out[n] = 1.0
        return out
    shift = p.lam + p.mu
    x = pack.z - shift
    scale = p.lam ** np.arange(p.m)
    probe = np.exp(x * t) * _last(_poly_stream(p, x, n)) * pack.w / (2j * math.pi)
    weighted = scale[:, None] * pack.fhat * probe
    # atoms walk their own dual streams in lockstep with the tube one
    atom = []
    for zp, res in pack.atoms:
        xp = np.array([zp - shift])
        head = cmath.exp((zp - shift) * t) * _last(_poly_stream(p, xp, n))[0]
        atom.append((head * scale * res, _dual_stream(p, xp, rmax)))
    out = np.empty(rmax + 1)
    for r, dr in enumerate(_dual_stream(p, x, rmax)):
        v = np.sum(dr * weighted)
        for lump, duals in atom:
            v = v + np.sum(lump * next(duals)[:, 0])
        out[r] = v.real
    return out


def _col_eval(p: QueueParams, pack: _TubePack, nmax: int, r: int, t: float) -> np.ndarray:
    """The column slice (P_{0,r}(t), ..., P_{nmax,r}(t)) from one pack."""
    if t == 0.0:
        out = np.zeros(nmax + 1)
        if r <= nmax:
            out[r] = 1.0
        return out
    shift = p.lam + p.mu
    x = pack.z - shift
    scale = p.lam ** np.arange(p.m)
    dr = _last(_dual_stream(p, x, r))
    core = (
        np.exp(x * t)
        * np.einsum("j,jk,jk->k", scale, dr, pack.fhat)
        * pack.w
        / (2j * math.pi)
    )
    atom = []
    for zp, res in pack.atoms:
        xp = np.array([zp - shift])
        mass = np.sum(scale * res * _last(_dual_stream(p, xp, r))[:, 0])
        atom.append((mass * cmath.exp((zp - shift) * t), _poly_stream(p, xp, nmax)))
    out = np.empty(nmax + 1)
    for k, qk in enumerate(_poly_stream(p, x, nmax)):
        v = np.sum(qk * core)
        for lump, polys in atom:
            v = v + lump * next(polys)[0]
        out[k] = v.real
    return out


def _pole_lumps(p: QueueParams, n: int, r: int) -> list[tuple[complex, complex]]:
    """Every active resolvent pole with its P_{n,r} residue mass.

    Unlike the tube atoms this keeps poles that sit inside the tube: the
    decay fit must subtract all exponential modes, wherever the contour
    happens to run.
    """
    shift = p.lam + p.mu
    scale = p.lam ** np.arange(p.m)
    out = []
    for zp, res in _atoms(p, 0.0):
        xp = np.array([zp - shift])
        mass = _last(_poly_stream(p, xp, n))[0] * np.sum(
            scale * res * _last(_dual_stream(p, xp, r))[:, 0]
        )
        out.append((zp - shift, complex(mass)))
    return out


# --------------------------------------------------------------------------
# public engine


def transition_spectral(
    p: QueueParams, q: TransitionQuery, *, tol: float = TRANS_TOL
) -> TransitionResult:
    """Evaluate P_{n,r}(t) at each query time by the spectral formula.

    Times equal to zero are answered exactly from P(0) = I.  For the rest,
    tube panels are doubled until two successive evaluations of the whole
    time vector agree to ``tol`` (relative, floored at scale 1); the last
    doubling gap is reported per time as the error estimate.

    Raises
    ------
    QuadratureNotConverged
        If the panel ladder is exhausted without stabilizing.
    ValueError
        If a state index exceeds the desk-scale cap of 64.
    """
    validate_params(p)
    for label, k in (("n", q.n), ("r", q.r)):
        if k > STATE_CAP:
            raise ValueError(f"{label} must be <= {STATE_CAP}, got {k}")
    times = np.asarray(q.times, dtype=float)
    vals = np.full(times.shape, 1.0 if q.n == q.r else 0.0)
    errs = np.zeros_like(vals)
    live = times > 0.0
    if np.any(live):
        prev = None
        for panels in (BASE_PANELS, 2 * BASE_PANELS, 4 * BASE_PANELS):
            pack = _tube_pack(p, panels, GL_ORDER)
            cur = _pair_eval(p, pack, q.n, q.r, times[live])
            if prev is not None:
                gap = np.abs(cur - prev)
                if np.all(gap <= tol * np.maximum(1.0, np.abs(cur))):
                    vals[live] = cur
                    errs[live] = gap
                    break
            prev = cur
        else:
            raise QuadratureNotConverged(
                f"P_({q.n},{q.r}) not stable after {4 * BASE_PANELS} panels"
            )
    return TransitionResult(
        values=tuple(float(v) for v in vals),
        method="spectral",
        error_estimate=tuple(float(e) for e in errs),
    )


def _poisson_tail(k: int, a: float) -> float:
    """P[Poisson(a) > k] for integer k (1.0 when k < 0)."""
    if k < 0:
        return 1.0
    return float(special.gammainc(k + 1, a))


def _poisson_quantile(a: float, tol: float) -> int:
    """Smallest k with P[Poisson(a) > k] < tol."""
    k = max(0, int(a))
    while _poisson_tail(k, a) >= tol:
        k += 1
    return k


#: tail budget for the internal summation cutoff (below the honesty tol)
_WORK_TAIL = 1e-9


def honesty_check(p: QueueParams, n: int, t: float, R: int) -> float:
    """Partial row sum ``sum_{r <= R} P_{n,r}(t)`` of the spectral engine.

    The state climbs only by single arrivals, so the chance of exceeding
    the cutoff from n by time t is at most the Poisson tail
    ``P[Pois(lam t) > R - n]``; the cutoff must keep that below 1e-8.

    Entries above the same quantile at budget 1e-9 are provably below
    round-off relevance and are not evaluated: the spectral integrand for
    P_{n,r} carries a recurrence mode growing like ``(lam/|omega_min|)^r``,
    so summing blindly to a generous R would trade a negligible tail for
    genuine cancellation noise.

    Raises
    ------
    TailNotControlled
        If the cutoff leaves too much probability above R.
    """
    validate_params(p)
    if n < 0 or int(n) != n:
        raise ValueError(f"n must be an integer >= 0, got {n}")
    if not (math.isfinite(t) and t >= 0.0):
        raise ValueError(f"t must be finite and >= 0, got {t}")
    tail = _poisson_tail(R - n, p.lam * t)
    if tail >= TAIL_TOL:
        raise TailNotControlled(
            f"Poisson tail {tail:.3e} above {TAIL_TOL:.0e} at cutoff R={R}"
        )
    if t == 0.0:
        return 1.0
    work = min(R, n + _poisson_quantile(p.lam * t, _WORK_TAIL) + 2)
    prev = None
    for panels in (BASE_PANELS, 2 * BASE_PANELS, 4 * BASE_PANELS):
        pack = _tube_pack(p, panels, GL_ORDER)
        val = float(np.sum(_row_eval(p, pack, n, work, t)))
        if prev is not None and abs(val - prev) <= TRANS_TOL * max(1.0, abs(val)):
            return val
        prev = val
    raise QuadratureNotConverged(f"honesty sum not stable after {4 * BASE_PANELS} panels")


def semigroup_check(
    p: QueueParams, n: int, r: int, s: float, t: float, K: int
) -> float:
    """Chain-rule residual ``|P_{n,r}(s+t) - sum_{k <= K} P_{n,k}(s) P_{k,r}(t)|``.

    The intermediate-state cutoff must control the Poisson upcrossing tail
    ``P[Pois(lam s) > K - n] < 1e-8``.  As in :func:`honesty_check`, the
    sum is actually evaluated up to the 1e-9 quantile: the dropped terms
    are bounded by that tail (each column factor is at most 1) while their
    evaluation would be cancellation-dominated.

    Raises
    ------
    TailNotControlled
        If the cutoff leaves too much intermediate probability above K.
    """
    validate_params(p)
    if min(n, r) < 0 or min(s, t) < 0:
        raise ValueError("states and times must be >= 0")
    tail = _poisson_tail(K - n, p.lam * s)
    if tail >= TAIL_TOL:
        raise TailNotControlled(
            f"intermediate tail {tail:.3e} above {TAIL_TOL:.0e} at cutoff K={K}"
        )
    work = min(K, n + _poisson_quantile(p.lam * s, _WORK_TAIL) + 2)
    prev = None
    for panels in (BASE_PANELS, 2 * BASE_PANELS, 4 * BASE_PANELS):
        pack = _tube_pack(p, panels, GL_ORDER)
        whole = (
            1.0
            if s + t == 0.0 and n == r
            else 0.0
            if s + t == 0.0
            else float(_pair_eval(p, pack, n, r, np.array([s + t]))[0])
        )
        chain = float(_row_eval(p, pack, n, work, s) @ _col_eval(p, pack, work, r, t))
        if prev is not None:
            ok_whole = abs(whole - prev[0]) <= TRANS_TOL * max(1.0, abs(whole))
            ok_chain = abs(chain - prev[1]) <= TRANS_TOL * max(1.0, abs(chain))
            if ok_whole and ok_chain:
                return abs(whole - chain)
        prev = (whole, chain)
    raise QuadratureNotConverged(
        f"chain-rule pair not stable after {4 * BASE_PANELS} panels"
    )


def fitted_decay_rate(
    p: QueueParams,
    *,
    points: int = 26,
    window: tuple[float, float] = (5.0, 30.0),
) -> float:
    """Exponential rate of the transient part of P_{0,0} on a late window.

    Subtracts every resolvent-pole mode (steady state and rotating modes)
    from P_{0,0}(t), then least-squares fits
    ``log y = c0 - (3/2) log t + rate * t + c1 / t``; the -3/2 power is the
    branch-point contribution at the arm tip.  Meaningful only for clearly
    subcritical parameters — the window cannot resolve rates near zero.

    Raises
    ------
    QuadratureNotConverged
        If the transient part drowns in round-off over most of the window.
    """
    validate_params(p)
    ts = np.linspace(window[0], window[1], points)
    vals = np.asarray(transition_spectral(p, TransitionQuery(0, 0, tuple(ts))).values)
    for xp, mass in _pole_lumps(p, 0, 0):
        vals = vals - (mass * np.exp(xp * ts)).real
    keep = vals > 0.0
    if int(keep.sum()) < max(8, points // 2):
        raise QuadratureNotConverged(
            "transient part of P_00 lost to round-off on the fit window"
        )
    tk, yk = ts[keep], vals[keep]
    design = np.column_stack([np.ones_like(tk), tk, 1.0 / tk])
    sol, *_ = np.linalg.lstsq(design, np.log(yk) + 1.5 * np.log(tk), rcond=None)
    return float(sol[1])
