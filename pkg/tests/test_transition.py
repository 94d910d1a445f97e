"""Tests for the transient transition-probability engine."""

import math
import sys

import numpy as np
import pytest
import scipy.linalg

from bulkq.errors import TailNotControlled
from bulkq.model import QueueParams, build_generator
from bulkq.transition import (
    TransitionQuery,
    TransitionResult,
    decay_rate,
    fitted_decay_rate,
    honesty_check,
    semigroup_check,
    transition_spectral,
)

EXPM_TOL = 1e-10  # engine vs dense matrix exponential
EXPM_N = 260  # truncation large enough that the compared entries are exact


def expm_entry(p: QueueParams, n: int, r: int, t: float) -> float:
    a = np.array(build_generator(p, EXPM_N).entries)
    return float(scipy.linalg.expm(t * a)[n, r])


# ------------------------------------------------------------------ queries


def test_query_rejects_bad_states():
    with pytest.raises(ValueError):
        TransitionQuery(-1, 0, (1.0,))
    with pytest.raises(ValueError):
        TransitionQuery(0, 2.5, (1.0,))


def test_query_rejects_bad_times():
    with pytest.raises(ValueError):
        TransitionQuery(0, 0, ())
    with pytest.raises(ValueError):
        TransitionQuery(0, 0, (1.0, 0.5))
    with pytest.raises(ValueError):
        TransitionQuery(0, 0, (-0.1,))
    with pytest.raises(ValueError):
        TransitionQuery(0, 0, (math.nan,))
    with pytest.raises(ValueError):
        TransitionQuery(0, 0, (math.inf,))


def test_query_normalizes_times_to_floats():
    q = TransitionQuery(1, 2, [0, 1, 2])
    assert q.times == (0.0, 1.0, 2.0)
    assert all(isinstance(t, float) for t in q.times)


def test_result_validates_method_and_range():
    with pytest.raises(ValueError):
        TransitionResult((0.5,), "magic", (0.0,))
    with pytest.raises(ValueError):
        TransitionResult((0.5, 0.5), "spectral", (0.0,))
    with pytest.raises(ValueError):
        TransitionResult((1.5,), "spectral", (0.0,))
    # sampling noise is allowed to leave [0, 1] only for the MC tag
    TransitionResult((1.01,), "montecarlo", (0.02,))


def test_state_cap():
    with pytest.raises(ValueError):
        transition_spectral(QueueParams(1.0, 1.0, 1), TransitionQuery(65, 0, (1.0,)))


# ------------------------------------------------------------------- engine


def test_time_zero_is_exact_identity():
    p = QueueParams(1.3, 0.7, 2)
    assert transition_spectral(p, TransitionQuery(4, 4, (0.0,))).values == (1.0,)
    assert transition_spectral(p, TransitionQuery(4, 2, (0.0,))).values == (0.0,)


def test_matches_matrix_exponential():
    for p in [QueueParams(1.0, 2.0, 1), QueueParams(1.0, 1.0, 2), QueueParams(1.2, 0.8, 3)]:
        for n, r, t in [(0, 0, 0.5), (0, 2, 1.0), (3, 1, 2.0), (5, 7, 1.0), (8, 0, 5.0)]:
            got = transition_spectral(p, TransitionQuery(n, r, (t,))).values[0]
            assert abs(got - expm_entry(p, n, r, t)) <= EXPM_TOL


def test_spec_point_m2():
    # the classic smoke point: lam = mu = 1, m = 2, P_{0,2}(1)
    p = QueueParams(1.0, 1.0, 2)
    got = transition_spectral(p, TransitionQuery(0, 2, (1.0,))).values[0]
    assert abs(got - expm_entry(p, 0, 2, 1.0)) <= 1e-6


def test_multi_time_query_and_error_estimates():
    p = QueueParams(1.0, 1.0, 2)
    res = transition_spectral(p, TransitionQuery(3, 3, (0.0, 0.5, 1.0, 5.0)))
    assert res.method == "spectral"
    assert len(res.values) == len(res.error_estimate) == 4
    assert res.values[0] == 1.0 and res.error_estimate[0] == 0.0
    assert all(e <= 1e-9 for e in res.error_estimate)
    singles = [
        transition_spectral(p, TransitionQuery(3, 3, (t,))).values[0]
        for t in (0.5, 1.0, 5.0)
    ]
    np.testing.assert_allclose(res.values[1:], singles, rtol=0, atol=1e-13)


def test_short_time_arrival_rate():
    # P_{i,i+1}(dt)/dt -> lam, checked with one Richardson step
    p = QueueParams(1.3, 0.9, 2)
    for i in (0, 3):
        v1 = transition_spectral(p, TransitionQuery(i, i + 1, (1e-3,))).values[0] / 1e-3
        v2 = transition_spectral(p, TransitionQuery(i, i + 1, (5e-4,))).values[0] / 5e-4
        assert abs(2.0 * v2 - v1 - p.lam) <= 5e-6 * p.lam


def test_continuity_at_zero():
    p = QueueParams(1.0, 2.0, 1)
    assert abs(transition_spectral(p, TransitionQuery(2, 2, (1e-5,))).values[0] - 1.0) <= 1e-4
    assert abs(transition_spectral(p, TransitionQuery(2, 3, (1e-5,))).values[0]) <= 1e-4


def test_backward_equations_stencil():
    # five-point derivative of P_{i,j} in t against the generator rows
    p = QueueParams(1.0, 1.0, 2)
    h, t0, j = 1e-3, 1.0, 2
    for i in (1, 3):
        need = (i + 2, i + 1, i, i - 1, i - 2) if i >= p.m else (i + 1, i)
        grid = {}
        for k in {i, i + 1, i - p.m}:
            if k < 0:
                continue
            vals = transition_spectral(
                p, TransitionQuery(k, j, tuple(t0 + s * h for s in (-2, -1, 0, 1, 2)))
            ).values
            grid[k] = vals
        d = (grid[i][0] - 8 * grid[i][1] + 8 * grid[i][3] - grid[i][4]) / (12 * h)
        if i < p.m:
            rhs = -p.lam * grid[i][2] + p.lam * grid[i + 1][2]
        else:
            rhs = (
                p.mu * grid[i - p.m][2]
                - (p.lam + p.mu) * grid[i][2]
                + p.lam * grid[i + 1][2]
            )
        assert abs(d - rhs) <= 1e-4


def test_nonnegativity_small_grid():
    p = QueueParams(1.0, 1.0, 2)
    for n in range(6):
        for r in range(6):
            res = transition_spectral(p, TransitionQuery(n, r, (0.3, 2.0)))
            assert all(v >= -1e-7 for v in res.values)


# ----------------------------------------------------------- row functionals


def test_honesty_identity_at_zero():
    assert honesty_check(QueueParams(1.0, 1.0, 1), 0, 0.0, 5) == 1.0


def test_honesty_examples():
    assert abs(honesty_check(QueueParams(1.0, 1.0, 1), 0, 1.0, 40) - 1.0) <= 1e-7
    assert abs(honesty_check(QueueParams(2.0, 1.0, 2), 3, 2.0, 80) - 1.0) <= 1e-6


def test_honesty_tail_guard():
    with pytest.raises(TailNotControlled):
        honesty_check(QueueParams(1.0, 1.0, 1), 0, 5.0, 8)
    with pytest.raises(TailNotControlled):
        honesty_check(QueueParams(1.0, 1.0, 1), 10, 1.0, 9)  # R below start state


def test_semigroup_identity_at_zero():
    assert semigroup_check(QueueParams(1.0, 1.0, 2), 1, 2, 0.0, 0.8, 40) <= 1e-12


def test_semigroup_examples():
    assert semigroup_check(QueueParams(1.0, 1.0, 1), 0, 1, 0.5, 0.5, 60) <= 1e-7
    assert semigroup_check(QueueParams(1.0, 2.0, 3), 2, 5, 0.3, 0.7, 100) <= 1e-6


def test_semigroup_tail_guard():
    with pytest.raises(TailNotControlled):
        semigroup_check(QueueParams(1.0, 1.0, 1), 0, 0, 5.0, 1.0, 8)


# -------------------------------------------------------------------- decay


def test_decay_rate_closed_forms():
    assert decay_rate(QueueParams(1.0, 1.0, 1)) == 0.0
    np.testing.assert_allclose(
        decay_rate(QueueParams(1.0, 2.0, 1)), -3.0 + 2.0 * math.sqrt(2.0), rtol=1e-14
    )
    np.testing.assert_allclose(
        decay_rate(QueueParams(1.0, 1.0, 2)), -2.0 + 3.0 * 0.25 ** (1.0 / 3.0), rtol=1e-14
    )


def test_decay_rate_never_positive():
    rng = np.random.default_rng(5)
    for _ in range(200):
        m = int(rng.integers(1, 5))
        lam, mu = rng.uniform(0.05, 4.0, size=2)
        assert decay_rate(QueueParams(lam, mu, m)) <= 0.0


def test_fitted_decay_rate_matches_tip():
    for lam, mu, m in [(0.5, 1.5, 1), (0.6, 1.0, 2)]:
        p = QueueParams(lam, mu, m)
        tip = decay_rate(p)
        assert abs(fitted_decay_rate(p) - tip) <= 0.15 * abs(tip)


def test_decay_envelope_on_window():
    # log of the transient part minus rate*t should not creep upward
    from bulkq.transition import _pole_lumps

    p = QueueParams(0.5, 1.5, 1)
    rate = decay_rate(p)
    ts = np.linspace(5.0, 30.0, 11)
    vals = np.asarray(transition_spectral(p, TransitionQuery(0, 0, tuple(ts))).values)
    for xp, mass in _pole_lumps(p, 0, 0):
        vals = vals - (mass * np.exp(xp * ts)).real
    assert np.all(vals > 0)
    phi = np.log(vals) - rate * ts
    assert np.max(phi) <= phi[0] + 0.1


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
