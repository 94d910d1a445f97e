"""Tests for the ground-truth engines and their cross-validation."""

import math
import sys

import numpy as np
import pytest
from scipy import special
from scipy.linalg import expm as dense_expm

from bulkq.errors import IterationBudgetExceeded, TruncationTooSmall
from bulkq.model import QueueParams, build_generator
from bulkq.oracle import (
    McConfig,
    cross_validate,
    expm_uniformization,
    picard_solve,
    simulate_mc,
)

DENSE_TOL = 5e-10
PARAM_SETS = [
    QueueParams(lam=1.0, mu=2.0, m=1),
    QueueParams(lam=1.0, mu=1.0, m=2),
    QueueParams(lam=1.2, mu=0.8, m=3),
]


def test_expm_zero_time_is_identity():
    p = QueueParams(lam=1.0, mu=1.0, m=2)
    out = expm_uniformization(p, 40, 0.0)
    assert np.array_equal(out, np.eye(40))


def test_expm_matches_dense_expm():
    for p in PARAM_SETS:
        for t in (0.3, 1.0, 2.5):
            got = expm_uniformization(p, 128, t)
            ref = dense_expm(np.array(build_generator(p, 128).entries) * t)
            np.testing.assert_allclose(got[:30, :30], ref[:30, :30], atol=DENSE_TOL)


def test_expm_row_sums_near_one():
    p = QueueParams(lam=1.0, mu=1.0, m=1)
    out = expm_uniformization(p, 200, 1.0)
    np.testing.assert_allclose(out[:41].sum(axis=1), np.ones(41), atol=1e-9)


def test_expm_short_time_arrival_derivative():
    # P_{i,i+1}(h) = lam*h + O(h^2) regardless of the band structure
    p = QueueParams(lam=1.3, mu=0.9, m=2)
    h = 1e-4
    out = expm_uniformization(p, 40, h)
    for i in (0, 2, 4):
        assert abs(out[i, i + 1] / h - p.lam) < 1e-3 * p.lam


def test_expm_rejects_bad_inputs():
    p = QueueParams(lam=1.0, mu=1.0, m=1)
    with pytest.raises(ValueError):
        expm_uniformization(p, 100, 1.0, tol=0.0)
    with pytest.raises(ValueError):
        expm_uniformization(p, 100, -1.0)
    with pytest.raises(TruncationTooSmall):
        expm_uniformization(p, 8, 10.0)


def test_expm_partial_sums_entrywise_monotone():
    # every term of the Poisson mixture is a nonnegative matrix, so the
    # partial sums can only grow
    p = QueueParams(lam=1.2, mu=0.8, m=3)
    N, t = 40, 1.5
    q = p.lam + p.mu
    s_mat = np.eye(N) + np.array(build_generator(p, N).entries) / q
    assert s_mat.min() >= 0.0
    a = q * t
    ks = np.arange(25)
    w = np.exp(-a + ks * math.log(a) - special.gammaln(ks + 1))
    term = np.eye(N)
    acc = w[0] * term
    for wk in w[1:]:
        term = term @ s_mat
        nxt = acc + wk * term
        assert np.all(nxt >= acc)
        acc = nxt


def test_expm_auto_doubles_truncation():
    # checking all 48 rows at t=10 forces a leak failure and a retry at 96
    p = QueueParams(lam=1.0, mu=1.0, m=1)
    out = expm_uniformization(p, 48, 10.0, rows=48)
    assert out.shape == (96, 96)
    np.testing.assert_allclose(out[:48].sum(axis=1), np.ones(48), atol=1e-8)


def test_expm_leak_failure_at_cap(monkeypatch):
    monkeypatch.setattr("bulkq.oracle.N_CAP", 128)
    p = QueueParams(lam=1.0, mu=1.0, m=1)
    with pytest.raises(TruncationTooSmall):
        expm_uniformization(p, 96, 10.0, rows=96)


def test_picard_zero_iterations_returns_indicator():
    p = QueueParams(lam=1.0, mu=1.0, m=1)
    state = picard_solve(p, 3, 50, 1.0, 0)
    expect = np.zeros(50)
    expect[3] = 1.0
    assert np.array_equal(state.y, expect)
    assert state.increment_sup == () and state.bound == ()


def test_picard_matches_uniformization():
    p = QueueParams(lam=1.0, mu=1.0, m=1)
    row = picard_solve(p, 0, 200, 1.0, 60).y
    ref = expm_uniformization(p, 200, 1.0)[0]
    assert np.max(np.abs(row - ref)) < 1e-8


def test_picard_increment_bounds_hold():
    for p in PARAM_SETS:
        for t in (0.5, 2.0):
            state = picard_solve(p, 2, 80, t, 50)
            assert len(state.increment_sup) == 50
            for sup, bound in zip(state.increment_sup, state.bound):
                assert sup <= bound


def test_picard_tail_certificate():
    p = QueueParams(lam=1.0, mu=1.0, m=1)
    with pytest.raises(IterationBudgetExceeded):
        picard_solve(p, 0, 100, 1.0, 5, tol=1e-8)
    # a generous budget satisfies the same certificate
    state = picard_solve(p, 0, 100, 1.0, 60, tol=1e-8)
    assert state.iterations == 60


def test_picard_rejects_bad_inputs():
    p = QueueParams(lam=1.0, mu=1.0, m=1)
    with pytest.raises(ValueError):
        picard_solve(p, 50, 50, 1.0, 10)
    with pytest.raises(ValueError):
        picard_solve(p, 0, 50, 1.0, -1)
    with pytest.raises(ValueError):
        picard_solve(p, 0, 50, -2.0, 10)


def test_mc_zero_horizon_is_point_mass():
    p = QueueParams(lam=1.0, mu=1.0, m=2)
    res = simulate_mc(p, McConfig(replications=500, seed=1, start=4, horizon=0.0))
    assert res.freq[4] == 1.0 and res.freq.sum() == 1.0
    assert np.all(res.stderr == 0.0)


def test_mc_reproducible_given_seed():
    p = QueueParams(lam=1.0, mu=2.0, m=1)
    cfg = McConfig(replications=5000, seed=42, start=0, horizon=1.5)
    a = simulate_mc(p, cfg)
    b = simulate_mc(p, cfg)
    assert np.array_equal(a.freq, b.freq)
    assert np.array_equal(a.stderr, b.stderr)


@pytest.mark.parametrize(
    "p, start, t",
    [
        (QueueParams(lam=1.0, mu=1.0, m=1), 0, 1.0),
        (QueueParams(lam=1.0, mu=2.0, m=3), 5, 2.0),
    ],
)
def test_mc_three_sigma_against_uniformization(p, start, t):
    reps = 100_000
    res = simulate_mc(p, McConfig(replications=reps, seed=11, start=start, horizon=t))
    ref = expm_uniformization(p, 64, t)[start]
    for r in range(len(res.freq)):
        expect = ref[r] if r < 64 else 0.0
        if expect * reps < 10.0:
            continue  # too little mass for the binomial error bar to mean much
        assert abs(res.freq[r] - expect) <= 3.0 * res.stderr[r]


def test_mc_coverage_across_seeds():
    p = QueueParams(lam=1.0, mu=1.0, m=1)
    reps, t = 20_000, 1.0
    ref = expm_uniformization(p, 64, t)[0]
    cells = [r for r in range(20) if ref[r] * reps >= 10.0]
    hits = {r: 0 for r in cells}
    for seed in range(20):
        res = simulate_mc(p, McConfig(replications=reps, seed=seed, start=0, horizon=t))
        for r in cells:
            sim = res.freq[r] if r < len(res.freq) else 0.0
            se = res.stderr[r] if r < len(res.freq) else 0.0
            hits[r] += abs(sim - ref[r]) <= 3.0 * se
    # 3-sigma coverage ~0.997, so 17/20 per cell is a loose floor
    assert all(count >= 17 for count in hits.values())


def test_mc_config_validation():
    with pytest.raises(ValueError):
        McConfig(replications=0, seed=1, start=0, horizon=1.0)
    with pytest.raises(ValueError):
        McConfig(replications=10, seed=1, start=-1, horizon=1.0)
    with pytest.raises(ValueError):
        McConfig(replications=10, seed=1, start=0, horizon=-1.0)


def test_cross_validate_empty_grid_passes():
    rep = cross_validate(QueueParams(lam=1.0, mu=1.0, m=1), [])
    assert rep.passed
    assert rep.rows == ()
    assert rep.max_spectral_diff == 0.0 and rep.max_picard_diff == 0.0
    assert rep.mc_within_3se is None and rep.decay_rel_err is None


def test_cross_validate_small_grid():
    p = QueueParams(lam=1.0, mu=1.0, m=2)
    grid = [(n, r, t) for n in (0, 2, 4) for r in (0, 3) for t in (0.1, 1.0)]
    rep = cross_validate(p, grid)
    assert rep.passed
    assert len(rep.rows) == len(grid)
    assert rep.rows[0][:3] == grid[0]
    assert rep.max_spectral_diff <= 1e-6
    assert rep.max_picard_diff <= 1e-8


def test_cross_validate_long_horizon_picard():
    # t = 5 exceeds what a single Taylor run can deliver at 1e-8; the
    # chained engine must still agree
    p = QueueParams(lam=1.0, mu=2.0, m=1)
    rep = cross_validate(p, [(0, 0, 5.0), (3, 2, 5.0), (7, 8, 5.0)])
    assert rep.passed and rep.max_picard_diff <= 1e-8


def test_cross_validate_critical_skips_decay():
    p = QueueParams(lam=2.0, mu=1.0, m=2)  # lam = m*mu
    rep = cross_validate(p, [(0, 0, 0.5), (2, 3, 1.0), (4, 1, 5.0)])
    assert rep.passed
    assert rep.decay_rel_err is None


def test_cross_validate_subcritical_checks_decay():
    p = QueueParams(lam=0.5, mu=1.5, m=1)
    rep = cross_validate(p, [(0, 0, 1.0), (1, 2, 2.0)])
    assert rep.passed
    assert rep.decay_rel_err is not None and rep.decay_rel_err <= 0.15


def test_cross_validate_with_simulation():
    p = QueueParams(lam=1.0, mu=1.0, m=1)
    grid = [(0, r, 1.0) for r in range(4)]
    rep = cross_validate(p, grid, mc_reps=30_000, seed=3)
    assert rep.passed
    assert rep.mc_within_3se is not None and rep.mc_within_3se >= 0.85
    assert all(math.isfinite(row[6]) for row in rep.rows)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
