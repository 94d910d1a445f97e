import cmath
import math

import numpy as np
import pytest

from bulkq.algebraic import AlgebraicConfig, boundary_values, solve_branches, star_geometry
from bulkq.errors import InsideSupport, NotOnOpenArm
from bulkq.model import QueueParams
from bulkq.operators import OperatorSpec, moment
from bulkq.polynomials import dual_vector, q_poly
from bulkq.spectral import (
    QuadratureRule,
    SpectralFunctional,
    WeightFunction,
    _arm_density,
    markov_residual,
    sigma_apply,
    star_quadrature,
    weight_rho,
    weight_rho_j,
)

MASS_TOL = 1e-8
MOMENT_TOL = 1e-7


def test_weight_rho_frozen_point():
    # m = 1, c = 1: w(t) = sqrt(4 - t^2)/(2 pi), so w(1) = sqrt(3)/(2 pi)
    got = weight_rho(AlgebraicConfig(c=1.0, m=1), 1.0)
    np.testing.assert_allclose(got, math.sqrt(3.0) / (2.0 * math.pi), rtol=1e-13)


def test_weight_rho_positive_inside_and_small_at_tip():
    for m, c in [(1, 1.0), (2, 1.0), (3, 0.7), (2, 2.3)]:
        cfg = AlgebraicConfig(c=c, m=m)
        a = star_geometry(cfg).arm_length
        vals = [weight_rho(cfg, t) for t in np.linspace(1e-6, a * (1 - 1e-6), 41)]
        assert min(vals) > 0.0
        assert weight_rho(cfg, a * (1 - 1e-10)) < 1e-4


def test_weight_rho_domain_errors():
    cfg = AlgebraicConfig(c=1.0, m=2)
    a = star_geometry(cfg).arm_length
    for t in [0.0, -1.0, a, 2 * a]:
        with pytest.raises(NotOnOpenArm):
            weight_rho(cfg, t)


def test_weight_total_mass_is_one_over_the_star():
    # (m+1) * int_0^a w dt = 1 for every configuration
    for m, c in [(1, 1.0), (2, 1.0), (3, 0.7), (2, 2.3), (4, 1.6)]:
        cfg = AlgebraicConfig(c=c, m=m)
        ts, ws, dens = _arm_density(cfg, 1, 96, 24)
        np.testing.assert_allclose((m + 1) * np.sum(dens * ws), 1.0, atol=MASS_TOL)


def test_weight_rho_j_two_is_twice_real_part():
    cfg = AlgebraicConfig(c=1.0, m=2)
    for t in [0.3, 0.8, 1.4]:
        plus, _ = boundary_values(cfg, t)
        np.testing.assert_allclose(
            weight_rho_j(cfg, 2, t), 2.0 * (1.0 / plus).real, rtol=1e-12
        )


def test_weight_rho_j_positive_and_index_domain():
    cfg = AlgebraicConfig(c=0.7, m=3)
    a = star_geometry(cfg).arm_length
    for j in (2, 3):
        assert min(weight_rho_j(cfg, j, t) for t in np.linspace(0.05 * a, 0.95 * a, 19)) > 0
    for j in (0, 1, 4):
        with pytest.raises(ValueError):
            weight_rho_j(cfg, j, 0.5 * a)


def test_weight_function_members_and_validation():
    cfg = AlgebraicConfig(c=1.0, m=2)
    base = WeightFunction(cfg)
    paired = WeightFunction(cfg, 1)
    t = 0.6
    np.testing.assert_allclose(base(t), weight_rho(cfg, t), rtol=1e-14)
    np.testing.assert_allclose(
        paired(t), weight_rho(cfg, t) * weight_rho_j(cfg, 2, t), rtol=1e-14
    )
    assert paired(1e-8) > 0  # finite (and positive) toward the origin
    lo, hi = base.support
    assert lo == 0.0 and hi == star_geometry(cfg).arm_length
    with pytest.raises(ValueError):
        WeightFunction(cfg, 2)


def test_markov_residual_frozen_examples():
    cfg1 = AlgebraicConfig(c=1.0, m=1)
    assert markov_residual(cfg1, 1, 3.0) <= 1e-8
    # sanity of the quantity itself: 1/omega_0(3) = 2/(3 + sqrt 5)
    w0 = solve_branches(cfg1, 3.0).omega[0]
    np.testing.assert_allclose(1.0 / w0, 2.0 / (3.0 + math.sqrt(5.0)), rtol=1e-12)
    assert markov_residual(AlgebraicConfig(c=1.0, m=2), 2, 2.0 + 1.0j) <= 1e-7


def test_markov_residual_far_field():
    cfg = AlgebraicConfig(c=1.0, m=1)
    a = star_geometry(cfg).arm_length
    assert markov_residual(cfg, 1, 100.0 * a) <= 1e-9


def test_markov_residual_random_exterior_points():
    rng = np.random.default_rng(11)
    for m, c in [(2, 1.0), (3, 0.7)]:
        cfg = AlgebraicConfig(c=c, m=m)
        a = star_geometry(cfg).arm_length
        done = 0
        while done < 6:
            z = complex(rng.uniform(-3 * a, 3 * a), rng.uniform(-3 * a, 3 * a))
            if min(abs(z - t * cmath.exp(2j * cmath.pi * k / (m + 1)))
                   for k in range(m + 1)
                   for t in np.linspace(0, a, 50)) <= 0.2 * a:
                continue
            j = int(rng.integers(1, m + 1))
            assert markov_residual(cfg, j, z) <= 1e-7
            done += 1


def test_markov_residual_inside_support_raises():
    cfg = AlgebraicConfig(c=1.0, m=2)
    a = star_geometry(cfg).arm_length
    with pytest.raises(InsideSupport):
        markov_residual(cfg, 1, 0.5 * a)
    with pytest.raises(InsideSupport):
        markov_residual(cfg, 1, 0.05 * a + 0.05j * a)


def test_rotated_star_moments_vanish_below_index():
    # sum_k d_k^{1-j} (t d_k)^nu integrates to zero for nu <= j-2
    for m, c in [(3, 0.7), (4, 1.2)]:
        cfg = AlgebraicConfig(c=c, m=m)
        for j in range(2, m + 1):
            ts, ws, dens = _arm_density(cfg, j, 64, 24)
            base = np.sum(dens * ws * ts ** np.arange(j - 1)[:, None], axis=1)
            for nu in range(j - 1):
                phase = sum(
                    cmath.exp(2j * cmath.pi * k * (nu + 1 - j) / (m + 1))
                    for k in range(m + 1)
                )
                assert abs(phase * base[nu]) <= 1e-8


def test_arm_moments_match_operator_moments():
    # (m+1) int t^nu rho_j = moment(T, nu, j) when nu = j-1 mod (m+1), else 0
    for m, c in [(2, 1.0), (3, 0.7)]:
        cfg = AlgebraicConfig(c=c, m=m)
        spec = OperatorSpec("T", cfg, 48)
        for j in range(1, m + 1):
            ts, ws, dens = _arm_density(cfg, j, 128, 24)
            for nu in range(9):
                want = moment(spec, nu, j)
                if (nu - j + 1) % (m + 1) == 0:
                    got = (m + 1) * float(np.sum(ts**nu * dens * ws))
                else:
                    got = 0.0
                    assert want == 0.0
                assert abs(got - want) <= MOMENT_TOL * max(1.0, abs(want))


def test_sigma_normalization():
    ones = lambda x: np.ones_like(x)
    for m, lam, mu in [(1, 1.0, 2.0), (2, 1.0, 1.0), (3, 1.2, 0.8), (2, 1.9, 1.0)]:
        p = QueueParams(lam, mu, m)
        np.testing.assert_allclose(sigma_apply(p, 0, ones), 1.0, atol=1e-8)
        for j in range(1, m):
            np.testing.assert_allclose(sigma_apply(p, j, ones), 0.0, atol=1e-8)


def test_sigma_monomials_match_generator_moments():
    p = QueueParams(1.0, 1.0, 2)
    spec = OperatorSpec("A", p, 40)
    for nu in range(7):
        got = sigma_apply(p, 1, lambda x, nu=nu: x**nu)
        want = moment(spec, nu, 2)
        np.testing.assert_allclose(got, want, rtol=MOMENT_TOL, atol=MOMENT_TOL)


def test_sigma_monomials_all_indices():
    for m, lam, mu in [(1, 1.0, 2.0), (3, 1.2, 0.8)]:
        p = QueueParams(lam, mu, m)
        spec = OperatorSpec("A", p, 48)
        for j in range(m):
            for nu in range(9):
                got = sigma_apply(p, j, lambda x, nu=nu: x**nu)
                want = moment(spec, nu, j + 1)
                np.testing.assert_allclose(got, want, rtol=MOMENT_TOL, atol=MOMENT_TOL)


def test_sigma_scalar_callable_fallback():
    p = QueueParams(1.0, 2.0, 1)
    got = sigma_apply(p, 0, lambda x: complex(x) ** 2)
    want = moment(OperatorSpec("A", p, 40), 2, 1)
    np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-8)


def test_spectral_functional_binding_and_validation():
    p = QueueParams(1.0, 1.0, 2)
    sf = SpectralFunctional(p, 1)
    np.testing.assert_allclose(sf(lambda x: x), moment(OperatorSpec("A", p, 40), 1, 2), atol=1e-8)
    with pytest.raises(ValueError):
        SpectralFunctional(p, 2)
    with pytest.raises(ValueError):
        sigma_apply(p, -1, lambda x: x)


def test_integrated_biorthogonality_small_block():
    # sum_j sigma_j(Q_n * q_{j,r}) = delta_{n,r}
    p = QueueParams(1.0, 2.0, 2)
    for n in range(5):
        qn = q_poly(p, n)
        for r in range(5):
            dv = dual_vector(p, r)
            acc = 0.0
            for j in range(p.m):
                comp = dv.components[j]
                acc += sigma_apply(p, j, lambda x, qn=qn, comp=comp: qn(x) * comp(x))
            np.testing.assert_allclose(acc, 1.0 if n == r else 0.0, atol=1e-6)


def test_star_quadrature_frozen_m1():
    rule = star_quadrature(AlgebraicConfig(c=1.0, m=1), 2)
    np.testing.assert_allclose(rule.zeros, [1.0], atol=1e-12)
    np.testing.assert_allclose(sorted(rule.nodes.ravel().real), [-1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(rule.weights, 1.0, atol=1e-12)
    np.testing.assert_allclose(rule.weights.sum(), 2.0, rtol=1e-12)
    assert rule.exactness_degree == 3


def test_star_quadrature_mass():
    # total mass (m+1)c for both index residues, c != 1 included
    for m, c, n in [(2, 1.0, 6), (2, 1.0, 7), (3, 0.7, 13), (1, 2.5, 9),
                    (2, 1.3, 9), (3, 0.7, 12), (1, 1.3, 6)]:
        rule = star_quadrature(AlgebraicConfig(c=c, m=m), n)
        assert np.all(rule.weights > 0)
        np.testing.assert_allclose(rule.weights.sum(), (m + 1) * c, rtol=1e-10)


def test_star_quadrature_moments_exact_within_degree_bound():
    for m, c in [(1, 1.3), (2, 1.3), (3, 0.7)]:
        cfg = AlgebraicConfig(c=c, m=m)
        spec = OperatorSpec("T", cfg, 200)
        for n in range(m + 1, 3 * (m + 1) + 1):
            rule = star_quadrature(cfg, n)
            s = n % (m + 1)
            for sp in range(rule.exactness_degree + 1):
                nu = sp + s
                if nu % (m + 1):
                    continue  # both sides vanish structurally
                want = moment(spec, nu, 1)
                got = rule.monomial_moment(nu)
                assert abs(got - want) <= 1e-9 * max(1.0, abs(want)), (m, c, n, nu)


def test_star_quadrature_degree_bound_is_sharp():
    for m, c, n in [(1, 1.3, 7), (2, 1.3, 11), (3, 0.7, 14)]:
        cfg = AlgebraicConfig(c=c, m=m)
        spec = OperatorSpec("T", cfg, 200)
        rule = star_quadrature(cfg, n)
        s = n % (m + 1)
        sp = rule.exactness_degree + 1
        while (sp + s) % (m + 1):
            sp += 1
        nu = sp + s
        want = moment(spec, nu, 1)
        assert abs(rule.monomial_moment(nu) - want) > 1e-6 * max(1.0, abs(want))


def test_star_quadrature_preconditions():
    with pytest.raises(ValueError):
        star_quadrature(AlgebraicConfig(c=1.0, m=2), 2)
    with pytest.raises(ValueError):
        star_quadrature(AlgebraicConfig(c=1.0, m=1), 2).monomial_moment(-1)


def test_quadrature_rule_is_frozen_dataclass():
    rule = star_quadrature(AlgebraicConfig(c=1.0, m=1), 4)
    assert isinstance(rule, QuadratureRule)
    with pytest.raises(AttributeError):
        rule.n = 5
    with pytest.raises(ValueError):
        rule.weights[0, 0] = 2.0


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
