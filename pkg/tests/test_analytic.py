import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from sbm_contagion import analytic, bundled
from sbm_contagion.analytic import (
    EmptyShockSet,
    InvalidTolerance,
    NegativeRate,
    NonPositiveDirection,
    NotARoot,
    System,
)
from sbm_contagion.model import Atom, ModelSpec, apply_shock, validate_spec

from conftest import (
    creditor_only,
    debtor_dependent,
    random_spec,
    reduced_creditor_only,
    reduced_debtor_dependent,
    single_type,
    two_subsystems,
)


def brute_force_pmf(x, kmax):
    """Enumerate every count vector with ``sum s * n_s <= kmax``."""
    R = len(x)
    out = np.zeros(kmax + 1)
    ranges = [range(kmax // s + 1) for s in range(1, R + 1)]
    for counts in itertools.product(*ranges):
        k = sum(s * n for s, n in zip(range(1, R + 1), counts))
        if k <= kmax:
            out[k] += np.prod([stats.poisson.pmf(n, lam) for n, lam in zip(counts, x)])
    return out


def closed_form_debtor_dependent(z, p=1 / 3):
    """``f`` in the reduced coordinates, written out by hand."""
    z1, z2 = z
    psi1 = 1 - math.exp(-2 * z1 - 2 * z2) * (1 + 2 * z2)
    psi2 = 1 - math.exp(-2 * (z1 + z2)) * (1 + 2 * (z1 + z2))
    return np.array([2 * p * psi1 - z1, 2 * (1 - p) * psi2 - z2])


rates = st.lists(st.floats(0, 4, allow_subnormal=False), min_size=1, max_size=3)


class TestCompoundPoisson:
    @settings(max_examples=60, deadline=None)
    @given(x=rates, kmax=st.integers(0, 12))
    def test_matches_brute_force(self, x, kmax):
        np.testing.assert_allclose(analytic.compound_poisson_pmf(x, kmax), brute_force_pmf(x, kmax), rtol=0, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(x=st.lists(rates, min_size=1, max_size=4).filter(lambda rows: len({len(r) for r in rows}) == 1),
           kmax=st.integers(0, 15))
    def test_panjer_matches_convolution(self, x, kmax):
        x = np.array(x)
        np.testing.assert_allclose(
            analytic._panjer_cdf(x, kmax), np.cumsum(analytic.compound_poisson_pmf(x, kmax), axis=-1), atol=1e-14
        )

    def test_single_impact_is_poisson(self):
        np.testing.assert_allclose(analytic.compound_poisson_pmf([1.7], 10), stats.poisson.pmf(np.arange(11), 1.7), atol=1e-15)

    def test_negative_rate_rejected(self):
        with pytest.raises(NegativeRate):
            analytic.compound_poisson_pmf([0.5, -1e-3], 4)
        with pytest.raises(NegativeRate):
            analytic.psi(1, [-1.0])


class TestPsi:
    def test_boundary_values(self):
        assert analytic.psi(0, [0.3, 0.2]) == 1.0
        assert analytic.psi(math.inf, [5.0]) == 0.0
        assert analytic.psi(3, [0.0, 0.0]) == 0.0

    def test_two_impact_value(self):
        # P(Poi(a) + 2 Poi(b) >= 2) = 1 - e^{-a-b} (1 + a)
        a, b = 0.4, 0.7
        assert analytic.psi(2, [a, b]) == pytest.approx(1 - math.exp(-a - b) * (1 + a), abs=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(x=rates, ell=st.integers(1, 8), bump=st.floats(0, 1))
    def test_monotone_in_rates_and_level(self, x, ell, bump):
        p = analytic.psi(ell, x)
        assert 0.0 <= p <= 1.0
        assert analytic.psi(ell + 1, x) <= p + 1e-15
        assert analytic.psi(ell, np.array(x) + bump) >= p - 1e-15


class TestZetaAndSupport:
    def test_debtor_dependent_zeta(self):
        z = analytic.zeta(debtor_dependent())
        expect = np.zeros((2, 2, 2))
        expect[1, 0, 0] = expect[0, 1, 0] = 2 / 3
        expect[0, 0, 1] = expect[0, 1, 1] = 4 / 3
        np.testing.assert_allclose(z, expect, atol=1e-15)
        assert analytic.support(debtor_dependent()) == {(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 1, 1)}

    def test_two_subsystems_zeta(self):
        z = analytic.zeta(two_subsystems(2.0, 1.0, 2.0))
        np.testing.assert_allclose(z[0], [[2.0, 1.0], [1.0, 1.0]])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_zeta_bounds_phi(self, seed):
        spec = validate_spec(random_spec(np.random.default_rng(seed)))
        sys_ = System(spec)
        big = np.full(sys_.shape, 50.0)
        assert np.all(sys_.phi(big) <= sys_.zeta + 1e-12)


class TestEvaluation:
    @pytest.mark.parametrize("z", [(0.0, 0.0), (0.2, 0.3), (0.601, 1.153), (0.6, 0.05)])
    def test_reduced_debtor_dependent(self, z):
        f = analytic.f_eval(debtor_dependent(), reduced_debtor_dependent(z))
        expect = closed_form_debtor_dependent(z)
        assert f[1, 0, 0] == pytest.approx(expect[0], abs=1e-14)
        assert f[0, 1, 0] == pytest.approx(expect[0], abs=1e-14)
        assert f[0, 0, 1] == pytest.approx(expect[1], abs=1e-14)
        assert f[0, 1, 1] == pytest.approx(expect[1], abs=1e-14)

    def test_g_weightings(self, rng):
        spec = validate_spec(random_spec(rng, R=2, T=2, atoms=3))
        z = 0.3 * analytic.zeta(spec)
        ones = ModelSpec(spec.R, spec.T, [a.replace(importance=1.0) for a in spec.atoms])
        assert analytic.g_eval(ones, z, "importance") == pytest.approx(analytic.g_eval(ones, z), abs=1e-15)
        total = analytic.g_eval(spec, z)
        parts = analytic.g_eval(spec, z, vtype=1) + analytic.g_eval(spec, z, vtype=2)
        assert parts == pytest.approx(total, abs=1e-15)
        with pytest.raises(ValueError):
            analytic.g_eval(spec, z, "mass")

    def test_g_counts_capital_zero_and_never_infinite(self):
        spec = ModelSpec(1, 1, [Atom(0.25, 1, [[1]], [[1]], 0), Atom(0.75, 1, [[1]], [[1]], math.inf)])
        assert analytic.g_eval(spec, np.full((1, 1, 1), 10.0)) == pytest.approx(0.25)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), lo=st.floats(0, 1), gap=st.floats(0, 1))
    def test_phi_is_monotone(self, seed, lo, gap):
        rng = np.random.default_rng(seed)
        spec = validate_spec(random_spec(rng, zero_capital=True))
        sys_ = System(spec)
        a = lo * rng.random(sys_.shape) * sys_.zeta
        b = a + gap * rng.random(sys_.shape) * sys_.zeta
        assert np.all(sys_.phi(b) >= sys_.phi(a) - 1e-14)


class TestDirectionalDerivative:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(20):
            spec = validate_spec(random_spec(rng, zero_capital=True))
            sys_ = System(spec)
            # interior points: rates are clamped at 0, so f has a kink on the boundary
            z = (0.05 + rng.random(sys_.shape)) * (sys_.zeta + 0.1)
            v = rng.uniform(-1, 1, sys_.shape)
            exact = analytic.directional_derivative(spec, z, v)
            for h in (1e-6, 1e-5):
                fd = (sys_.f(z + h * v) - sys_.f(z - h * v)) / (2 * h)
                worst = max(worst, float(np.max(np.abs(exact - fd))))
        assert worst <= 1e-5

    def test_debtor_dependent_slope_at_zero(self):
        spec = debtor_dependent()
        e = np.zeros((2, 2, 2))
        e[1, 0, 0] = 1.0
        assert analytic.directional_derivative(spec, np.zeros((2, 2, 2)), e)[1, 0, 0] == pytest.approx(1 / 3, abs=1e-14)

    def test_creditor_only_slopes_at_zero(self):
        d = analytic.directional_derivative(creditor_only(), np.zeros((2, 2, 2)), reduced_creditor_only((1.0, 1.0)))
        assert d[0, 0, 0] == pytest.approx(-1 / 9, abs=1e-12)
        assert d[0, 0, 1] == pytest.approx(-1.0, abs=1e-12)

    def test_rejects_nonfinite_direction(self):
        with pytest.raises(ValueError):
            analytic.directional_derivative(debtor_dependent(), np.zeros((2, 2, 2)), np.full((2, 2, 2), np.nan))

    def test_jacobian_consistent_with_directional(self, rng):
        spec = validate_spec(random_spec(rng, R=2, T=2, atoms=3))
        sys_ = System(spec)
        z = 0.4 * sys_.zeta
        v = rng.random(sys_.shape)
        np.testing.assert_allclose(sys_.jacobian_phi(z) @ v.ravel(), sys_.dphi_dir(z, v).ravel(), atol=1e-13)


class TestFixedPoints:
    @pytest.mark.parametrize("q", [0.05, 0.1, 0.3])
    def test_scalar_against_bisection(self, q):
        spec = apply_shock(single_type(1.0, 1.0, 1, q, R=1))
        root = optimize.brentq(lambda z: q + (1 - q) * (1 - math.exp(-z)) - z, 1e-9, 1.0, xtol=1e-15)
        lo = analytic.least_fixed_point(spec)
        assert lo.converged
        assert lo.z[0, 0, 0] == pytest.approx(root, abs=1e-8)
        assert analytic.greatest_fixed_point(spec).z[0, 0, 0] == pytest.approx(root, abs=1e-8)

    def test_unshocked_least_root_is_zero(self):
        fp = analytic.least_fixed_point(debtor_dependent())
        assert fp.iterations == 1 and np.all(fp.z == 0)

    def test_z_star_debtor_dependent_matches_closed_form(self):
        zs = analytic.z_star(debtor_dependent()).z
        red = (zs[1, 0, 0], zs[0, 0, 1])
        sol = optimize.fsolve(closed_form_debtor_dependent, red, xtol=1e-14)
        np.testing.assert_allclose(red, sol, atol=1e-7)
        assert np.max(np.abs(closed_form_debtor_dependent(sol))) < 1e-12

    def test_greatest_dominates_every_root(self):
        spec = debtor_dependent()
        hi = analytic.greatest_fixed_point(spec).z
        zs = analytic.z_star(spec).z
        assert np.all(hi >= zs - 1e-9)
        assert np.all(hi <= analytic.zeta(spec) + 1e-12)

    def test_shifted_roots_increase_with_eps_and_dominate(self):
        spec = apply_shock(debtor_dependent(q=1e-3))
        hat = analytic.least_fixed_point(spec).z
        prev = None
        for eps in [1e-8, 1e-6, 1e-4, 1e-2]:
            z = analytic.least_fixed_point(spec, eps).z
            assert np.all(z >= hat - 1e-12)
            if prev is not None:
                assert np.all(z >= prev - 1e-12)
            prev = z
        assert np.all(analytic.z_star(spec).z >= hat - 1e-9)

    def test_z_zero_full_set_equals_z_star(self):
        spec = debtor_dependent()
        full = analytic.z_zero(spec, analytic.support(spec)).z
        np.testing.assert_allclose(full, analytic.z_star(spec).z, atol=1e-6)

    def test_z_zero_on_a_resilient_type(self):
        # shocks only towards the creditor-only system's type-2 debts stay contained
        spec = creditor_only()
        z0 = analytic.z_zero(spec, {(0, 0, 1)})
        assert z0.converged and np.max(z0.z) < 1e-6

    def test_invalid_arguments(self):
        spec = debtor_dependent()
        with pytest.raises(InvalidTolerance):
            analytic.least_fixed_point(spec, tol=0)
        with pytest.raises(EmptyShockSet):
            analytic.z_zero(spec, set())
        with pytest.raises(ValueError):
            analytic.z_zero(spec, {(0, 0, 0)})

    def test_max_iterations_reports_partial_result(self):
        with pytest.raises(analytic.MaxIterations) as info:
            analytic.least_fixed_point(apply_shock(debtor_dependent(q=0.01)), max_iter=2)
        assert info.value.result.iterations == 2

    def test_eps_schedule(self):
        s = analytic.eps_schedule(1e-2, 1e-10)
        assert s[0] == 1e-2 and s[-1] == 1e-10
        assert all(b == a / 2 for a, b in zip(s[:-2], s[1:-1]))


class TestCertificates:
    def test_unique_root_certified(self):
        spec = apply_shock(bundled.load("two_impact_unique_root"))
        hat = analytic.least_fixed_point(spec).z
        cert = analytic.check_root_is_zstar(spec, hat, np.ones(hat.shape))
        assert cert.holds
        assert analytic.z_star(spec).z == pytest.approx(hat, abs=1e-6)

    def test_integral_mode_agrees_at_a_simple_root(self):
        spec = apply_shock(bundled.load("two_impact_unique_root"))
        hat = analytic.least_fixed_point(spec).z
        cert = analytic.check_root_is_zstar(spec, hat, np.ones(hat.shape), "integral")
        assert cert.holds and cert.kappa < 1

    def test_non_root_and_bad_direction_rejected(self):
        spec = debtor_dependent()
        with pytest.raises(NotARoot):
            analytic.check_root_is_zstar(spec, np.full((2, 2, 2), 0.1), 1.0)
        with pytest.raises(NonPositiveDirection):
            analytic.check_root_is_zstar(spec, np.zeros((2, 2, 2)), 0.0)
        with pytest.raises(ValueError):
            analytic.check_root_is_zstar(spec, np.zeros((2, 2, 2)), 1.0, "hessian")

    def test_unstable_root_not_certified(self):
        cert = analytic.find_certificate(debtor_dependent(), np.zeros((2, 2, 2)))
        assert not cert.holds
        assert analytic.spectral_radius(debtor_dependent(), np.zeros((2, 2, 2))) > 1

    def test_neumann_direction_certifies_when_ones_fail(self):
        # Jacobian at 0 is [[0, 1.8], [0.025, 0]]: a row sum above one, yet rho = 0.21
        spec = ModelSpec(1, 2, [Atom(0.5, 1, [[0.0, 1.8]], [[0.0, 2.0]], 1), Atom(0.5, 2, [[0.05, 0.0]], [[1.0, 0.0]], 1)])
        zero = np.zeros((1, 2, 2))
        assert not analytic.check_root_is_zstar(spec, zero, np.ones((1, 2, 2))).holds
        assert analytic.spectral_radius(spec, zero) == pytest.approx(math.sqrt(1.8 * 0.025), abs=1e-12)
        assert analytic.find_certificate(spec, zero).holds


class TestResilience:
    def test_creditor_only_resilient_with_certificate(self):
        rep = analytic.classify_resilience(creditor_only())
        assert rep.verdict == analytic.RESILIENT
        assert rep.certificate is not None and rep.certificate.holds

    def test_debtor_dependent_non_resilient(self):
        rep = analytic.classify_resilience(debtor_dependent(), shock_sets=[{(1, 0, 0)}])
        assert rep.verdict == analytic.NON_RESILIENT
        assert rep.g_star > 0.5
        (bound,) = rep.lower_bounds.values()
        assert bound["g"] == pytest.approx(rep.g_star, abs=1e-6)

    def test_shock_probabilities_are_ignored(self):
        a = analytic.classify_resilience(creditor_only(q=0.0))
        b = analytic.classify_resilience(creditor_only(q=0.2))
        assert a.verdict == b.verdict == analytic.RESILIENT

    def test_capital_zero_base_rejected(self):
        spec = ModelSpec(1, 1, [Atom(0.5, 1, [[1]], [[1]], 0), Atom(0.5, 1, [[1]], [[1]], 2)])
        with pytest.raises(analytic.InitialDefaults):
            analytic.classify_resilience(spec)


class TestSubsystemCriteria:
    @pytest.mark.parametrize("z", [1e-4, 0.01, 0.3])
    def test_margin_closed_form(self, z):
        w = 1.5
        spec = two_subsystems(2.0, w, 0.5)
        assert analytic.subsystem_margin(spec, 2, z) == pytest.approx(w**3 * z * math.exp(-w * z), rel=1e-12)
        assert analytic.subsystem_margin(spec, 1, z) == pytest.approx(4.0 * math.exp(-2 * z), rel=1e-12)

    def test_margin_requires_single_impact(self):
        with pytest.raises(analytic.MultiImpactUnsupported):
            analytic.subsystem_margin(debtor_dependent(), 1, 0.1)

    @pytest.mark.parametrize("w3, K", [(2.0, 2.0), (0.5, 0.5), (0.0, 0.0)])
    def test_cross_weight_bound(self, w3, K):
        assert analytic.cross_weight_bound(two_subsystems(2.0, 1.0, w3)) == pytest.approx(K)

    def test_cross_weight_unbounded_without_internal_weight(self):
        spec = ModelSpec(1, 2, [Atom(0.5, 1, [[0.0, 1.0]], [[1.0, 1.0]], 2), Atom(0.5, 2, [[1.0, 1.0]], [[1.0, 1.0]], 2)])
        assert analytic.cross_weight_bound(spec) == math.inf
        assert not analytic.combined_resilience_condition(spec)["holds"]

    def test_combined_condition(self):
        weak = two_subsystems(0.5, 0.5, 0.1)
        assert analytic.combined_resilience_condition(weak)["holds"]
        assert not analytic.combined_resilience_condition(two_subsystems(2.0, 1.0, 2.0))["holds"]


class TestRootSets:
    def test_one_dimensional_crossing(self):
        q = 0.1
        spec = apply_shock(single_type(1.0, 1.0, 1, q, R=1))
        axis = analytic.AxisMap([np.ones((1, 1, 1))], [("f", (0, 0, 0))])
        (line,) = analytic.rootset_scan(spec, axis, 0.0, 1.0, 101)
        root = optimize.brentq(lambda z: q + (1 - q) * (1 - math.exp(-z)) - z, 1e-9, 1.0)
        # linear interpolation error is at most h^2 max|f''| / 8
        assert line.points[0, 0] == pytest.approx(root, abs=0.01**2 / 8)

    def test_two_dimensional_points_lie_on_zero_set(self):
        doc = bundled.load_document("two_impact_resilient")
        spec = apply_shock(bundled.spec_of(doc))
        axis = analytic.axis_map_from_dict(doc["rootset"], spec.R, spec.T)
        lines = analytic.rootset_scan(spec, axis, 0.0, 2.0, 201)
        assert {pl.label for pl in lines} == {"f1", "f2"}
        sys_ = System(spec)
        for pl in lines:
            coord = dict(axis.functions)[pl.label]
            vals = [sys_.f(axis.point(sys_.shape, p))[coord] for p in pl.points]
            assert np.max(np.abs(vals)) < 1e-3

    def test_no_crossing_raises(self):
        spec = apply_shock(single_type(1.0, 1.0, 1, 0.1, R=1))
        axis = analytic.AxisMap([np.ones((1, 1, 1))], [("f", (0, 0, 0))])
        with pytest.raises(analytic.GridTooCoarse):
            analytic.rootset_scan(spec, axis, 0.0, 0.05, 11)

    def test_tie(self):
        d = analytic.tie((1, 2, 2), {(0, 0, 0): 1.0, (0, 1, 0): 0.5})
        assert d.sum() == 1.5 and d[0, 1, 0] == 0.5

    def test_contours_csv(self, tmp_path):
        pl = analytic.Polyline("f1", 0, np.array([[0.1, 0.2], [0.3, 0.4]]))
        path = tmp_path / "c.csv"
        analytic.write_contours_csv([pl], path, ["seed=0"])
        assert path.read_text().splitlines() == ["# seed=0", "function_label,segment_id,z1,z2", "f1,0,0.1,0.2", "f1,0,0.3,0.4"]
