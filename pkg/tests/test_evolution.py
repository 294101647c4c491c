from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbmsteer.errors import DomainError, HypothesisError
from fbmsteer.evolution import (
    EvolutionFamily,
    Potential,
    TimeVaryingGenerator,
    continuity_probe,
    smoothing_check,
    stability_margin,
)
from fbmsteer.fbm import TimeGrid
from fbmsteer.spectral import SpectralField, basis


def family(potential, n=6):
    return EvolutionFamily(TimeVaryingGenerator(n, potential))


class TestPotential:
    def test_periodic_bounds(self):
        p = Potential.periodic(1.0, 0.5)
        ts = np.linspace(0, 2, 101)
        vals = np.array([p(t) for t in ts])
        assert vals.max() <= -1.0 and vals.min() >= -1.5
        assert p.sup_abs == 1.5

    @pytest.mark.parametrize("gamma", [0.0, -1.0])
    def test_nonpositive_gamma(self, gamma):
        with pytest.raises(HypothesisError) as exc:
            Potential.periodic(gamma, 0.1)
        assert exc.value.hypothesis == "H.1"

    def test_constant_positive_value_violates_h1(self):
        with pytest.raises(HypothesisError):
            Potential.constant(0.5)

    def test_integral(self):
        p = Potential.periodic(1.0, 0.5)
        # int_0^1 (-1 - 0.5 sin^2(pi t)) dt = -1.25
        assert p.integral(0.0, 1.0) == pytest.approx(-1.25, abs=1e-12)

    def test_generator_bound_check(self):
        gen = TimeVaryingGenerator(3, Potential(lambda t: -0.5, 1.0, 0.5, label="too-weak"))
        with pytest.raises(HypothesisError):
            gen.check_bound([0.0, 0.5])


class TestEvolutionFamily:
    def test_constant_potential_closed_form(self):
        fam = family(Potential.constant(-1.0))
        x = np.arange(1.0, 7.0)
        n2 = np.arange(1, 7) ** 2
        out = fam.evolution_apply(0.7, 0.2, x).coefficients
        np.testing.assert_allclose(out, np.exp(-(n2 + 1) * 0.5) * x, rtol=1e-14)

    def test_identity_exact(self):
        fam = family(Potential.periodic(1.0, 0.5))
        x = np.random.default_rng(0).standard_normal(6)
        np.testing.assert_array_equal(fam.evolution_apply(0.3, 0.3, x).coefficients, x)

    @pytest.mark.parametrize("t,s", [(0.2, 0.5), (0.5, -0.1)])
    def test_domain(self, t, s):
        with pytest.raises(DomainError):
            family(Potential.constant(-1.0)).evolution_apply(t, s, np.ones(6))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 2), min_size=3, max_size=3))
    def test_composition_time_varying(self, ts):
        r, s, t = sorted(ts)
        fam = family(Potential.periodic(1.0, 0.5))
        x = np.linspace(-1, 1, 6)
        lhs = fam.evolution_apply(t, s, fam.evolution_apply(s, r, x)).coefficients
        rhs = fam.evolution_apply(t, r, x).coefficients
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(np.linalg.norm(rhs), 1e-300)

    def test_semigroup(self):
        fam = family(Potential.constant(-1.0))
        x = np.ones(6)
        np.testing.assert_allclose(fam.semigroup_apply(0.3, x).coefficients,
                                   np.exp(-np.arange(1, 7) ** 2 * 0.3), rtol=1e-15)
        with pytest.raises(DomainError):
            fam.semigroup_apply(-1.0, x)

    def test_generator_norm_bound(self):
        gen = TimeVaryingGenerator(5, Potential.periodic(1.0, 0.5))
        for s in (0.0, 0.3, 0.5):
            A = np.column_stack([gen.apply(s, e) for e in np.eye(5)])
            assert np.linalg.norm(A, 2) <= gen.operator_norm_bound() + 1e-12
            assert np.linalg.norm(np.linalg.inv(A), 2) <= gen.inverse_norm_bound() + 1e-12

    def test_spatial_potential_reduces_to_temporal(self):
        flat = Potential(lambda t, z: -1.0 - 0.5 * math.sin(math.pi * t) ** 2 + 0.0 * z, 1.0, 1.5, spatial=True)
        a = family(flat).evolution_apply(0.8, 0.1, np.ones(6)).coefficients
        b = family(Potential.periodic(1.0, 0.5)).evolution_apply(0.8, 0.1, np.ones(6)).coefficients
        np.testing.assert_allclose(a, b, rtol=1e-10)

    def test_continuity(self):
        fam = family(Potential.periodic(1.0, 0.5))
        diffs = [d for _, d in continuity_probe(fam, 0.4, 0.1, np.ones(6))]
        assert all(b < a for a, b in zip(diffs, diffs[1:]))
        assert diffs[-1] < 1e-4


class TestStability:
    def test_default_bound(self):
        fam = family(Potential.periodic(1.0, 0.5), n=8)
        rng = np.random.default_rng(1)
        probes = [(t, s, rng.standard_normal(8)) for s, t in np.sort(rng.uniform(0, 1, (50, 2)), axis=1)]
        rep = stability_margin(fam, probes)
        assert rep.ok and rep.n_probes == 50 and rep.worst_normalized <= 1.0 + 1e-12

    def test_equality_case(self):
        # b = -1, x = e_1, t - s = 1: ||U x|| = e^{-2} exactly at the bound
        fam = family(Potential.constant(-1.0), n=3)
        rep = stability_margin(fam, [(1.0, 0.0, np.eye(3)[0])])
        assert rep.ok and rep.worst_ratio == pytest.approx(math.exp(-2), rel=1e-12)
        assert rep.worst_normalized == pytest.approx(1.0, rel=1e-12)

    def test_violations_are_counted(self):
        fam = family(Potential.constant(-1.0))
        fam.beta = 5.0  # claims more decay than the family has
        probes = [(1.0, 0.0, np.eye(6)[0]), (0.5, 0.1, np.eye(6)[0])]
        assert stability_margin(fam, probes).violations == 2

    @pytest.mark.parametrize("delta", [0.01, 0.1, 1.0])
    def test_smoothing(self, delta):
        (d, sup, bound, ok), = smoothing_check([delta], 8)
        assert ok and sup <= bound
        n2 = np.arange(1, 9) ** 2
        assert sup == pytest.approx(np.max(n2 * np.exp(-n2 * delta)))


@pytest.fixture(scope="module")
def prop():
    return family(Potential.periodic(1.0, 0.5), n=4).propagator(TimeGrid.uniform(1.0, 40))


class TestGridPropagator:
    def test_cached_per_grid(self, prop):
        assert prop.family.propagator(TimeGrid.uniform(1.0, 40)) is prop

    def test_from_index_matches_direct(self, prop):
        x = np.array([1.0, -1.0, 0.5, 2.0])
        rows = prop.from_index(10, x)
        for k in (10, 25, 40):
            direct = prop.family.evolution_apply(prop.t[k], prop.t[10], x).coefficients
            np.testing.assert_allclose(rows[k - 10], direct, rtol=1e-11)

    def test_trapz_matches_weighted_sum(self, prop):
        H = np.cos(np.outer(prop.t, np.arange(1, 5)))
        S = prop.trapz(H)
        k = 31
        w = TimeGrid(prop.t[: k + 1]).trapezoid_weights()
        direct = (w[:, None] * prop.transfer(k, np.arange(k + 1), H[: k + 1])).sum(axis=0)
        np.testing.assert_allclose(S[k], direct, rtol=1e-12)

    def test_trapz_converges_to_integral(self):
        # int_0^1 e^{-(1+1)(1-s)} ds for mode 1 with b = -1
        exact = (1 - math.exp(-2.0)) / 2.0
        errs = []
        for K in (64, 128):
            p = family(Potential.constant(-1.0), n=1).propagator(TimeGrid.uniform(1.0, K))
            errs.append(abs(p.trapz(np.ones((K + 1, 1)))[-1, 0] - exact))
        assert errs[1] < errs[0] / 3.9

    def test_terminal_matrices_diagonal(self, prop):
        Phi = prop.terminal_matrices()
        assert Phi.shape == (41, 4, 4)
        np.testing.assert_array_equal(Phi[-1], np.eye(4))
        off = Phi - np.einsum("jaa->ja", Phi)[:, :, None] * np.eye(4)
        assert np.all(off == 0.0)

    def test_spatial_loops_match_diagonal(self):
        g = TimeGrid.uniform(1.0, 12)
        flat = Potential(lambda t, z: -1.0 + 0.0 * z, 1.0, 1.0, spatial=True)
        a = family(flat, n=3).propagator(g)
        b = family(Potential.constant(-1.0), n=3).propagator(g)
        H = np.sin(np.outer(g.points, [1.0, 2.0, 3.0]))
        np.testing.assert_allclose(a.trapz(H), b.trapz(H), rtol=1e-10, atol=1e-14)
        dB = np.cos(np.outer(g.points[:-1], [1.0, 2.0, 3.0]))
        np.testing.assert_allclose(a.left(H, dB), b.left(H, dB), rtol=1e-10, atol=1e-14)


class TestSpectral:
    @given(st.integers(1, 12))
    def test_nodal_round_trip(self, n):
        x = np.linspace(-1, 1, n)
        B = basis(n)
        np.testing.assert_allclose(B.from_nodal(B.to_nodal(x)), x, atol=1e-13)

    def test_multiply_by_constant(self):
        B = basis(5)
        x = np.arange(5.0)
        np.testing.assert_allclose(B.multiply(x, np.full(B.n_nodes, 3.0)), 3 * x, atol=1e-13)

    def test_nodal_values_are_sine_series(self):
        f = SpectralField.mode(2, 4)
        z = basis(4).nodes
        np.testing.assert_allclose(f.nodal(), math.sqrt(2 / math.pi) * np.sin(2 * z), atol=1e-15)

    def test_field_arithmetic(self):
        a, b = SpectralField([1.0, 2.0]), SpectralField([0.5, -1.0])
        assert (a + b).allclose(SpectralField([1.5, 1.0]))
        assert (a - b).norm() == pytest.approx(math.hypot(0.5, 3.0))
