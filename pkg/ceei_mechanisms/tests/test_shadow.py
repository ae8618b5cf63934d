"""
Tests for shadow costs.
"""

import numpy as np
import pytest

from ..core.closed_forms import uniform_quantities, uniform_shadow_costs
from ..core.measures import SimplexPointSet, build_measure
from ..core.model import IidModel, UniformSquare
from ..core.shadow import (
    ShadowCostError,
    ShadowInvariantError,
    SingularShadowSystemError,
    UnsupportedMethodError,
    assemble_J,
    region_moments,
    shadow_costs,
    solve_shadow_costs,
    switching_densities,
)


@pytest.fixture(scope="module")
def uniform_quadrature():
    """Exact backend for the uniform square."""
    return build_measure(UniformSquare(), "quadrature")


class TestUniformShadowCosts:
    """Test shadow costs of the uniform square against closed forms."""

    @pytest.mark.parametrize("convention", ["barycentric", "switching"])
    def test_symmetric(self, uniform_quadrature, convention):
        """Test c = (2/3, 2/3) at equal quantities."""
        report = shadow_costs(uniform_quadrature, (1.0, 1.0), "geometric", convention)
        assert report.c == pytest.approx([2.0 / 3.0, 2.0 / 3.0], abs=1e-10)

    @pytest.mark.parametrize("t0", [0.6, 0.75])
    @pytest.mark.parametrize("convention", ["barycentric", "switching"])
    def test_asymmetric(self, uniform_quadrature, t0, convention):
        """Test c(t₀) against the rational closed forms."""
        report = shadow_costs(uniform_quadrature, uniform_quantities(t0), "geometric", convention)
        assert report.c == pytest.approx(uniform_shadow_costs(t0, convention), abs=1e-10)

    def test_costs_at_t0_three_quarters(self, uniform_quadrature):
        """Test c at t₀ = 0.75 under both conventions."""
        barycentric = shadow_costs(uniform_quadrature, (1.0, 3.0), "geometric", "barycentric").c
        switching = shadow_costs(uniform_quadrature, (1.0, 3.0), "geometric", "switching").c
        assert barycentric == pytest.approx([1.2260, 0.5405], abs=1e-4)
        assert switching == pytest.approx([1.1515, 0.5455], abs=1e-4)

    def test_scale_invariance(self, uniform_quadrature):
        """Test that c depends on q only through t₀."""
        first = shadow_costs(uniform_quadrature, (0.3, 0.45), "geometric", "barycentric").c
        second = shadow_costs(uniform_quadrature, (1.0, 1.5), "geometric", "barycentric").c
        assert first == pytest.approx(second, rel=1e-10)

    def test_stationarity_residual(self, uniform_quadrature):
        """Test that A − Jc vanishes."""
        report = shadow_costs(uniform_quadrature, (1.0, 1.5))
        assert np.max(np.abs(report.stationarity_residual)) < 1e-12
        assert report.diag_dominance_margin > 0.0


class TestSwitchingDensities:
    """Test the switching density methods."""

    @pytest.mark.parametrize("convention", ["barycentric", "switching"])
    def test_finite_difference_matches_geometric(self, uniform_quadrature, convention):
        """Test finite differences of region masses against the interface formula."""
        q = np.array([0.3, 0.45])
        geometric = switching_densities(uniform_quadrature, q, "geometric", convention)
        numeric = switching_densities(uniform_quadrature, q, "finite_difference", convention, fd_step=1e-4)
        assert numeric == pytest.approx(geometric, rel=1e-5)

    def test_switching_value(self, uniform_quadrature):
        """Test T₁₂ at t₀ = 0.6 under both conventions."""
        q = np.array([0.3, 0.45])
        assert switching_densities(uniform_quadrature, q, "geometric", "barycentric")[0, 1] == pytest.approx(1.5713, abs=1e-4)
        assert switching_densities(uniform_quadrature, q, "geometric", "switching")[0, 1] == pytest.approx(1.1111, abs=1e-4)

    def test_geometric_rejects_four_goods(self):
        """Test the dimension limit of the geometric method."""
        measure = SimplexPointSet.point_mass((0.25, 0.25, 0.25, 0.25))
        with pytest.raises(UnsupportedMethodError, match="geometric method requires N ≤ 3"):
            switching_densities(measure, np.ones(4), "geometric")

    def test_three_goods_symmetric(self):
        """Test equal shadow costs for a symmetric three-good model."""
        model = IidModel(3)
        points = SimplexPointSet.from_samples(model, 50_000, seed=3, smoothing=0.0)
        measure = SimplexPointSet(points.theta, points.weights, points.totals, 0.0, model.renormalized(32))
        report = shadow_costs(measure, np.ones(3), "geometric", "barycentric")
        assert np.all(report.c > 0.0)
        assert report.c == pytest.approx(np.full(3, report.c.mean()), rel=0.05)


class TestLinearAlgebra:
    """Test assembly and solution of Jc = A."""

    def test_assemble_J(self):
        """Test the diagonal and off-diagonal entries."""
        M = np.array([0.5, 0.5])
        T = np.array([[0.0, 2.0], [3.0, 0.0]])
        q = np.array([1.0, 2.0])
        J = assemble_J(M, T, q)
        assert J.tolist() == [[2.5, -4.0], [-3.0, 6.5]]

    def test_rows_of_H_dominant(self, uniform_quadrature):
        """Test that H = J·diag(1/q) has row margins Mᵢ/qᵢ."""
        q = np.array([0.3, 0.45])
        M, _ = region_moments(uniform_quadrature, q)
        T = switching_densities(uniform_quadrature, q, "geometric", "barycentric")
        H = assemble_J(M, T, q) / q[None, :]
        margins = np.diag(H) - np.abs(H - np.diag(np.diag(H))).sum(axis=1)
        assert margins == pytest.approx(M / q, rel=1e-12)

    def test_singular(self):
        """Test a singular J."""
        with pytest.raises(SingularShadowSystemError):
            solve_shadow_costs(np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([1.0, 1.0]), np.ones(2))

    def test_not_an_m_matrix(self):
        """Test a J with positive off-diagonal entries."""
        with pytest.raises(ShadowInvariantError):
            solve_shadow_costs(np.array([[2.0, 1.0], [0.0, 2.0]]), np.array([1.0, 1.0]), np.ones(2))

    def test_shape_mismatch(self):
        """Test inconsistent dimensions."""
        with pytest.raises(ShadowCostError, match="inconsistent dimensions"):
            assemble_J(np.ones(2), np.zeros((3, 3)), np.ones(2))
