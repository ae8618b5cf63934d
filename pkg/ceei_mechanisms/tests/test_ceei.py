"""
Tests for the CEEI potential and solver.

This module tests:
- The potential Ψ and its gradient
- Region assignment and the indifference type
- Market clearing on the worked examples, exact and sampled
- Failure reporting with the best iterate
"""

import numpy as np
import pytest

from ..core.ceei import (
    CeeiConvergenceError,
    CeeiOptions,
    ceei_menu,
    clearing_residual,
    indifference_type,
    potential,
    potential_gradient,
    region_of,
    solve_ceei,
)
from ..core.measures import build_measure
from ..core.model import CornerMass, IidModel, ModelDomainError, SimplexPoint, UniformSquare


@pytest.fixture(scope="module")
def uniform_quadrature():
    """Exact backend for the uniform square."""
    return build_measure(UniformSquare(), "quadrature")


class TestPotential:
    """Test Ψ and ∇Ψ."""

    def test_value_at_origin(self, uniform_quadrature):
        """Test Ψ(0) = 1 − 2 log 2 + Σs for the uniform square."""
        value = potential(uniform_quadrature, (0.1, 0.1), (0.0, 0.0))
        assert value == pytest.approx(1.0 - 2.0 * np.log(2.0) + 0.2, abs=1e-9)

    def test_gradient_matches_finite_differences(self, uniform_quadrature):
        """Test ∇Ψ against central differences at 20 random points."""
        rng = np.random.default_rng(12)
        s = np.array([0.1, 0.3])
        h = 1e-5
        for y in rng.uniform(-1.0, 2.0, size=(20, 2)):
            numeric = np.array(
                [
                    (potential(uniform_quadrature, s, y + h * e) - potential(uniform_quadrature, s, y - h * e)) / (2 * h)
                    for e in np.eye(2)
                ]
            )
            assert potential_gradient(uniform_quadrature, s, y) == pytest.approx(numeric, abs=1e-6)

    def test_strictly_convex(self):
        """Test the midpoint inequality at 100 random pairs of log-prices."""
        measure = build_measure(CornerMass(), "quadrature")
        rng = np.random.default_rng(31)
        s = np.array([0.1, 0.15])
        for y, y_other in rng.uniform(-1.0, 2.0, size=(100, 2, 2)):
            midpoint = potential(measure, s, 0.5 * (y + y_other))
            average = 0.5 * (potential(measure, s, y) + potential(measure, s, y_other))
            assert midpoint < average

    def test_rejects_nonpositive_supplies(self, uniform_quadrature):
        """Test the supply check."""
        with pytest.raises(ModelDomainError, match="supplies must be strictly positive"):
            potential(uniform_quadrature, (0.1, 0.0), (0.0, 0.0))


class TestRegions:
    """Test pure-option regions."""

    def test_region_of(self):
        """Test argmax θᵢqᵢ with 0-based indices."""
        assert region_of(SimplexPoint((0.7, 0.3)), (1.0, 1.0)) == 0
        assert region_of((0.7, 0.3), (1.0, 3.0)) == 1

    def test_region_of_tie(self):
        """Test that ties go to the lowest index."""
        assert region_of((0.5, 0.5), (1.0, 1.0)) == 0

    def test_region_of_rejects_zero_quantity(self):
        """Test the quantity check."""
        with pytest.raises(ModelDomainError, match="quantities must be strictly positive"):
            region_of((0.5, 0.5), (1.0, 0.0))

    def test_indifference_type(self):
        """Test θ⁰ᵢ ∝ 1/qᵢ."""
        assert indifference_type((1.0, 3.0)).coords == pytest.approx((0.75, 0.25))
        assert indifference_type((2.0, 2.0, 2.0)).coords == pytest.approx((1 / 3, 1 / 3, 1 / 3))


class TestSolveCeei:
    """Test the damped Newton solver."""

    def test_uniform_symmetric(self, uniform_quadrature):
        """Test q = (0.2, 0.2) for s = (0.1, 0.1)."""
        solution = solve_ceei(uniform_quadrature, (0.1, 0.1))
        assert solution.q == pytest.approx([0.2, 0.2], abs=1e-6)
        assert solution.clearing_residual <= 1e-3
        assert solution.converged

    def test_uniform_asymmetric(self, uniform_quadrature):
        """Test q = (0.3, 0.45) for s = (0.1, 0.3)."""
        solution = solve_ceei(uniform_quadrature, (0.1, 0.3))
        assert solution.q == pytest.approx([0.3, 0.45], abs=1e-3)
        assert solution.theta0.coords == pytest.approx((0.6, 0.4), abs=1e-6)
        assert solution.p == pytest.approx(1.0 / solution.q)
        assert clearing_residual(uniform_quadrature, (0.1, 0.3), solution.q) <= 1e-6

    def test_corner_mass_symmetric(self):
        """Test that symmetric supplies give equal quantities on the corner-mass model."""
        solution = solve_ceei(build_measure(CornerMass(), "quadrature"), (0.1, 0.1))
        assert solution.q == pytest.approx([0.2, 0.2], abs=1e-6)

    def test_unique_from_random_starts(self):
        """Test that five random starting points reach the same quantities."""
        measure = build_measure(CornerMass(), "quadrature")
        s = (0.1, 0.15)
        reference = solve_ceei(measure, s)
        rng = np.random.default_rng(47)
        for y0 in rng.uniform(-1.0, 1.0, size=(5, 2)):
            solution = solve_ceei(measure, s, CeeiOptions.from_settings(y0=y0))
            assert solution.q == pytest.approx(reference.q, rel=1e-3)

    def test_indifference_type_reconstruction(self, uniform_quadrature):
        """Test that moving from θ⁰ toward a vertex lands in that vertex's region."""
        solution = solve_ceei(uniform_quadrature, (0.1, 0.3))
        for q in (solution.q, np.array([1.0, 2.0, 3.0])):
            theta0 = indifference_type(q).array
            for i, vertex in enumerate(np.eye(len(q))):
                assert region_of(theta0 + 1e-3 * (vertex - theta0), q) == i

    def test_history_recorded(self, uniform_quadrature):
        """Test per-iteration history."""
        solution = solve_ceei(uniform_quadrature, (0.1, 0.3))
        assert solution.iterations == len(solution.history)
        assert all(step.direction in ("newton", "gradient") for step in solution.history)

    def test_sampled_three_goods(self):
        """Test the smoothed point-set backend on a symmetric i.i.d. model."""
        measure = build_measure(IidModel(3), "mc", samples=20_000, seed=5)
        opts = CeeiOptions.from_settings(tol_clear=1e-2)
        solution = solve_ceei(measure, (0.1, 0.1, 0.1), opts)
        assert solution.q == pytest.approx([0.3, 0.3, 0.3], rel=0.05)
        assert solution.region_masses.sum() == pytest.approx(1.0)

    def test_convergence_error_carries_best(self, uniform_quadrature):
        """Test that a capped solve reports its best iterate."""
        opts = CeeiOptions.from_settings(max_iters=1, tol_grad=1e-14)
        with pytest.raises(CeeiConvergenceError) as excinfo:
            solve_ceei(uniform_quadrature, (0.1, 0.3), opts)
        assert excinfo.value.best is not None
        assert not excinfo.value.best.converged
        assert excinfo.value.best.q.shape == (2,)

    def test_rejects_wrong_supply_count(self, uniform_quadrature):
        """Test the supply dimension check."""
        with pytest.raises(ModelDomainError):
            solve_ceei(uniform_quadrature, (0.1, 0.1, 0.1))

    def test_rejects_negative_supply(self, uniform_quadrature):
        """Test the supply sign check."""
        with pytest.raises(ModelDomainError, match="supplies must be strictly positive"):
            solve_ceei(uniform_quadrature, (-1.0, 0.1))


class TestCeeiMenu:
    """Test the pure-option menu."""

    def test_menu(self, uniform_quadrature):
        """Test the bundles qᵢeᵢ and their labels."""
        menu = ceei_menu(solve_ceei(uniform_quadrature, (0.1, 0.3)))
        assert menu.labels == ("good_0", "good_1")
        assert menu.array[0, 1] == 0.0 and menu.array[1, 0] == 0.0
        assert menu.array[0, 0] == pytest.approx(0.3, abs=1e-3)
        assert menu.array[1, 1] == pytest.approx(0.45, abs=1e-3)

    def test_unit_demand_scaling(self, uniform_quadrature):
        """Test that small supplies give bundles below one."""
        for scale in (0.05, 0.01):
            menu = ceei_menu(solve_ceei(uniform_quadrature, (0.1 * scale, 0.1 * scale)))
            assert menu.array.sum(axis=1).max() < 1.0
