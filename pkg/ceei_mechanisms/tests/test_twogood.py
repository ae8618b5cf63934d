"""
Tests for symmetric two-good mechanisms.

This module tests:
- ζ and r on the exact and sampled paths
- The z search and the menu it emits
- The two-option optimality condition
"""

import numpy as np
import pytest

from ..core.closed_forms import corner_mass_r, corner_mass_z_star, uniform_r, uniform_zeta
from ..core.model import CornerMass, IidModel, ModelDomainError, PiecewiseConstantModel, UniformSquare
from ..core.twogood import (
    QuadratureRCurve,
    SampledRCurve,
    TwoGoodNotApplicableError,
    TwoGoodOptions,
    TwoGoodVerdict,
    build_r_curve,
    golden_section_max,
    optimize_z,
    r_value,
    two_option_optimality_condition,
    zeta,
)


def _quadrature(**overrides):
    return TwoGoodOptions.from_settings(mode="quadrature", **overrides)


class TestGoldenSection:
    """Test the scalar maximizer."""

    def test_parabola(self):
        """Test the maximum of a concave parabola."""
        x, fx, log = golden_section_max(lambda z: -(z - 0.3) ** 2, 0.0, 1.0, 1e-8)
        assert x == pytest.approx(0.3, abs=1e-6)
        assert fx == pytest.approx(0.0, abs=1e-10)
        assert len(log) > 10
        assert all(b - a <= 1.0 for a, b in log)

    def test_tiny_bracket(self):
        """Test a bracket already below tolerance."""
        x, _, log = golden_section_max(lambda z: z, 0.5, 0.5 + 1e-9, 1e-6)
        assert x == pytest.approx(0.5 + 5e-10)
        assert len(log) == 1


class TestRCurve:
    """Test ζ and r."""

    @pytest.mark.parametrize("z", [0.5, 0.6, 0.75, 0.9, 1.0])
    def test_uniform_closed_forms(self, z):
        """Test ζ and r of the uniform square."""
        curve = build_r_curve(UniformSquare(), _quadrature())
        assert zeta(UniformSquare(), z, curve) == pytest.approx(uniform_zeta(z), abs=1e-10)
        assert r_value(UniformSquare(), z, curve) == pytest.approx(uniform_r(z), abs=1e-10)

    def test_uniform_half(self):
        """Test r(½) = 4/3 and ζ(½) = ½."""
        assert r_value(UniformSquare(), 0.5) == pytest.approx(4.0 / 3.0, abs=1e-10)
        assert zeta(UniformSquare(), 0.5) == pytest.approx(0.5)

    @pytest.mark.parametrize("z", [0.52, 0.55, 0.6, 0.63, 0.75, 0.95])
    def test_corner_mass_closed_form(self, z):
        """Test r of the corner-mass model on both rational branches."""
        assert r_value(CornerMass(), z) == pytest.approx(corner_mass_r(z), abs=1e-8)

    def test_corner_mass_value(self):
        """Test r(0.75) = 10/9."""
        assert r_value(CornerMass(), 0.75) == pytest.approx(1.1111, abs=1e-4)

    def test_grid_matches_points(self):
        """Test that the tabulated path agrees with pointwise integration."""
        curve = build_r_curve(CornerMass(), _quadrature())
        grid = np.linspace(0.5, 1.0, 41)
        pointwise = [r_value(CornerMass(), z, curve) for z in grid]
        assert curve.r(grid) == pytest.approx(pointwise, abs=1e-10)

    def test_z_out_of_range(self):
        """Test the z domain check."""
        with pytest.raises(ModelDomainError, match="z must lie in"):
            r_value(UniformSquare(), 0.4)

    def test_sampled_uniform(self):
        """Test the sampled path against the closed form."""
        curve = build_r_curve(UniformSquare(), TwoGoodOptions.from_settings(mode="mc", samples=200_000, seed=3))
        assert isinstance(curve, SampledRCurve)
        for z in (0.5, 0.6, 0.8):
            assert float(curve.r(np.array([z]))[0]) == pytest.approx(uniform_r(z), abs=0.02)
        assert curve.gap_stderr(0.6) > 0.0

    def test_sampled_corner_mass(self):
        """Test the sampled path on the corner-mass model."""
        curve = build_r_curve(CornerMass(), TwoGoodOptions.from_settings(mode="mc", samples=200_000, seed=4))
        assert float(curve.r(np.array([0.63]))[0]) == pytest.approx(corner_mass_r(0.63), abs=0.02)


class TestOptimizeZ:
    """Test the z search."""

    @pytest.fixture(scope="class")
    def corner_solution(self):
        """Exact optimum for the corner-mass model."""
        return optimize_z(CornerMass(), (0.1, 0.1), _quadrature())

    def test_corner_mass_z_star(self, corner_solution):
        """Test z* against the root of the optimality quartic."""
        assert corner_solution.z_star == pytest.approx(corner_mass_z_star(), abs=1e-5)
        assert corner_solution.z_star == pytest.approx(0.6297, abs=1e-3)
        assert corner_solution.verdict == TwoGoodVerdict.THREE_OPTION_OPTIMAL

    def test_corner_mass_gap(self, corner_solution):
        """Test the welfare gain over the two-option menu."""
        assert corner_solution.gap.value == pytest.approx(0.0103, abs=5e-4)
        assert corner_solution.r_star == pytest.approx(corner_mass_r(corner_solution.z_star), abs=1e-8)

    def test_corner_mass_menu(self, corner_solution):
        """Test q_L < 2s < 2z*·q_L and the mixed bundle."""
        menu = corner_solution.menu
        q_low = corner_solution.q_low
        assert menu.labels == ("good_0", "good_1", "mixed")
        assert q_low == pytest.approx(0.1 / corner_solution.zeta_star)
        assert q_low < 0.2 < 2.0 * corner_solution.z_star * q_low
        assert menu.array[2] == pytest.approx([corner_solution.z_star * q_low] * 2)
        assert corner_solution.alternative_menu is None

    def test_uniform_two_options(self):
        """Test that the uniform square keeps the CEEI pair."""
        solution = optimize_z(UniformSquare(), (0.1, 0.1), _quadrature())
        assert solution.verdict == TwoGoodVerdict.TWO_OPTION_OPTIMAL
        assert solution.z_star == 0.5
        assert solution.r_star == pytest.approx(4.0 / 3.0, abs=1e-10)
        assert solution.menu.array.tolist() == [[0.2, 0.0], [0.0, 0.2]]

    def test_gap_within_tolerance(self, mocker):
        """Test that a gap of two standard errors keeps the simpler menu."""
        mocker.patch.object(QuadratureRCurve, "gap_stderr", return_value=0.005)
        solution = optimize_z(CornerMass(), (0.1, 0.1), _quadrature())
        assert solution.gap.value < 3.0 * 0.005
        assert solution.verdict == TwoGoodVerdict.TWO_OPTION_OPTIMAL
        assert solution.z_star == 0.5
        assert solution.alternative_menu is None
        assert solution.menu.array.tolist() == [[0.2, 0.0], [0.0, 0.2]]

    def test_gap_beyond_tolerance(self, mocker):
        """Test that a gap above three standard errors adds the mixed bundle."""
        mocker.patch.object(QuadratureRCurve, "gap_stderr", return_value=0.003)
        solution = optimize_z(CornerMass(), (0.1, 0.1), _quadrature())
        assert solution.verdict == TwoGoodVerdict.THREE_OPTION_OPTIMAL

    def test_noise_swamps_curve(self, mocker):
        """Test the indeterminate verdict when the band covers the whole curve."""
        mocker.patch.object(QuadratureRCurve, "gap_stderr", return_value=1.0)
        solution = optimize_z(CornerMass(), (0.1, 0.1), _quadrature(z_grid_size=201))
        assert solution.verdict == TwoGoodVerdict.INDETERMINATE
        assert solution.menu.labels == ("good_0", "good_1")
        assert solution.alternative_menu.labels == ("good_0", "good_1", "mixed")
        assert len(solution.near_maximizers) == 201

    def test_curve_table(self):
        """Test the tabulated curve."""
        solution = optimize_z(UniformSquare(), (0.1, 0.1), _quadrature(z_grid_size=201))
        assert list(solution.r_curve.columns) == ["z", "zeta", "r"]
        assert len(solution.r_curve) == 201
        assert solution.r_curve["z"].iloc[0] == 0.5
        assert solution.r_curve["z"].iloc[-1] == 1.0

    def test_serializable(self, corner_solution):
        """Test the dictionary form."""
        payload = corner_solution.to_dict()
        assert payload["verdict"] == "three_option_optimal"
        assert payload["method"] == "quadrature"
        assert payload["gap_stderr"] == 0.0

    def test_unequal_supplies(self):
        """Test that unequal supplies are rejected."""
        with pytest.raises(TwoGoodNotApplicableError, match="equal supplies"):
            optimize_z(UniformSquare(), (0.1, 0.2))

    def test_three_goods(self):
        """Test that N = 3 is rejected."""
        with pytest.raises(TwoGoodNotApplicableError):
            optimize_z(IidModel(3), (0.1, 0.1, 0.1))

    def test_not_exchangeable(self):
        """Test that an asymmetric model is rejected."""
        model = PiecewiseConstantModel(np.array([[2.0, 0.0], [1.0, 1.0]]))
        with pytest.raises(TwoGoodNotApplicableError, match="exchangeable"):
            optimize_z(model, (0.1, 0.1))

    def test_nonpositive_supply(self):
        """Test the supply sign check."""
        with pytest.raises(ModelDomainError):
            optimize_z(UniformSquare(), (0.0, 0.0))


class TestTwoOptionCondition:
    """Test the two-option optimality condition."""

    def test_uniform_holds(self):
        """Test LHS = (1−k)/3 against RHS = 2(1−k)/3."""
        report = two_option_optimality_condition(UniformSquare(), k_grid=np.linspace(0.0, 1.0, 11), mode="quadrature")
        assert report.holds
        assert 1.0 in report.vacuous_k
        k = report.table["k"].to_numpy()
        assert report.table["lhs"].to_numpy() == pytest.approx((1.0 - k) / 3.0, abs=1e-9)
        assert report.table["rhs"].to_numpy() == pytest.approx(2.0 * (1.0 - k) / 3.0, abs=1e-9)

    def test_uniform_sufficient_condition_fails(self):
        """Test that E[ΣV | ratio] = 2(1+ρ)/3 is increasing."""
        report = two_option_optimality_condition(UniformSquare(), mode="quadrature", ratio_grid_size=51)
        assert not report.sufficient_holds
        table = report.sufficient_table
        assert table["conditional_total"].to_numpy() == pytest.approx(
            2.0 * (1.0 + table["ratio"].to_numpy()) / 3.0, rel=1e-9
        )

    def test_corner_mass_fails(self):
        """Test that the corner-mass model violates the condition."""
        report = two_option_optimality_condition(CornerMass(), mode="quadrature")
        assert not report.holds
        assert report.max_excess > 0.0

    def test_sampled_uniform(self):
        """Test the sampled condition with standard errors."""
        report = two_option_optimality_condition(
            UniformSquare(), k_grid=np.linspace(0.0, 0.9, 10), mode="mc", samples=100_000, seed=6
        )
        assert report.holds
        assert np.all(report.table["stderr"].to_numpy() > 0.0)
        assert report.table["lhs"].iloc[0] == pytest.approx(1.0 / 3.0, abs=0.01)

    @pytest.mark.parametrize("model", [UniformSquare(), CornerMass()], ids=["uniform_square", "corner_mass"])
    def test_agrees_with_z_search(self, model):
        """Test that two options are optimal exactly when the condition holds."""
        solution = optimize_z(model, (0.1, 0.1), _quadrature(z_grid_size=401))
        report = two_option_optimality_condition(model, mode="quadrature")
        assert (solution.verdict == TwoGoodVerdict.TWO_OPTION_OPTIMAL) == report.holds

    def test_three_goods(self):
        """Test that N = 3 is rejected."""
        with pytest.raises(TwoGoodNotApplicableError):
            two_option_optimality_condition(IidModel(3))
