"""
Tests for menu evaluation.
"""

import json

import numpy as np
import pytest

from ..core.ceei import solve_ceei
from ..core.closed_forms import corner_mass_r
from ..core.measures import SimplexPointSet, build_measure
from ..core.model import CornerMass, IidModel, ModelDomainError, UniformSquare
from ..core.twogood import TwoGoodOptions, optimize_z
from ..core.evaluator import (
    LotteryConvergenceError,
    LotteryOptions,
    Menu,
    MenuFormatError,
    best_response,
    best_responses,
    check_ratio_monotonicity,
    lottery_fixed_point,
    menu_utility,
    sample_type_pairs,
    simulate,
    unit_demand_slack,
)

CEEI_PAIR = Menu.from_bundles([(0.2, 0.0), (0.0, 0.2)], ["good_0", "good_1"])


class TestMenu:
    """Test menu parsing and validation."""

    def test_from_json_list(self):
        """Test a bare list of bundles."""
        menu = Menu.from_json("[[0.2, 0.0], [0.0, 0.2]]")
        assert menu.labels == ("option_0", "option_1")
        assert menu.n_goods == 2
        assert len(menu) == 2

    def test_from_json_object(self):
        """Test an object with labels."""
        text = json.dumps({"bundles": [[0.3, 0.0], [0.0, 0.3], [0.2, 0.2]], "labels": ["a", "b", "mixed"]})
        menu = Menu.from_json(text)
        assert menu.labels == ("a", "b", "mixed")
        assert menu.array[2].tolist() == [0.2, 0.2]

    def test_load(self, tmp_path):
        """Test reading a menu file."""
        path = tmp_path / "menu.json"
        path.write_text(json.dumps(CEEI_PAIR.to_dict()), encoding="utf-8")
        assert Menu.load(path) == CEEI_PAIR

    @pytest.mark.parametrize(
        "text",
        [
            "not json",
            "{\"labels\": []}",
            "[1.0, 2.0]",
            "[[0.1, 0.2], [0.3]]",
            "[[0.1, -0.2]]",
            "[]",
            "{\"bundles\": [[0.1, 0.2]], \"labels\": [\"a\", \"b\"]}",
        ],
    )
    def test_malformed(self, text):
        """Test documents that are not valid menus."""
        with pytest.raises(MenuFormatError):
            Menu.from_json(text)


class TestBestResponse:
    """Test type choices."""

    def test_prefers_larger_value(self):
        """Test the argmax of θ·b."""
        assert best_response((0.7, 0.3), CEEI_PAIR) == 0
        assert best_response((0.2, 0.8), CEEI_PAIR) == 1

    def test_tie_lowest_index(self):
        """Test that ties go to the first bundle."""
        assert best_response((0.5, 0.5), CEEI_PAIR) == 0

    def test_dimension_mismatch(self):
        """Test a type with the wrong number of goods."""
        with pytest.raises(MenuFormatError):
            best_response((0.2, 0.3, 0.5), CEEI_PAIR)

    def test_vectorized(self):
        """Test rows of types against the scalar choice."""
        theta = np.array([[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]])
        assert best_responses(theta, CEEI_PAIR).tolist() == [0, 1, 0]

    def test_menu_utility(self):
        """Test U(θ) = max θ·b."""
        assert menu_utility(np.array([[0.25, 0.75]]), CEEI_PAIR).tolist() == pytest.approx([0.15])


class TestSimulate:
    """Test Monte Carlo menu evaluation."""

    @pytest.fixture(scope="class")
    def uniform_report(self):
        """The CEEI pair offered to the uniform square."""
        return simulate(UniformSquare(), CEEI_PAIR, 200_000, seed=21, supplies=(0.1, 0.1))

    def test_welfare(self, uniform_report):
        """Test welfare 2s·E[max V] = 0.1333."""
        assert uniform_report.welfare_v_space.within(0.2 * 2.0 / 3.0, 3.0)
        assert uniform_report.welfare_consistent

    def test_demand_matches_supply(self, uniform_report):
        """Test that demand equals supply for the CEEI menu."""
        assert np.all(np.abs(uniform_report.demand - 0.1) <= 3.0 * uniform_report.demand_stderr)
        assert uniform_report.slack == pytest.approx(0.1 - uniform_report.demand)
        assert uniform_report.choice_shares.sum() == pytest.approx(1.0)

    def test_serializable(self, uniform_report):
        """Test the dictionary form."""
        payload = uniform_report.to_dict()
        assert payload["n_samples"] == 200_000
        assert payload["welfare_theta_space"] is not None

    def test_corner_mass_three_options(self):
        """Test that the mixed option raises welfare on the corner-mass model."""
        solution = optimize_z(CornerMass(), (0.1, 0.1), TwoGoodOptions.from_settings(mode="quadrature"))
        three = simulate(CornerMass(), solution.menu, 200_000, seed=5, theta_space=False)
        two = simulate(CornerMass(), CEEI_PAIR, 200_000, seed=5, theta_space=False)
        assert three.welfare_v_space.within(0.1 * corner_mass_r(solution.z_star), 3.0)
        assert two.welfare_v_space.within(0.1 * corner_mass_r(0.5), 3.0)
        assert three.welfare_v_space.value > two.welfare_v_space.value
        assert three.welfare_theta_space is None

    def test_no_agents(self):
        """Test n = 0."""
        with pytest.raises(ModelDomainError):
            simulate(UniformSquare(), CEEI_PAIR, 0, seed=1)

    def test_menu_goods_mismatch(self):
        """Test a menu with the wrong number of goods."""
        with pytest.raises(MenuFormatError):
            simulate(UniformSquare(), Menu.from_bundles([(0.1, 0.1, 0.1)]), 100, seed=1)


class TestRatioMonotonicity:
    """Test the pairwise ratio check."""

    @pytest.fixture(scope="class")
    def pairs(self):
        """Sampled type pairs for two goods."""
        return sample_type_pairs(2, 2_000, seed=9)

    def test_pairs_on_simplex(self, pairs):
        """Test pair shapes and sums."""
        assert pairs.shape == (2_000, 2, 2)
        assert pairs.sum(axis=2) == pytest.approx(np.ones((2_000, 2)))

    def test_menu_passes(self, pairs):
        """Test that a menu is never flagged."""
        three = Menu.from_bundles([(0.3, 0.0), (0.0, 0.3), (0.2, 0.2)])
        assert check_ratio_monotonicity(CEEI_PAIR, pairs) == []
        assert check_ratio_monotonicity(three, pairs) == []

    def test_rule_fails(self, pairs):
        """Test a rule whose scaled utility grows toward the vertex."""
        violations = check_ratio_monotonicity(lambda theta: np.array([theta[0], 0.0]), pairs)
        assert violations
        assert all(v.good == 0 for v in violations)
        assert all(v.scaled_utility_prime < v.scaled_utility for v in violations)


class TestLottery:
    """Test the one-entry lottery game."""

    def test_matches_ceei(self):
        """Test that winning quantities equal the CEEI quantities."""
        measure = build_measure(UniformSquare(), "quadrature")
        equilibrium = lottery_fixed_point(measure, (0.1, 0.3))
        assert equilibrium.q == pytest.approx(solve_ceei(measure, (0.1, 0.3)).q, abs=1e-3)
        assert equilibrium.q * equilibrium.masses == pytest.approx([0.1, 0.3], abs=1e-6)
        assert equilibrium.iterations == len(equilibrium.history)

    @pytest.mark.parametrize("model", [UniformSquare(), CornerMass()], ids=["uniform_square", "corner_mass"])
    def test_symmetric_supplies_match_ceei(self, model):
        """Test agreement with the CEEI quantities for equal supplies."""
        measure = build_measure(model, "quadrature")
        equilibrium = lottery_fixed_point(measure, (0.1, 0.1))
        assert equilibrium.q == pytest.approx(solve_ceei(measure, (0.1, 0.1)).q, abs=1e-3)
        assert equilibrium.q == pytest.approx([0.2, 0.2], abs=1e-6)

    def test_point_mass(self):
        """Test that a single indifferent type splits entry and wins q = 2s."""
        measure = SimplexPointSet.point_mass((0.5, 0.5))
        equilibrium = lottery_fixed_point(measure, (0.1, 0.1))
        assert equilibrium.q == pytest.approx([0.2, 0.2], abs=1e-9)
        assert equilibrium.masses == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_not_converged(self):
        """Test the iteration cap."""
        opts = LotteryOptions.from_settings(max_iters=2)
        with pytest.raises(LotteryConvergenceError, match="did not converge"):
            lottery_fixed_point(build_measure(UniformSquare(), "quadrature"), (0.1, 0.3), opts)

    def test_rejects_nonpositive_supply(self):
        """Test the supply sign check."""
        with pytest.raises(ModelDomainError):
            lottery_fixed_point(UniformSquare(), (0.1, 0.0))


class TestUnitDemand:
    """Test the unit-demand reading of a menu."""

    def test_interpretable(self):
        """Test bundle totals below one."""
        check = unit_demand_slack(CEEI_PAIR)
        assert check.max_bundle_total == pytest.approx(0.2)
        assert check.interpretable

    def test_not_interpretable(self):
        """Test a bundle with total above one."""
        assert not unit_demand_slack(Menu.from_bundles([(0.6, 0.6)])).interpretable

    def test_model_goods_mismatch(self):
        """Test that the menu and model must cover the same goods."""
        assert unit_demand_slack(CEEI_PAIR, UniformSquare()).interpretable
        with pytest.raises(MenuFormatError, match="model has 3"):
            unit_demand_slack(CEEI_PAIR, IidModel(3))
