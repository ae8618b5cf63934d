"""
Menu evaluation for the CEEI mechanisms toolkit.

Chain of thought:
1. A menu is a finite list of bundles; each agent picks the bundle maximizing θ·b (lowest index on ties)
2. Simulation draws values, applies best responses and reports demand, slack, choice shares and welfare,
   the latter both in value space E[V·y(V)] and in type space E[λ(Θ)·U(Θ)]
3. Ratio monotonicity is checked pairwise on sampled types for any menu or allocation rule
4. The one-entry lottery game is solved by damped best-response iteration on winning quantities
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from ..config.settings import settings
from ..utils.integration import Estimate, mean_and_stderr, stream_generator
from .measures import MeasureLike, as_measure
from .model import (
    ModelDomainError,
    ModelLike,
    SimplexPoint,
    as_renormalized,
    iter_value_chunks,
    renormalize_many,
)

logger = structlog.get_logger(__name__)


class MenuFormatError(ValueError):
    """Custom exception for malformed menus."""
    pass


class LotteryConvergenceError(Exception):
    """Custom exception for lottery iterations that fail to settle."""
    pass


@dataclass(frozen=True)
class Menu:
    """A finite list of nonnegative bundles offered to every agent."""

    bundles: Tuple[Tuple[float, ...], ...]
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.bundles) == 0:
            raise MenuFormatError("menu needs at least one bundle")
        try:
            arr = np.asarray(self.bundles, dtype=float)
        except (TypeError, ValueError) as e:
            raise MenuFormatError(f"bundles must be numeric vectors of equal length: {e}")
        if arr.ndim != 2 or arr.shape[1] < 1:
            raise MenuFormatError("bundles must be numeric vectors of equal length")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
            raise MenuFormatError("bundle entries must be finite and nonnegative")
        labels = tuple(self.labels) or tuple(f"option_{k}" for k in range(len(arr)))
        if len(labels) != len(arr):
            raise MenuFormatError(f"{len(labels)} labels for {len(arr)} bundles")
        object.__setattr__(self, "bundles", tuple(tuple(float(x) for x in row) for row in arr))
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_bundles(cls, bundles: Sequence[Sequence[float]], labels: Optional[Sequence[str]] = None) -> "Menu":
        return cls(tuple(tuple(b) for b in bundles), tuple(labels or ()))

    @classmethod
    def from_json(cls, text: str) -> "Menu":
        """
        Parse a menu document: a list of bundles or {"bundles": [...], "labels": [...]}.

        Raises:
            MenuFormatError: If the document is not a valid menu
        """
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise MenuFormatError(f"menu file is not valid JSON: {e}")
        if isinstance(data, dict):
            if "bundles" not in data:
                raise MenuFormatError("menu object needs a 'bundles' list")
            bundles, labels = data["bundles"], data.get("labels")
        else:
            bundles, labels = data, None
        if not isinstance(bundles, list) or not all(isinstance(b, list) for b in bundles):
            raise MenuFormatError("bundles must be a list of lists")
        return cls.from_bundles(bundles, labels)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Menu":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.bundles, dtype=float)

    @property
    def n_goods(self) -> int:
        return len(self.bundles[0])

    def __len__(self) -> int:
        return len(self.bundles)

    def to_dict(self) -> Dict:
        return {"bundles": [list(b) for b in self.bundles], "labels": list(self.labels)}


def best_responses(theta: np.ndarray, menu: Menu) -> np.ndarray:
    """Vectorized best response: index of argmax θ·b per row, lowest on ties."""
    return np.argmax(np.atleast_2d(theta) @ menu.array.T, axis=1)


def best_response(theta: Union[SimplexPoint, Sequence[float]], menu: Menu) -> int:
    """Index of the bundle maximizing θ·b."""
    point = theta.array if isinstance(theta, SimplexPoint) else np.asarray(theta, dtype=float)
    if point.shape[-1] != menu.n_goods:
        raise MenuFormatError(f"type has {point.shape[-1]} goods, menu has {menu.n_goods}")
    return int(best_responses(point[None, :], menu)[0])


def menu_utility(theta: np.ndarray, menu: Menu) -> np.ndarray:
    """U(θ) = max_b θ·b."""
    return (np.atleast_2d(theta) @ menu.array.T).max(axis=1)


@dataclass
class WelfareReport:
    """Simulated outcome of offering a menu to the population."""

    welfare_v_space: Estimate
    welfare_theta_space: Optional[Estimate]
    welfare_gap: Optional[Estimate]
    demand: np.ndarray
    demand_stderr: np.ndarray
    slack: Optional[np.ndarray]
    choice_shares: np.ndarray
    choice_shares_stderr: np.ndarray
    n_samples: int

    @property
    def welfare_consistent(self) -> bool:
        """Value-space and type-space welfare agree within three standard errors."""
        if self.welfare_gap is None:
            return True
        return self.welfare_gap.within(0.0, 3.0, 1e-12)

    def to_dict(self) -> Dict:
        return {
            "welfare_v_space": self.welfare_v_space.value,
            "welfare_v_space_stderr": self.welfare_v_space.stderr,
            "welfare_theta_space": None if self.welfare_theta_space is None else self.welfare_theta_space.value,
            "welfare_theta_space_stderr": (
                None if self.welfare_theta_space is None else self.welfare_theta_space.stderr
            ),
            "welfare_gap_stderr": None if self.welfare_gap is None else self.welfare_gap.stderr,
            "welfare_consistent": self.welfare_consistent,
            "demand": self.demand,
            "demand_stderr": self.demand_stderr,
            "slack": self.slack,
            "choice_shares": self.choice_shares,
            "choice_shares_stderr": self.choice_shares_stderr,
            "n_samples": self.n_samples,
        }


def simulate(
    model: ModelLike,
    menu: Menu,
    n: int,
    seed: int,
    supplies: Optional[Sequence[float]] = None,
    theta_space: bool = True,
) -> WelfareReport:
    """
    Simulate n agents choosing from a menu.

    Args:
        model: Value distribution (λ is evaluated through its renormalized view)
        menu: Bundles offered
        n: Number of simulated agents
        seed: Stream key; the draws match sample_values(model, n, seed)
        supplies: Optional supply vector for the slack report
        theta_space: Also estimate welfare as E[λ(Θ)·U(Θ)]

    Returns:
        WelfareReport with standard errors for every mean
    """
    if n < 1:
        raise ModelDomainError(f"simulation needs at least one agent, got n={n}")
    renorm = as_renormalized(model)
    if menu.n_goods != renorm.n_goods:
        raise MenuFormatError(f"menu has {menu.n_goods} goods, model has {renorm.n_goods}")
    bundles = menu.array
    k_options, n_goods = bundles.shape
    acc: Dict[str, List] = {key: [] for key in ("v", "v2", "t", "t2", "d", "d2", "x", "x2", "c")}

    for values in iter_value_chunks(renorm.base, n, seed):
        theta, totals = renormalize_many(values)
        choice = best_responses(theta, menu)
        taken = bundles[choice]
        welfare_v = np.einsum("ij,ij->i", values, taken)
        acc["v"].append(welfare_v.sum())
        acc["v2"].append(np.dot(welfare_v, welfare_v))
        acc["x"].append(taken.sum(axis=0))
        acc["x2"].append((taken * taken).sum(axis=0))
        acc["c"].append(np.bincount(choice, minlength=k_options))
        if theta_space:
            utility = np.einsum("ij,ij->i", theta, taken)
            lam = np.zeros(len(theta))
            positive = totals > 0.0
            lam[positive] = renorm.lam(theta[positive])
            welfare_t = np.nan_to_num(lam) * utility
            gap = welfare_v - welfare_t
            acc["t"].append(welfare_t.sum())
            acc["t2"].append(np.dot(welfare_t, welfare_t))
            acc["d"].append(gap.sum())
            acc["d2"].append(np.dot(gap, gap))

    welfare_v_space = mean_and_stderr(acc["v"], acc["v2"], n)
    welfare_theta_space = mean_and_stderr(acc["t"], acc["t2"], n) if theta_space else None
    welfare_gap = mean_and_stderr(acc["d"], acc["d2"], n) if theta_space else None

    demand, demand_stderr = np.zeros(n_goods), np.zeros(n_goods)
    for good in range(n_goods):
        estimate = mean_and_stderr([x[good] for x in acc["x"]], [x[good] for x in acc["x2"]], n)
        demand[good], demand_stderr[good] = estimate.value, estimate.stderr

    counts = np.sum(acc["c"], axis=0)
    shares = counts / n
    shares_stderr = np.sqrt(shares * (1.0 - shares) / n)
    slack = None if supplies is None else np.asarray(supplies, dtype=float) - demand

    logger.info(
        "Simulated menu",
        options=k_options,
        samples=n,
        welfare=welfare_v_space.value,
        welfare_stderr=welfare_v_space.stderr,
    )
    return WelfareReport(
        welfare_v_space=welfare_v_space,
        welfare_theta_space=welfare_theta_space,
        welfare_gap=welfare_gap,
        demand=demand,
        demand_stderr=demand_stderr,
        slack=slack,
        choice_shares=shares,
        choice_shares_stderr=shares_stderr,
        n_samples=n,
    )


AllocationRule = Union[Menu, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class RatioViolation:
    """A sampled pair breaking ratio monotonicity for one good."""

    theta: Tuple[float, ...]
    theta_prime: Tuple[float, ...]
    good: int
    scaled_utility: float
    scaled_utility_prime: float


def _rule_utility(rule: AllocationRule, theta: np.ndarray) -> np.ndarray:
    if isinstance(rule, Menu):
        return menu_utility(theta, rule)
    allocation = np.asarray([rule(row) for row in theta], dtype=float)
    return np.einsum("ij,ij->i", theta, allocation)


def sample_type_pairs(n_goods: int, n_pairs: int, seed: int) -> np.ndarray:
    """Uniform (flat Dirichlet) type pairs, shape (n_pairs, 2, n_goods)."""
    rng = stream_generator(seed, 0)
    return rng.dirichlet(np.ones(n_goods), size=(n_pairs, 2))


def check_ratio_monotonicity(
    rule: AllocationRule, pairs: np.ndarray, tol: float = 1e-9
) -> List[RatioViolation]:
    """
    Check U(θ′)/θ′ᵢ ≥ U(θ)/θᵢ − tol for every sampled pair with θ ≻ᵢ θ′.

    θ ≻ᵢ θ′ means θₖθ′ᵢ ≤ θ′ₖθᵢ for all k, i.e. θ sits closer to vertex eᵢ.
    Both orders of every pair are examined.
    """
    pairs = np.asarray(pairs, dtype=float)
    first, second = pairs[:, 0, :], pairs[:, 1, :]
    u_first, u_second = _rule_utility(rule, first), _rule_utility(rule, second)
    violations: List[RatioViolation] = []
    n_goods = pairs.shape[2]
    for theta, theta_p, u, u_p in ((first, second, u_first, u_second), (second, first, u_second, u_first)):
        for good in range(n_goods):
            closer = np.all(theta * theta_p[:, good : good + 1] <= theta_p * theta[:, good : good + 1], axis=1)
            closer &= (theta[:, good] > 0.0) & (theta_p[:, good] > 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                scaled = u / theta[:, good]
                scaled_p = u_p / theta_p[:, good]
            bad = np.flatnonzero(closer & (scaled_p < scaled - tol))
            violations.extend(
                RatioViolation(tuple(theta[k]), tuple(theta_p[k]), good, float(scaled[k]), float(scaled_p[k]))
                for k in bad
            )
    if violations:
        logger.warning("Ratio monotonicity violated", violations=len(violations), pairs=len(pairs))
    return violations


@dataclass
class LotteryOptions:
    """Damped best-response settings for the one-entry lottery game."""

    alpha: float = 0.5
    tol: float = 1e-10
    max_iters: int = 2000
    empty_region_growth: float = 10.0

    @classmethod
    def from_settings(cls, **overrides) -> "LotteryOptions":
        base = settings.lottery
        values = dict(
            alpha=base.alpha,
            tol=base.tol,
            max_iters=base.max_iters,
            empty_region_growth=base.empty_region_growth,
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class LotteryEquilibrium:
    """Fixed point of the lottery game."""

    q: np.ndarray
    masses: np.ndarray
    iterations: int
    relative_change: float
    history: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "q": self.q,
            "masses": self.masses,
            "iterations": self.iterations,
            "relative_change": self.relative_change,
        }


def lottery_fixed_point(
    model: MeasureLike, s: Sequence[float], opts: Optional[LotteryOptions] = None
) -> LotteryEquilibrium:
    """
    Damped best-response iteration of the one-entry lottery game.

    Given winning quantities q, each type enters the lottery of argmaxᵢ θᵢqᵢ; masses m follow and the
    quantities move toward s/m with damping α. An empty region has unbounded winning quantity; it is
    capped at q·empty_region_growth for that step.

    Raises:
        ModelDomainError: If a supply is not strictly positive
        LotteryConvergenceError: If the relative change stays above tol after max_iters steps
    """
    opts = opts or LotteryOptions.from_settings()
    supplies = np.asarray(s, dtype=float)
    if np.any(supplies <= 0.0):
        raise ModelDomainError("supplies must be strictly positive")
    measure = as_measure(model)
    if supplies.size != measure.n_goods:
        raise ModelDomainError(f"{supplies.size} supplies for {measure.n_goods} goods")

    q = supplies * measure.n_goods
    history: List[float] = []
    for iteration in range(1, opts.max_iters + 1):
        masses = measure.split_masses(q)
        with np.errstate(divide="ignore"):
            target = np.where(masses > 0.0, supplies / np.where(masses > 0.0, masses, 1.0), q * opts.empty_region_growth)
        q_next = (1.0 - opts.alpha) * q + opts.alpha * target
        change = float(np.max(np.abs(q_next - q) / q))
        history.append(change)
        q = q_next
        if change <= opts.tol:
            logger.info("Lottery game converged", iterations=iteration, q=q.tolist())
            return LotteryEquilibrium(q, measure.split_masses(q), iteration, change, history)

    raise LotteryConvergenceError(
        f"lottery iteration did not converge in {opts.max_iters} steps "
        f"(last relative change {history[-1]:.3e}); try a smaller alpha than {opts.alpha}"
    )


@dataclass(frozen=True)
class UnitDemandCheck:
    """Whether a menu can be read as unit-demand probabilities."""

    max_bundle_total: float
    interpretable: bool


def unit_demand_slack(menu: Menu, model: Optional[ModelLike] = None) -> UnitDemandCheck:
    """
    Largest bundle total; the menu is unit-demand interpretable iff it is below one.

    Raises:
        MenuFormatError: If a model is given and its number of goods differs from the menu's
    """
    if model is not None and model.n_goods != menu.n_goods:
        raise MenuFormatError(f"menu has {menu.n_goods} goods, model has {model.n_goods}")
    total = float(menu.array.sum(axis=1).max())
    return UnitDemandCheck(total, total < 1.0)
