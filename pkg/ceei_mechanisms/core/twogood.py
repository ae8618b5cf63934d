"""
Optimal symmetric two-good mechanisms.

Chain of thought:
1. For an exchangeable two-good model with equal supplies s the optimal menu is either the CEEI pair
   {2s·e₁, 2s·e₂} or adds a mixed bundle; the threshold z* maximizes
   r(z) = [z·E[V₁+V₂] + 2E[(V₂ − z(V₁+V₂))₊]] / ζ(z) over [½, 1], ζ(z) = z − (2z−1)·P[θ₂ ≥ z]
2. With a density both expectations are one-dimensional integrals of g̃ and λ̃g̃ in t = θ₁, tabulated
   once as cumulative integrals; otherwise one shared sample set, sorted by max θ, serves every z
3. A dense grid locates the best bracket and golden-section search refines inside it
4. z* = ½ (two options) when r(½) is within the statistical tolerance of the maximum; the
   three-option menu offers q_L of each good and z*·q_L of both, with q_L = s/ζ(z*)
"""

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from ..config.settings import settings
from ..utils.integration import Estimate, integrate_pieces, piece_edges, piecewise_nodes
from .evaluator import Menu
from .model import ModelDomainError, ModelLike, RenormalizedModel, as_renormalized, renormalize_many, sample_values

logger = structlog.get_logger(__name__)

Z_MARGIN = 1e-9
_CELL_NODES = 8
# numerical floor for comparing exact r values
_EXACT_FLOOR = 1e-10

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
INV_PHI_SQ = (3.0 - math.sqrt(5.0)) / 2.0


class TwoGoodNotApplicableError(Exception):
    """Custom exception for models or supplies outside the symmetric two-good setting."""
    pass


class TwoGoodVerdict(str, enum.Enum):
    TWO_OPTION_OPTIMAL = "two_option_optimal"
    THREE_OPTION_OPTIMAL = "three_option_optimal"
    INDETERMINATE = "indeterminate"


def golden_section_max(
    func: Callable[[float], float], a: float, b: float, tol: float = 1e-6
) -> Tuple[float, float, List[Tuple[float, float]]]:
    """
    Golden-section search for the maximum of a unimodal function on [a, b].

    Returns:
        (argmax, max value, bracket history)
    """
    log = [(a, b)]
    dist = b - a
    if dist <= tol:
        x = 0.5 * (a + b)
        return x, func(x), log

    n = int(math.ceil(math.log(tol / dist) / math.log(INV_PHI)))
    c = a + INV_PHI_SQ * dist
    d = a + INV_PHI * dist
    yc, yd = func(c), func(d)
    for _ in range(n - 1):
        if yc > yd:
            b, d, yd = d, c, yc
            dist = INV_PHI * dist
            c = a + INV_PHI_SQ * dist
            yc = func(c)
        else:
            a, c, yc = c, d, yd
            dist = INV_PHI * dist
            d = a + INV_PHI * dist
            yd = func(d)
        log.append((a, b))
    return (c, yc, log) if yc > yd else (d, yd, log)


class RCurve:
    """ζ and r as functions of z for one model; subclasses pick the integration path."""

    stderr_available = False

    def tail_probability(self, z: np.ndarray) -> np.ndarray:
        """P[θ₂ ≥ z]."""
        raise NotImplementedError

    def positive_part(self, z: np.ndarray) -> np.ndarray:
        """E[(V₂ − z(V₁+V₂))₊]."""
        raise NotImplementedError

    def total_value(self) -> float:
        raise NotImplementedError

    def zeta(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return z - (2.0 * z - 1.0) * self.tail_probability(z)

    def r(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        zeta = self.zeta(z)
        if np.any(zeta <= 0.0):
            raise ModelDomainError("ζ(z) ≤ 0: the model violates the symmetric two-good assumptions")
        return (z * self.total_value() + 2.0 * self.positive_part(z)) / zeta

    def gap_stderr(self, z_star: float) -> float:
        return 0.0


class QuadratureRCurve(RCurve):
    """Exact path: integrals of g̃ and λ̃g̃ over t ∈ [0, 1−z]."""

    def __init__(self, model: RenormalizedModel):
        self.model = model
        self._total = integrate_pieces(
            lambda t: self.model.g_tilde_parts(t)[1], 0.0, 1.0, model.piece_breaks, model.ray_nodes
        ).value

    def _cumulative(self, upper: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """∫₀ˣ g̃, ∫₀ˣ λ̃g̃ and ∫₀ˣ (1−t)λ̃g̃ at each x in upper."""
        edges = piece_edges(0.0, 1.0, list(upper) + list(self.model.piece_breaks))
        x, w = piecewise_nodes(edges, _CELL_NODES)
        g, weighted = self.model.g_tilde_parts(x)
        shape = (len(edges) - 1, _CELL_NODES)
        cells = [
            np.concatenate([[0.0], np.cumsum((values * w).reshape(shape).sum(axis=1))])
            for values in (g, weighted, (1.0 - x) * weighted)
        ]
        index = np.clip(np.searchsorted(edges, upper), 0, len(edges) - 1)
        return cells[0][index], cells[1][index], cells[2][index]

    def tail_probability(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.size == 1:
            return np.array([self._point(lambda t: self.model.g_tilde(t), float(z[0]))])
        return self._cumulative(1.0 - z)[0]

    def positive_part(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.size == 1:
            zz = float(z[0])
            return np.array([self._point(lambda t: (1.0 - t - zz) * self.model.g_tilde_parts(t)[1], zz)])
        _, weighted, shifted = self._cumulative(1.0 - z)
        return shifted - z * weighted

    def _point(self, func, z: float) -> float:
        return integrate_pieces(func, 0.0, 1.0 - z, self.model.piece_breaks, self.model.ray_nodes).value

    def total_value(self) -> float:
        return self._total


class SampledRCurve(RCurve):
    """Monte Carlo path on one shared, symmetrized sample set."""

    stderr_available = True

    def __init__(self, values: np.ndarray):
        theta, totals = renormalize_many(values)
        top = theta.max(axis=1)
        order = np.argsort(top, kind="stable")
        self.top = top[order]
        self.totals = totals[order]
        self.n = len(values)
        # suffix sums over draws with max θ ≥ z
        self._suffix_t = np.concatenate([np.cumsum(self.totals[::-1])[::-1], [0.0]])
        self._suffix_tm = np.concatenate([np.cumsum((self.totals * self.top)[::-1])[::-1], [0.0]])
        self._total = float(self.totals.mean())

    def _start(self, z: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.top, z, side="left")

    def tail_probability(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return 0.5 * (self.n - self._start(z)) / self.n

    def positive_part(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        start = self._start(z)
        return 0.5 * (self._suffix_tm[start] - z * self._suffix_t[start]) / self.n

    def total_value(self) -> float:
        return self._total

    def _linearized(self, z: float) -> np.ndarray:
        numer = z * self.totals + self.totals * np.maximum(self.top - z, 0.0)
        denom = z - (2.0 * z - 1.0) * 0.5 * (self.top >= z)
        ratio = numer.mean() / denom.mean()
        return (numer - ratio * denom) / denom.mean()

    def gap_stderr(self, z_star: float) -> float:
        diff = self._linearized(z_star) - self._linearized(0.5)
        if self.n < 2:
            return 0.0
        return float(diff.std(ddof=1) / math.sqrt(self.n))


def _check_symmetric_two_goods(renorm: RenormalizedModel, s: Optional[Sequence[float]] = None) -> None:
    if renorm.n_goods != 2:
        raise TwoGoodNotApplicableError(f"two-good solver needs N = 2, model has N = {renorm.n_goods}")
    if not renorm.base.exchangeable:
        raise TwoGoodNotApplicableError("two-good solver needs an exchangeable model (not_applicable)")
    if s is not None:
        supplies = np.asarray(s, dtype=float)
        if supplies.size != 2 or not math.isclose(supplies[0], supplies[1], rel_tol=1e-12):
            raise TwoGoodNotApplicableError(f"two-good solver needs equal supplies, got {supplies.tolist()}")
        if supplies[0] <= 0.0:
            raise ModelDomainError("supplies must be strictly positive")


@dataclass
class TwoGoodOptions:
    """Controls of the z search."""

    z_grid_size: int = 2001
    golden_tol: float = 1e-6
    stat_sigmas: float = 3.0
    mode: Literal["quadrature", "mc", "auto"] = "auto"
    samples: int = 1_000_000
    seed: int = 20240601

    @classmethod
    def from_settings(cls, **overrides) -> "TwoGoodOptions":
        values = dict(
            z_grid_size=settings.twogood.z_grid_size,
            golden_tol=settings.twogood.golden_tol,
            stat_sigmas=settings.twogood.stat_sigmas,
            mode=settings.integration.mode,
            samples=settings.integration.mc_samples,
            seed=settings.integration.seed,
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def build_r_curve(model: ModelLike, opts: Optional[TwoGoodOptions] = None) -> RCurve:
    """Quadrature curve by default; a shared-sample curve in 'mc' mode."""
    opts = opts or TwoGoodOptions.from_settings()
    renorm = as_renormalized(model)
    _check_symmetric_two_goods(renorm)
    if opts.mode == "mc":
        return SampledRCurve(sample_values(renorm.base, opts.samples, opts.seed))
    return QuadratureRCurve(renorm)


def zeta(model: ModelLike, z: float, curve: Optional[RCurve] = None) -> float:
    """ζ(z) = z − (2z−1)·P[θ₂ ≥ z]."""
    _check_z(z)
    curve = curve or build_r_curve(model)
    return float(curve.zeta(np.array([z]))[0])


def r_value(model: ModelLike, z: float, curve: Optional[RCurve] = None) -> float:
    """r(z) = [z·E[V₁+V₂] + 2E[(V₂ − z(V₁+V₂))₊]] / ζ(z)."""
    _check_z(z)
    curve = curve or build_r_curve(model)
    return float(curve.r(np.array([z]))[0])


def _check_z(z: float) -> None:
    if not 0.5 <= z <= 1.0:
        raise ModelDomainError(f"z must lie in [1/2, 1], got {z}")


def _two_option_menu(s: float) -> Menu:
    return Menu.from_bundles([(2.0 * s, 0.0), (0.0, 2.0 * s)], ["good_0", "good_1"])


def _three_option_menu(s: float, z: float, zeta_value: float) -> Menu:
    q_low = s / zeta_value
    return Menu.from_bundles(
        [(q_low, 0.0), (0.0, q_low), (z * q_low, z * q_low)], ["good_0", "good_1", "mixed"]
    )


@dataclass
class TwoGoodSolution:
    """Result of the z search."""

    z_star: float
    zeta_star: float
    r_star: float
    r_half: float
    gap: Estimate
    menu: Menu
    r_curve: pd.DataFrame
    verdict: TwoGoodVerdict
    refinement_log: List[Tuple[float, float]] = field(default_factory=list)
    near_maximizers: List[float] = field(default_factory=list)
    alternative_menu: Optional[Menu] = None
    method: str = "quadrature"

    @property
    def q_low(self) -> float:
        return float(self.menu.bundles[0][0])

    def to_dict(self) -> Dict:
        return {
            "z_star": self.z_star,
            "zeta_star": self.zeta_star,
            "r_star": self.r_star,
            "r_half": self.r_half,
            "gap": self.gap.value,
            "gap_stderr": self.gap.stderr,
            "verdict": self.verdict.value,
            "menu": self.menu.to_dict(),
            "alternative_menu": None if self.alternative_menu is None else self.alternative_menu.to_dict(),
            "near_maximizers": self.near_maximizers,
            "refinement_log": [list(bracket) for bracket in self.refinement_log],
            "method": self.method,
        }


def optimize_z(model: ModelLike, s: Sequence[float], opts: Optional[TwoGoodOptions] = None) -> TwoGoodSolution:
    """
    Maximize r over [½, 1] and emit the optimal menu.

    Raises:
        TwoGoodNotApplicableError: For non-exchangeable models, N ≠ 2 or unequal supplies
    """
    opts = opts or TwoGoodOptions.from_settings()
    renorm = as_renormalized(model)
    _check_symmetric_two_goods(renorm, s)
    supply = float(np.asarray(s, dtype=float)[0])
    curve = build_r_curve(renorm, opts)
    method = "mc" if isinstance(curve, SampledRCurve) else "quadrature"

    grid = np.linspace(0.5, 1.0, opts.z_grid_size)
    zeta_grid = curve.zeta(grid)
    r_grid = curve.r(grid)
    table = pd.DataFrame({"z": grid, "zeta": zeta_grid, "r": r_grid})

    best = int(np.argmax(r_grid))
    z_star, r_star = float(grid[best]), float(r_grid[best])
    lo = max(float(grid[max(best - 1, 0)]), 0.5 + Z_MARGIN)
    hi = min(float(grid[min(best + 1, len(grid) - 1)]), 1.0 - Z_MARGIN)
    refinement_log: List[Tuple[float, float]] = []
    if hi > lo:
        z_refined, r_refined, refinement_log = golden_section_max(
            lambda z: float(curve.r(np.array([z]))[0]), lo, hi, opts.golden_tol
        )
        if r_refined > r_star:
            z_star, r_star = z_refined, r_refined

    r_half = float(r_grid[0])
    gap_value = r_star - r_half
    stderr = curve.gap_stderr(z_star) if z_star > 0.5 else 0.0
    gap = Estimate(gap_value, stderr)
    floor = _EXACT_FLOOR * max(1.0, abs(r_half))
    tolerance = max(opts.stat_sigmas * stderr, floor)
    near = [float(z) for z in grid[r_grid >= r_star - tolerance]]
    spread = float(np.nanmax(r_grid) - np.nanmin(r_grid))

    zeta_star = float(curve.zeta(np.array([z_star]))[0])
    three = _three_option_menu(supply, z_star, zeta_star)
    two = _two_option_menu(supply)
    # the sample cannot rank any z when the band covers the whole curve
    swamped = not math.isfinite(stderr) or (stderr > 0.0 and spread <= tolerance)
    if swamped:
        verdict, menu, alternative = TwoGoodVerdict.INDETERMINATE, two, three
    elif gap_value <= tolerance:
        verdict, menu, alternative = TwoGoodVerdict.TWO_OPTION_OPTIMAL, two, None
        z_star, zeta_star, r_star = 0.5, 0.5, r_half
    else:
        verdict, menu, alternative = TwoGoodVerdict.THREE_OPTION_OPTIMAL, three, None

    logger.info(
        "Two-good optimum",
        verdict=verdict.value,
        z_star=z_star,
        r_star=r_star,
        r_half=r_half,
        gap_stderr=stderr,
        method=method,
    )
    return TwoGoodSolution(
        z_star=z_star,
        zeta_star=zeta_star,
        r_star=r_star,
        r_half=r_half,
        gap=gap,
        menu=menu,
        r_curve=table,
        verdict=verdict,
        refinement_log=refinement_log,
        near_maximizers=near,
        alternative_menu=alternative,
        method=method,
    )


@dataclass
class TwoOptionReport:
    """Per-k check of the two-option optimality condition and its monotone sufficient condition."""

    holds: bool
    max_excess: float
    table: pd.DataFrame
    vacuous_k: List[float]
    sufficient_holds: bool
    sufficient_table: pd.DataFrame

    def to_dict(self) -> Dict:
        return {
            "holds": self.holds,
            "max_excess": self.max_excess,
            "vacuous_k": self.vacuous_k,
            "sufficient_holds": self.sufficient_holds,
            "table": self.table,
        }


def _conditional_gap_quadrature(renorm: RenormalizedModel, k: float, top_mean: float) -> Tuple[float, float, float]:
    lo, hi = k / (1.0 + k), 1.0 / (1.0 + k)
    if hi - lo <= 0.0:
        return math.nan, math.nan, 0.0
    breaks = tuple(renorm.piece_breaks) + (0.5,)

    def excess(t: np.ndarray) -> np.ndarray:
        small, large = np.minimum(t, 1.0 - t), np.maximum(t, 1.0 - t)
        return renorm.g_tilde_parts(t)[1] * (small - k * large)

    mass = integrate_pieces(renorm.g_tilde, lo, hi, breaks, renorm.ray_nodes).value
    if mass <= 0.0:
        return math.nan, math.nan, 0.0
    lhs = integrate_pieces(excess, lo, hi, breaks, renorm.ray_nodes).value / mass
    return lhs, top_mean * (1.0 - k), mass


def two_option_optimality_condition(
    model: ModelLike,
    k_grid: Optional[Sequence[float]] = None,
    mode: Literal["quadrature", "mc", "auto"] = "auto",
    samples: Optional[int] = None,
    seed: Optional[int] = None,
    ratio_grid_size: Optional[int] = None,
) -> TwoOptionReport:
    """
    Check E[V₍₁₎ − kV₍₂₎ | V₍₁₎/V₍₂₎ ≥ k] ≤ E[V₍₂₎](1−k) for each k (V₍₁₎ = min, V₍₂₎ = max).

    k values with an empty conditioning event are skipped. The monotone sufficient condition,
    E[V₁+V₂ | V₍₁₎/V₍₂₎ = ρ] non-increasing in ρ, is evaluated on a ratio grid and reported separately.
    """
    renorm = as_renormalized(model)
    _check_symmetric_two_goods(renorm)
    if k_grid is None:
        step = settings.twogood.k_grid_step
        k_grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    ks = np.asarray(k_grid, dtype=float)
    rows, vacuous = [], []

    if mode == "mc":
        values = sample_values(renorm.base, samples or settings.integration.mc_samples,
                               settings.integration.seed if seed is None else seed)
        small, large = values.min(axis=1), values.max(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(large > 0.0, small / large, 1.0)
        top_mean = float(large.mean())
        for k in ks:
            event = ratio >= k
            count = int(event.sum())
            if count < 2:
                vacuous.append(float(k))
                continue
            diff = small[event] - k * large[event]
            lhs = float(diff.mean())
            stderr = float(diff.std(ddof=1) / math.sqrt(count)) if count > 1 else 0.0
            rows.append((float(k), lhs, top_mean * (1.0 - k), stderr))
    else:
        top_mean = integrate_pieces(
            lambda t: renorm.g_tilde_parts(t)[1] * np.maximum(t, 1.0 - t),
            0.0, 1.0, tuple(renorm.piece_breaks) + (0.5,), renorm.ray_nodes,
        ).value
        for k in ks:
            lhs, rhs, mass = _conditional_gap_quadrature(renorm, float(k), top_mean)
            if mass <= 0.0:
                vacuous.append(float(k))
                continue
            rows.append((float(k), lhs, rhs, 0.0))

    table = pd.DataFrame(rows, columns=["k", "lhs", "rhs", "stderr"])
    table["excess"] = table["lhs"] - table["rhs"]
    allowance = np.maximum(settings.twogood.stat_sigmas * table["stderr"].to_numpy(), _EXACT_FLOOR)
    holds = bool(np.all(table["excess"].to_numpy() <= allowance)) if len(table) else True
    max_excess = float(table["excess"].max()) if len(table) else 0.0

    size = ratio_grid_size or settings.twogood.ratio_grid_size
    rhos = np.linspace(0.0, 1.0, size)
    t_high = 1.0 / (1.0 + rhos)
    t_low = 1.0 - t_high
    g_high, w_high = renorm.g_tilde_parts(t_high)
    g_low, w_low = renorm.g_tilde_parts(t_low)
    with np.errstate(invalid="ignore", divide="ignore"):
        conditional = (w_high + w_low) / (g_high + g_low)
    sufficient_table = pd.DataFrame({"ratio": rhos, "conditional_total": conditional})
    finite = conditional[np.isfinite(conditional)]
    rises = np.diff(finite) > 1e-9 * np.maximum(1.0, np.abs(finite[:-1]))
    sufficient_holds = not bool(np.any(rises))

    logger.info(
        "Two-option condition",
        holds=holds,
        max_excess=max_excess,
        vacuous=len(vacuous),
        sufficient_holds=sufficient_holds,
    )
    return TwoOptionReport(holds, max_excess, table, vacuous, sufficient_holds, sufficient_table)
