"""
Closed-form oracles for the uniform-square and corner-mass examples.

Used by the acceptance checks in reproduce-examples and by the tests.
"""

import math
from typing import Tuple

import numpy as np
from scipy.optimize import brentq

# coefficients of the corner-mass optimality quartic, highest degree first
OPTIMALITY_QUARTIC = (4389.0, -836.0, 382.0, -1140.0, 85.0)
CORNER_BREAK = 5.0 / 9.0


def _upper_half(t0: float) -> Tuple[float, bool]:
    """Reflect t₀ into [½, 1); the flag says whether the goods were swapped."""
    if not 0.0 < t0 < 1.0:
        raise ValueError(f"t0 must lie in (0, 1), got {t0}")
    return (t0, False) if t0 >= 0.5 else (1.0 - t0, True)


def uniform_g(t: float) -> float:
    top = max(t, 1.0 - t)
    return 1.0 / (2.0 * top * top)


def uniform_moments(t0: float) -> Tuple[np.ndarray, np.ndarray]:
    """(M, A) of the uniform square when the split point is t₀."""
    u, swapped = _upper_half(t0)
    m_first = (1.0 - u) / (2.0 * u)
    a_first = (1.0 - u) / (3.0 * u)
    m_second = (3.0 * u - 1.0) / (2.0 * u)
    a_second = 1.0 / 3.0 + (2.0 * u - 1.0) / (6.0 * u * u)
    M, A = np.array([m_first, m_second]), np.array([a_first, a_second])
    return (M[::-1], A[::-1]) if swapped else (M, A)


def uniform_quantities(t0: float) -> np.ndarray:
    """A quantity vector with split point t₀ (q₁ = 1)."""
    return np.array([1.0, t0 / (1.0 - t0)])


def uniform_shadow_costs(t0: float, convention: str = "barycentric") -> np.ndarray:
    """
    c(t₀) for the uniform square from the rational M, A and interface terms.

    Under 'barycentric' the interface terms are q₂T₁₂ = √2·g̃(t₀)·t₀² and q₁T₂₁ = √2·g̃(t₀)·(1−t₀)²;
    'switching' divides both by √2.
    """
    u, swapped = _upper_half(t0)
    M, A = uniform_moments(u)
    kappa = math.sqrt(2.0) if convention == "barycentric" else 1.0
    g0 = uniform_g(u)
    into_first = kappa * g0 * u * u
    into_second = kappa * g0 * (1.0 - u) ** 2
    J = np.array(
        [
            [M[0] + into_first * (1.0 - u) / u, -into_first],
            [-into_second, M[1] + into_second * u / (1.0 - u)],
        ]
    )
    c = np.linalg.solve(J, A)
    return c[::-1] if swapped else c


def corner_mass_r(z: float) -> float:
    """r(z) for corner_mass(0.2, 20, 5/24): two rational branches meeting at z = 5/9."""
    if not 0.5 <= z <= 1.0:
        raise ValueError(f"z must lie in [1/2, 1], got {z}")
    if z <= CORNER_BREAK:
        numerator = 1729 * z**3 - 2929 * z**2 + 1607 * z - 300
        denominator = 30.0 * (95 * z**3 - 155 * z**2 + 83 * z - 15)
    else:
        numerator = 2.0 * (19 * z**3 + 347 * z**2 - 31 * z + 25)
        denominator = 15.0 * (38 * z**3 + z**2 + 4 * z + 5)
    return numerator / denominator


def optimality_quartic(z: float) -> float:
    return float(np.polyval(OPTIMALITY_QUARTIC, z))


def corner_mass_z_star() -> float:
    """Root of the optimality quartic in [1/2, 1]."""
    return float(brentq(optimality_quartic, 0.5, 1.0, xtol=1e-14))


def uniform_zeta(z: float) -> float:
    """ζ(z) for the uniform square: P[θ₂ ≥ z] = k/2 with k = (1−z)/z."""
    k = (1.0 - z) / z
    return z - (2.0 * z - 1.0) * k / 2.0


def uniform_r(z: float) -> float:
    """r(z) for the uniform square."""
    k = (1.0 - z) / z
    return (z + z * k * k / 3.0) / uniform_zeta(z)
