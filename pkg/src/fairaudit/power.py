"""Power and sample-size planning from pilot estimates.

The estimator variance is assumed to scale as ``1/n``: a pilot of size
``n0`` with estimator variance ``sigma2`` predicts ``n0 * sigma2 / n`` at
size ``n``.  The formulas use a one-sided rejection region, which is an
approximation for the two one-sided tests of an equivalence audit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import EffectAtThreshold, InvalidRange
from .normal import norm_cdf, norm_ppf


@dataclass(frozen=True)
class PilotSummary:
    n0: int
    sigma2_delta: float
    delta_star: float
    d: float = 0.0
    alpha: float = 0.05
    target_power: float = 0.80

    def __post_init__(self):
        if self.n0 < 1:
            raise InvalidRange("pilot size n0 must be at least 1")
        if not self.sigma2_delta > 0:
            raise InvalidRange("pilot variance sigma2_delta must be positive")
        if not 0 < self.alpha < 1:
            raise InvalidRange("alpha must lie in (0, 1)")
        if not 0 < self.target_power < 1:
            raise InvalidRange("target_power must lie in (0, 1)")

    @property
    def effect(self) -> float:
        return abs(self.delta_star - self.d)


def power_at(pilot: PilotSummary, n: int) -> float:
    """``1 - Phi(z_{1-alpha} - |delta* - d| / sigma(n))``."""
    if n < 1:
        raise InvalidRange("n must be at least 1")
    sigma = math.sqrt(pilot.n0 * pilot.sigma2_delta / n)
    return 1.0 - norm_cdf(norm_ppf(1.0 - pilot.alpha) - pilot.effect / sigma)


def required_n(pilot: PilotSummary) -> int:
    """Smallest ``n`` with ``n >= n0 sigma2 (z_{1-alpha} + z_{1-beta})^2 / effect^2``."""
    if pilot.effect == 0.0:
        raise EffectAtThreshold("true effect equals the threshold; no finite n has the target power")
    z = norm_ppf(1.0 - pilot.alpha) + norm_ppf(pilot.target_power)
    bound = pilot.n0 * pilot.sigma2_delta * z * z / pilot.effect**2
    n = max(1, math.ceil(bound))
    # ceil of a rounded float can land one off the true boundary
    while n > 1 and power_at(pilot, n - 1) >= pilot.target_power:
        n -= 1
    while power_at(pilot, n) < pilot.target_power:
        n += 1
    return n


def cdp_required_n(pilot: PilotSummary, d_level: float, d_ratio: float, sigma2_ratio: float | None = None) -> int:
    """Planning target for a CDP audit: the larger of the level and ratio tests.

    Both thresholds must be on the scale of ``pilot.delta_star`` (for a log
    specification: ``log(1 + delta / P_bar)`` and ``-log(tau)``).  The ratio
    test may use its own pilot variance via ``sigma2_ratio``.
    """
    level = replace(pilot, d=d_level)
    ratio = replace(pilot, d=d_ratio, sigma2_delta=sigma2_ratio or pilot.sigma2_delta)
    return max(required_n(level), required_n(ratio))
