"""Standard normal CDF and quantile from the standard library.

``math.erfc`` keeps full relative precision in both tails and
``statistics.NormalDist.inv_cdf`` implements Wichura's AS241 (about 1e-16
relative accuracy), so no tables or third-party code are needed.
"""

from __future__ import annotations

import math
from statistics import NormalDist

_STD = NormalDist()


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def norm_sf(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def norm_ppf(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {p}")
    return _STD.inv_cdf(p)
