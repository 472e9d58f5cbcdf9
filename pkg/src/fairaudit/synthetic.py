"""Synthetic deterministic pricing populations and Monte Carlo oracles.

Populations mimic territorial loading: prices depend on territory
relativities that the auditor only sees through a noisy territory-level
proxy, and minority residents can be concentrated in high-relativity
territories.  Subsamples drawn without replacement from a large population
stand in for i.i.d. draws, and the spread of an estimator across subsamples
is the brute-force reference for every analytic standard error.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .dataio import AuditDataset
from .errors import NonemptyGridRequired
from .glm import Family, GlmSpec, fit_glm, glm_naive_cov, glm_score_sandwich
from .normal import norm_ppf
from .regression import CovKind, DesignMatrix, classical_cov, fit_ols, sandwich_cov, se_ratio
from .shift import shift_components
from .tost import fit_cdp

RESPONSE = "price"
PROTECTED = "minority"
PROXY = "proxy"
INDIVIDUAL = "individual"
TERRITORY = "territory"
RELATIVITY = "relativity"


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``(seed, *stream)``; streams are order independent."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(stream))))


class PricingKind(str, enum.Enum):
    LINEAR = "Linear"
    EXP_LINEAR = "ExpLinear"
    TIERED_EXP = "TieredExp"


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    POISSON = "poisson"


@dataclass(frozen=True)
class PricingFunctionSpec:
    """Pricing function of the profile ``z = (relativity, proxy, individual, protected)``.

    ``Linear``: ``base + lam @ z``.  ``ExpLinear``: ``exp(base + lam @ z)``.
    ``TieredExp``: ExpLinear times ``exp(tier_loadings[k])`` where ``k`` is
    the tier of the individual factor under ``tier_breaks``.  With
    Gaussian noise and ``noise_sd == 0`` the price is a fixed function of
    ``z``; otherwise the stochastic control arm adds Gaussian noise of SD
    ``noise_sd``, or with ``noise == "poisson"`` replaces the price by a
    Poisson draw with that mean (``noise_sd`` is then unused).
    """

    kind: PricingKind = PricingKind.EXP_LINEAR
    lam: tuple[float, float, float, float] = (1.0, 0.2, 0.15, 0.0)
    base: float = 5.8
    tier_breaks: tuple[float, ...] = ()
    tier_loadings: tuple[float, ...] = ()
    noise_sd: float = 0.0
    noise: NoiseKind = NoiseKind.GAUSSIAN

    def __post_init__(self):
        object.__setattr__(self, "kind", PricingKind(self.kind))
        object.__setattr__(self, "noise", NoiseKind(self.noise))
        object.__setattr__(self, "lam", tuple(float(x) for x in self.lam))
        if len(self.lam) != 4:
            raise ValueError("lam needs four coefficients (relativity, proxy, individual, protected)")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if self.kind is PricingKind.TIERED_EXP and len(self.tier_loadings) != len(self.tier_breaks) + 1:
            raise ValueError("TieredExp needs one loading per tier (len(tier_breaks) + 1)")

    @property
    def deterministic(self) -> bool:
        return self.noise_sd == 0.0 and self.noise is NoiseKind.GAUSSIAN

    def evaluate(self, z: NDArray, rng: np.random.Generator | None = None) -> NDArray:
        """Price for each row of the ``(m, 4)`` profile matrix ``z``."""
        z = np.asarray(z, dtype=float)
        index = self.base + z @ np.asarray(self.lam)
        if self.kind is PricingKind.LINEAR:
            price = index
        else:
            if self.kind is PricingKind.TIERED_EXP:
                tier = np.searchsorted(np.asarray(self.tier_breaks), z[:, 2], side="right")
                index = index + np.asarray(self.tier_loadings)[tier]
            price = np.exp(index)
        if self.deterministic:
            return price
        if rng is None:
            raise ValueError("the stochastic arm needs an explicit generator")
        if self.noise is NoiseKind.POISSON:
            return rng.poisson(price).astype(float)
        return price + self.noise_sd * rng.standard_normal(len(price))


@dataclass(frozen=True)
class PopulationSpec:
    """Finite population of zip-level profiles.

    ``assoc`` in [0, 1] moves the minority share of each territory from the
    flat ``base_share`` (0) towards a share increasing steeply in the
    territory relativity (1).
    """

    size: int = 200_000
    n_territories: int = 200
    assoc: float = 0.8
    base_share: float = 0.05
    relativity_sd: float = 0.5
    proxy_noise_sd: float = 0.25
    individual_mean: float = 0.0
    individual_sd: float = 1.0
    concentration: float = 3.0
    seed: int = 20240101

    def __post_init__(self):
        if not 0.0 <= self.assoc <= 1.0:
            raise ValueError("assoc must lie in [0, 1]")
        if not 0.0 < self.base_share < 1.0:
            raise ValueError("base_share must lie in (0, 1)")
        if self.size < 1 or self.n_territories < 1:
            raise ValueError("size and n_territories must be positive")


def _profiles(pspec: PopulationSpec) -> dict[str, NDArray]:
    rng = make_rng(pspec.seed, 0)
    T = pspec.n_territories
    rel = rng.normal(0.0, pspec.relativity_sd, T)
    proxy_t = rel + rng.normal(0.0, pspec.proxy_noise_sd, T)
    zt = (rel - rel.mean()) / (rel.std() if T > 1 and rel.std() > 0 else 1.0)
    logit = math.log(pspec.base_share / (1.0 - pspec.base_share))
    steep = 1.0 / (1.0 + np.exp(-(logit + pspec.concentration * zt)))
    share = (1.0 - pspec.assoc) * pspec.base_share + pspec.assoc * steep
    terr = rng.integers(0, T, pspec.size)
    minority = (rng.random(pspec.size) < share[terr]).astype(float)
    indiv = rng.normal(pspec.individual_mean, pspec.individual_sd, pspec.size)
    return {
        TERRITORY: terr.astype(float),
        RELATIVITY: rel[terr],
        PROXY: proxy_t[terr],
        INDIVIDUAL: indiv,
        PROTECTED: minority,
    }


def profile_matrix(cols: Mapping[str, NDArray]) -> NDArray:
    return np.column_stack([cols[RELATIVITY], cols[PROXY], cols[INDIVIDUAL], cols[PROTECTED]])


def build_population(
    pspec: PopulationSpec,
    fspec: PricingFunctionSpec,
    target_gap: float | None = None,
) -> AuditDataset:
    """Generate the population as an :class:`AuditDataset`.

    Columns: ``price`` (response), ``minority`` (protected), ``proxy``,
    ``individual`` (control), ``territory`` and the unobserved
    ``relativity``.  When ``target_gap`` is set, the protected coefficient of
    the linear audit projection of the (log) price on ``1, minority, proxy,
    individual`` is shifted to exactly that value by loading ``minority`` into
    the pricing index, so the population truth is known by construction.
    """
    cols = _profiles(pspec)
    z = profile_matrix(cols)
    if target_gap is not None:
        fspec = calibrate_gap(cols, fspec, target_gap)
    price = fspec.evaluate(z, make_rng(pspec.seed, 1))
    cols[RESPONSE] = price
    header = (RESPONSE, PROTECTED, PROXY, INDIVIDUAL, TERRITORY, RELATIVITY)
    return AuditDataset(
        header=header,
        columns={h: cols[h] for h in header},
        response=RESPONSE,
        protected=PROTECTED,
        controls=(INDIVIDUAL,),
        proxies=(PROXY,),
        group=None,
    ).with_digest()


def calibrate_gap(cols, fspec: PricingFunctionSpec, target: float) -> PricingFunctionSpec:
    """Adjust the protected loading so the population CDP coefficient equals ``target``.

    The protected column is a regressor of the audit model, so adding ``c *
    minority`` to the regression response moves its coefficient by exactly
    ``c``; for exponential kinds this acts on the log price.
    """
    from dataclasses import replace

    X = audit_design(cols)
    z = profile_matrix(cols)
    detf = replace(fspec, noise_sd=0.0, noise=NoiseKind.GAUSSIAN)
    y = detf.evaluate(z)
    if fspec.kind is not PricingKind.LINEAR:
        y = np.log(y)
    current = fit_ols(X, y).beta_hat[1]
    lam = list(fspec.lam)
    lam[3] += target - current
    return replace(fspec, lam=tuple(lam))


def audit_design(cols, with_protected: bool = True) -> DesignMatrix:
    """``intercept, minority, proxy, individual`` (minority optional)."""
    parts = [(PROTECTED, cols[PROTECTED])] if with_protected else []
    parts += [(PROXY, cols[PROXY]), (INDIVIDUAL, cols[INDIVIDUAL])]
    return DesignMatrix.from_columns(parts)


def fit_cdp_subsample(data: AuditDataset, spec="Log"):
    """CDP fit of a synthetic sample with the proxy and individual factor as controls."""
    return fit_cdp(data, spec=spec, controls=(PROXY, INDIVIDUAL))


def residual_covariance_check(population: AuditDataset, log_response: bool = False) -> tuple[float, float]:
    """Sample ``Cov(A, r**2)`` of the full-population audit fit and its MC SE."""
    X = audit_design(population.columns)
    F = population.column(population.response)
    if log_response:
        F = np.log(F)
    r2 = fit_ols(X, F).residuals ** 2
    a = population.column(population.protected)
    prod = (a - a.mean()) * (r2 - r2.mean())
    n = len(prod)
    return float(prod.sum() / (n - 1)), float(prod.std(ddof=1) / math.sqrt(n))


# ---------------------------------------------------------------- statistics


@dataclass(frozen=True)
class Statistic:
    """Named estimator: maps a dataset to an estimate and its candidate SEs."""

    name: str
    kinds: tuple[str, ...]
    compute: Callable[[AuditDataset], tuple[float, dict[str, float]]] = field(repr=False)

    def __call__(self, data: AuditDataset):
        return self.compute(data)


def _ols_protected(data: AuditDataset, log_response: bool = False):
    F = data.column(data.response)
    if log_response:
        F = np.log(F)
    fit = fit_ols(audit_design(data.columns), F)
    ses = {CovKind.CLASSICAL.value: classical_cov(fit).se(1)}
    for k in (CovKind.HC0, CovKind.HC1, CovKind.HC2, CovKind.HC3):
        ses[k.value] = sandwich_cov(fit, kind=k).se(1)
    return float(fit.beta_hat[1]), ses


def _shift(data: AuditDataset):
    F = data.column(data.response)
    cols = data.columns
    X = DesignMatrix.from_columns([(PROXY, cols[PROXY]), (INDIVIDUAL, cols[INDIVIDUAL])])
    X_ext = DesignMatrix.from_columns(
        [(PROXY, cols[PROXY]), (PROTECTED, cols[PROTECTED]), (INDIVIDUAL, cols[INDIVIDUAL])]
    )
    fr, fe = fit_ols(X, F), fit_ols(X_ext, F)
    comps = shift_components(X, X_ext, F, 1, 1, fits=(fr, fe))
    est = float(fr.beta_hat[1] - fe.beta_hat[1])
    return est, {
        CovKind.SHIFT_FULL.value: math.sqrt(comps.full()),
        CovKind.SHIFT_INDEPENDENT.value: math.sqrt(comps.independent()),
    }


def _glm_protected(family: Family):
    spec = GlmSpec(family)

    def compute(data: AuditDataset):
        fit = fit_glm(audit_design(data.columns), data.column(data.response), spec)
        return float(fit.beta_hat[1]), {
            "naive": glm_naive_cov(fit).se(1),
            CovKind.SCORE_SANDWICH.value: glm_score_sandwich(fit).se(1),
        }

    return compute


_OLS_KINDS = ("Classical", "HC0", "HC1", "HC2", "HC3")

STATISTICS: dict[str, Statistic] = {
    "beta_a": Statistic("beta_a", _OLS_KINDS, _ols_protected),
    "log_beta_a": Statistic("log_beta_a", _OLS_KINDS, lambda d: _ols_protected(d, True)),
    "shift": Statistic("shift", ("ShiftFull", "ShiftIndependent"), _shift),
    "glm_gaussian_log": Statistic("glm_gaussian_log", ("naive", "ScoreSandwich"), _glm_protected(Family.GAUSSIAN_LOG)),
    "glm_poisson_log": Statistic("glm_poisson_log", ("naive", "ScoreSandwich"), _glm_protected(Family.POISSON_LOG)),
    "glm_gamma_log": Statistic("glm_gamma_log", ("naive", "ScoreSandwich"), _glm_protected(Family.GAMMA_LOG)),
}


def get_statistic(statistic) -> Statistic:
    if isinstance(statistic, Statistic):
        return statistic
    try:
        return STATISTICS[statistic]
    except KeyError:
        raise KeyError(f"unknown statistic {statistic!r}; choose from {sorted(STATISTICS)}") from None


@dataclass(frozen=True)
class OracleSummary:
    statistic: str
    n: int
    reps: int
    truth: float
    empirical_mean: float
    empirical_sd: float
    rms_se: dict[str, float]
    coverage: dict[str, float]
    estimates: NDArray = field(repr=False)
    ses: dict[str, NDArray] = field(repr=False)

    def se_over_sd(self, kind: str) -> float:
        return self.rms_se[kind] / self.empirical_sd if self.empirical_sd > 0 else math.nan

    def rejection_rate(self, kind: str, critical_value: float, null: float = 0.0) -> float:
        se = self.ses[kind]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (self.estimates - null) / se
        return float(np.mean(np.abs(z) > critical_value))


def subsample_indices(N: int, n: int, seed: int, rep: int) -> NDArray:
    idx = make_rng(seed, rep).choice(N, size=n, replace=False)
    return np.sort(idx)


def mc_variance_oracle(
    population: AuditDataset,
    n: int,
    reps: int,
    seed: int,
    statistic="beta_a",
    level: float = 0.95,
) -> OracleSummary:
    """Recompute ``statistic`` over ``reps`` subsamples of size ``n``.

    Replicate ``r`` draws its subsample from the stream ``(seed, r)`` alone,
    so results do not depend on execution order.  Coverage counts nominal
    ``level`` normal intervals that contain the full-population value.
    """
    if n > population.n:
        raise ValueError(f"subsample size {n} exceeds population size {population.n}")
    if reps < 100:
        raise ValueError("reps must be at least 100")
    stat = get_statistic(statistic)
    truth, _ = stat(population)
    est = np.empty(reps)
    ses = {k: np.empty(reps) for k in stat.kinds}
    for r in range(reps):
        sub = population.take(subsample_indices(population.n, n, seed, r))
        e, s = stat(sub)
        est[r] = e
        for k in stat.kinds:
            ses[k][r] = s[k]
    zc = norm_ppf(0.5 + level / 2.0)
    coverage = {k: float(np.mean(np.abs(est - truth) <= zc * ses[k])) for k in stat.kinds}
    rms = {k: float(np.sqrt(np.mean(ses[k] ** 2))) for k in stat.kinds}
    for a in (est, *ses.values()):
        a.setflags(write=False)
    return OracleSummary(
        statistic=stat.name,
        n=n,
        reps=reps,
        truth=float(truth),
        empirical_mean=float(np.mean(est)),
        empirical_sd=0.0 if np.all(est == est[0]) else float(np.std(est, ddof=1)),
        rms_se=rms,
        coverage=coverage,
        estimates=est,
        ses=ses,
    )


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ExperimentCell:
    name: str
    population: PopulationSpec
    pricing: PricingFunctionSpec
    n: int = 2000
    reps: int = 1000
    seed: int = 1
    statistic: str = "beta_a"


def default_grid(reps: int = 1000, n: int = 2000, seed: int = 1) -> list[ExperimentCell]:
    """One cell per misspecification scenario, from benign to territorial loading."""
    linear = PricingFunctionSpec(PricingKind.LINEAR, lam=(150.0, 40.0, 25.0, 0.0), base=370.0)
    explin = PricingFunctionSpec(PricingKind.EXP_LINEAR)
    return [
        ExperimentCell("scenario1_linear", PopulationSpec(assoc=0.0), linear, n, reps, seed),
        ExperimentCell("scenario2_nonlinear_unassociated", PopulationSpec(assoc=0.0), explin, n, reps, seed),
        ExperimentCell("scenario3_territorial_loading", PopulationSpec(assoc=0.8), explin, n, reps, seed),
    ]


EXPERIMENT_COLUMNS = (
    "cell", "pricing_kind", "assoc", "n", "reps", "seed", "statistic", "kind",
    "truth", "empirical_sd", "rms_se", "se_over_sd", "coverage", "rho",
)


def coverage_experiment(grid: Sequence[ExperimentCell]) -> list[dict]:
    """Coverage and SE-ratio table over a grid of populations.

    ``rho`` is the HC3-to-classical SE ratio of the protected coefficient on
    the full population.
    """
    if not grid:
        raise NonemptyGridRequired("coverage_experiment needs at least one grid cell")
    rows = []
    for cell in grid:
        pop = build_population(cell.population, cell.pricing)
        X = audit_design(pop.columns)
        rho = se_ratio(fit_ols(X, pop.column(RESPONSE)), j=1)
        summary = mc_variance_oracle(pop, cell.n, cell.reps, cell.seed, cell.statistic)
        for kind in get_statistic(cell.statistic).kinds:
            rows.append({
                "cell": cell.name,
                "pricing_kind": cell.pricing.kind.value,
                "assoc": cell.population.assoc,
                "n": cell.n,
                "reps": cell.reps,
                "seed": cell.seed,
                "statistic": summary.statistic,
                "kind": kind,
                "truth": summary.truth,
                "empirical_sd": summary.empirical_sd,
                "rms_se": summary.rms_se[kind],
                "se_over_sd": summary.se_over_sd(kind),
                "coverage": summary.coverage[kind],
                "rho": rho,
            })
    return rows


def write_experiment_csv(rows: Sequence[dict], dest) -> None:
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(EXPERIMENT_COLUMNS)
    for row in rows:
        w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in EXPERIMENT_COLUMNS])


def cell_from_dict(d: Mapping) -> ExperimentCell:
    d = dict(d)
    return ExperimentCell(
        name=d["name"],
        population=PopulationSpec(**d.get("population", {})),
        pricing=PricingFunctionSpec(**{
            k: tuple(v) if isinstance(v, list) else v for k, v in d.get("pricing", {}).items()
        }),
        n=int(d.get("n", 2000)),
        reps=int(d.get("reps", 1000)),
        seed=int(d.get("seed", 1)),
        statistic=d.get("statistic", "beta_a"),
    )


def cell_to_dict(cell: ExperimentCell) -> dict:
    d = asdict(cell)
    d["pricing"]["kind"] = cell.pricing.kind.value
    d["pricing"]["noise"] = cell.pricing.noise.value
    return d
