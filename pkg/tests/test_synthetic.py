import io
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fairaudit.errors import NonemptyGridRequired
from fairaudit.regression import fit_ols, se_ratio
from fairaudit.synthetic import (
    ExperimentCell,
    PopulationSpec,
    PricingFunctionSpec,
    PricingKind,
    audit_design,
    build_population,
    coverage_experiment,
    default_grid,
    mc_variance_oracle,
    profile_matrix,
    residual_covariance_check,
    subsample_indices,
    write_experiment_csv,
)

SMALL = PopulationSpec(size=20_000, n_territories=100)


def test_population_is_reproducible():
    a = build_population(SMALL, PricingFunctionSpec())
    b = build_population(SMALL, PricingFunctionSpec())
    assert a.digest == b.digest
    c = build_population(replace(SMALL, seed=SMALL.seed + 1), PricingFunctionSpec())
    assert c.digest != a.digest


def test_deterministic_re_evaluation():
    pop = build_population(SMALL, PricingFunctionSpec())
    z = profile_matrix(pop.columns)
    f = PricingFunctionSpec()
    assert np.array_equal(f.evaluate(z), f.evaluate(z))
    assert np.array_equal(f.evaluate(z), pop.column("price"))
    tiered = PricingFunctionSpec(PricingKind.TIERED_EXP, tier_breaks=(-1.0, 1.0), tier_loadings=(0.0, 0.1, 0.3))
    assert np.array_equal(tiered.evaluate(z), tiered.evaluate(z))
    noisy = replace(f, noise_sd=1.0)
    with pytest.raises(ValueError):
        noisy.evaluate(z)


def test_linear_in_audit_span_is_exact():
    f = PricingFunctionSpec(PricingKind.LINEAR, lam=(0.0, 40.0, 25.0, 3.0), base=370.0)
    pop = build_population(replace(SMALL, assoc=0.0), f)
    fit = fit_ols(audit_design(pop.columns), pop.column("price"))
    assert np.all(fit.residuals == 0.0)
    for j in range(fit.p):
        assert se_ratio(fit, j=j) == 1.0


def test_association_creates_residual_covariance():
    pop = build_population(replace(PopulationSpec(), size=50_000), PricingFunctionSpec())
    cov, se = residual_covariance_check(pop)
    assert abs(cov) > 5 * se


def test_calibrated_gap_is_exact():
    pop = build_population(SMALL, PricingFunctionSpec(), target_gap=0.3)
    fit = fit_ols(audit_design(pop.columns), np.log(pop.column("price")))
    assert fit.beta_hat[1] == pytest.approx(0.3, abs=1e-10)


def test_streams_are_order_independent():
    idx = [subsample_indices(1000, 50, 9, r) for r in range(5)]
    assert np.array_equal(subsample_indices(1000, 50, 9, 3), idx[3])
    assert not np.array_equal(idx[0], idx[1])
    assert np.all(np.diff(idx[0]) > 0)


def test_oracle_reproducible_and_degenerate():
    pop = build_population(replace(SMALL, size=2000), PricingFunctionSpec())
    s1 = mc_variance_oracle(pop, 300, 100, 4)
    s2 = mc_variance_oracle(pop, 300, 100, 4)
    assert np.array_equal(s1.estimates, s2.estimates)
    assert s1.coverage == s2.coverage
    full = mc_variance_oracle(pop, pop.n, 100, 4)
    assert full.empirical_sd == 0.0
    assert np.all(full.estimates == full.truth)
    with pytest.raises(ValueError):
        mc_variance_oracle(pop, pop.n + 1, 100, 4)
    with pytest.raises(ValueError):
        mc_variance_oracle(pop, 10, 99, 4)


def test_stochastic_linear_arm_both_covers():
    f = PricingFunctionSpec(PricingKind.LINEAR, lam=(0.0, 40.0, 25.0, 0.0), base=370.0, noise_sd=30.0)
    pop = build_population(replace(PopulationSpec(), assoc=0.0, size=100_000), f)
    s = mc_variance_oracle(pop, 1000, 1500, 2)
    for kind in ("Classical", "HC3"):
        assert 0.93 <= s.coverage[kind] <= 0.97, (kind, s.coverage[kind])
    assert abs(s.coverage["Classical"] - s.coverage["HC3"]) < 0.02


def test_coverage_experiment_taxonomy():
    rows = coverage_experiment(default_grid(reps=300))
    rho = {r["cell"]: r["rho"] for r in rows}
    assert abs(rho["scenario1_linear"] - 1.0) < 0.05
    assert abs(rho["scenario3_territorial_loading"] - 1.0) > 0.1
    buf = io.StringIO()
    write_experiment_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == len(rows) + 1 and lines[0].startswith("cell,pricing_kind")
    with pytest.raises(NonemptyGridRequired):
        coverage_experiment([])
