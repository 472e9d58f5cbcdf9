"""Pre-registered audit pipeline: locked config, per-group tests, report."""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping

import numpy as np

from . import __version__
from .dataio import AuditDataset, Spec
from .errors import (
    AuditError,
    ConfigError,
    EffectAtThreshold,
    InsufficientObservations,
    InvalidRange,
    MissingField,
    UnknownKey,
)
from .power import PilotSummary, required_n
from .shift import ShiftTestResult, holm_adjust, pd_test
from .tost import CdpResult, ToleranceBands, Verdict, fit_cdp, tost_verdict

TOOL_NAME = "fairaudit"


class Criterion(str, enum.Enum):
    PD = "PD"
    CDP = "CDP"


@dataclass(frozen=True)
class AuditConfig:
    """Audit design fixed before the data are examined.

    ``mean_premium`` overrides the full-dataset mean response used to turn
    ``delta_pct`` into a currency margin.  ``registered_at`` is echoed as the
    manifest timestamp; reports carry no wall-clock time so that they stay
    byte-stable.
    """

    criterion: Criterion
    protected_column: str
    response_column: str
    control_columns: tuple[str, ...] = ()
    proxy_columns: tuple[str, ...] = ()
    spec: Spec = Spec.LOG
    alpha: float = 0.05
    delta_pct: float | None = None
    tau: float | None = 0.80
    rho_min: float = 0.10
    pd_quantile: float = 1.645
    group_column: str | None = None
    seed: int = 0
    mean_premium: float | None = None
    groups: tuple[str, ...] | None = None
    summary_columns: tuple[str, ...] = ()
    time_column: str | None = None
    model_version_column: str | None = None
    registered_at: str | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "criterion", Criterion(self.criterion))
            object.__setattr__(self, "spec", Spec(self.spec))
        except ValueError as exc:
            raise InvalidRange(str(exc)) from None
        for name in ("control_columns", "proxy_columns", "summary_columns"):
            object.__setattr__(self, name, tuple(getattr(self, name) or ()))
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(str(g) for g in self.groups))
        if not 0.0 < self.alpha < 0.5:
            raise InvalidRange(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if self.tau is not None and not 0.0 < self.tau < 1.0:
            raise InvalidRange(f"tau must lie in (0, 1), got {self.tau}")
        if self.rho_min < 0.0:
            raise InvalidRange(f"rho_min must be nonnegative, got {self.rho_min}")
        if not self.pd_quantile > 0.0:
            raise InvalidRange(f"pd_quantile must be positive, got {self.pd_quantile}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise InvalidRange(f"seed must be an unsigned integer, got {self.seed!r}")
        if self.delta_pct is not None and not self.delta_pct > 0.0:
            raise InvalidRange(f"delta_pct must be positive, got {self.delta_pct}")
        if self.mean_premium is not None and not self.mean_premium > 0.0:
            raise InvalidRange(f"mean_premium must be positive, got {self.mean_premium}")
        if self.criterion is Criterion.CDP and self.delta_pct is None:
            raise MissingField("CDP audits need delta_pct")
        if self.criterion is Criterion.PD and not self.proxy_columns:
            raise MissingField("PD audits need at least one proxy column")
        roles = [self.response_column, self.protected_column, *self.control_columns, *self.proxy_columns]
        if self.group_column:
            roles.append(self.group_column)
        if len(set(roles)) != len(roles):
            raise InvalidRange(f"column roles must name distinct columns, got {roles}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["criterion"] = self.criterion.value
        d["spec"] = self.spec.value
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def with_overrides(self, overrides: Mapping[str, Any]) -> "AuditConfig":
        d = self.to_dict()
        for key, value in overrides.items():
            if key not in d:
                raise UnknownKey(f"unknown config key {key!r}")
            d[key] = _coerce(value)
        return config_from_dict(d)


_FIELDS = {f.name for f in fields(AuditConfig)}
_REQUIRED = ("criterion", "protected_column", "response_column")


def _coerce(value):
    """Parse a ``--set`` value: JSON literal if possible, else a plain string."""
    if not isinstance(value, str):
        return value
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def config_from_dict(d: Mapping[str, Any]) -> AuditConfig:
    unknown = sorted(set(d) - _FIELDS)
    if unknown:
        raise UnknownKey(f"unknown config keys {unknown}")
    missing = [k for k in _REQUIRED if d.get(k) in (None, "")]
    if missing:
        raise MissingField(f"missing required config fields {missing}")
    kwargs = dict(d)
    for name in ("control_columns", "proxy_columns", "summary_columns", "groups"):
        if isinstance(kwargs.get(name), str):
            kwargs[name] = [kwargs[name]]
    try:
        return AuditConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def lock_config(text: str | bytes) -> AuditConfig:
    """Parse and validate a JSON config document."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(raw)


# ---------------------------------------------------------------- results


def _json_float(x):
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return x


def _shift_dict(r: ShiftTestResult) -> dict:
    return {
        "proxy": r.proxy,
        "phi": _json_float(r.phi),
        "phi_prime": _json_float(r.phi_prime),
        "kappa": _json_float(r.kappa),
        "delta_pd": _json_float(r.delta_pd),
        "relative_shift": _json_float(r.relative_shift),
        "se_independent": _json_float(r.se_independent),
        "se_full": _json_float(r.se_full),
        "z_independent": _json_float(r.z_independent),
        "z_full": _json_float(r.z_full),
        "p_value": _json_float(r.p_value),
        "critical_value": _json_float(r.critical_value),
        "significant": r.significant,
        "flagged": r.flagged,
        "diagnostics": list(r.diagnostics),
    }


def _cdp_dict(r: CdpResult, bands: ToleranceBands) -> dict:
    return {
        "beta_a": _json_float(r.beta_a),
        "se_hc3": _json_float(r.se),
        "ci": [_json_float(r.ci_low), _json_float(r.ci_high)],
        "ci_level": 1.0 - 2.0 * bands.alpha,
        "ratio": _json_float(r.ratio),
        "dollar_gap": _json_float(r.dollar_gap),
        "dollar_ci": [_json_float(r.dollar_ci[0]), _json_float(r.dollar_ci[1])],
        "log_band": None if bands.log_band is None else [_json_float(b) for b in bands.log_band],
        "dollar_band": [_json_float(b) for b in bands.dollar_band],
        "mu0": _json_float(r.mu0),
        "controls": {k: _json_float(v) for k, v in r.control_coefficients.items()},
        "r_squared": _json_float(r.r_squared),
        "verdict": r.verdict.value,
    }


@dataclass(frozen=True)
class GroupResult:
    group: str
    n: int
    verdict: Verdict
    detail: Mapping[str, Any]
    diagnostics: tuple[str, ...] = ()
    recommendation: str | None = None

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "n": self.n,
            "verdict": self.verdict.value,
            "detail": dict(self.detail),
            "diagnostics": list(self.diagnostics),
            "recommendation": self.recommendation,
        }


@dataclass(frozen=True)
class AuditReport:
    config: AuditConfig
    manifest: Mapping[str, Any]
    groups: tuple[GroupResult, ...]
    warnings: tuple[str, ...] = ()

    @property
    def counts(self) -> dict[str, int]:
        out = {v.value: 0 for v in Verdict}
        for g in self.groups:
            out[g.verdict.value] += 1
        if self.config.criterion is Criterion.PD:
            tests = [t for g in self.groups for t in g.detail.get("tests", [])]
            out["significant_tests"] = sum(t["significant"] for t in tests)
            out["flagged_tests"] = sum(t["flagged"] for t in tests)
        return out

    @property
    def any_fail(self) -> bool:
        return any(g.verdict is Verdict.FAIL for g in self.groups)

    @property
    def any_insufficient(self) -> bool:
        return any(g.verdict is Verdict.INSUFFICIENT for g in self.groups)

    @property
    def exit_code(self) -> int:
        return exit_code_for(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "tool": {"name": TOOL_NAME, "version": __version__},
            "config": self.config.to_dict(),
            "config_digest": self.config.digest,
            "manifest": dict(self.manifest),
            "criterion": self.config.criterion.value,
            "groups": [g.to_dict() for g in self.groups],
            "summary": self.counts,
            "warnings": list(self.warnings),
            "verdict_rule": VERDICT_RULE[self.config.criterion],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def to_text(self) -> str:
        return render_text(json.loads(self.to_json()))


VERDICT_RULE = {
    Criterion.CDP: (
        "Pass when the (1-2 alpha) interval for the protected gap lies inside every "
        "active band; Fail when it misses any band entirely; otherwise "
        "InsufficientInformation. Groups whose test cannot be run are "
        "InsufficientInformation."
    ),
    Criterion.PD: (
        "A proxy is flagged when |z_full| exceeds the Holm-adjusted threshold and "
        "the relative shift exceeds rho_min. A group Fails when any proxy is "
        "flagged, Passes otherwise; groups whose test cannot be run are "
        "InsufficientInformation."
    ),
}


def _fmt(x, spec=".4f"):
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else (
        x if isinstance(x, str) else format(x, spec)
    )


def _text_detail(criterion: str, g: Mapping) -> str:
    d = g["detail"]
    if not d:
        return ""
    if criterion == Criterion.CDP.value:
        lo, hi = d["ci"]
        out = f": beta_A={_fmt(d['beta_a'])} CI=[{_fmt(lo)}, {_fmt(hi)}]"
        if d.get("ratio") is not None:
            out += f" ratio={_fmt(d['ratio'], '.3f')}"
        return out + f" gap={_fmt(d['dollar_gap'], '.2f')}"
    parts = []
    for t in d.get("tests", []):
        mark = "FLAG" if t["flagged"] else ("sig" if t["significant"] else "ns")
        parts.append(f"{t['proxy']}: z_full={_fmt(t['z_full'], '.2f')} shift={_fmt(t['relative_shift'], '.3f')} {mark}")
    return ": " + "; ".join(parts)


def render_text(report: Mapping) -> str:
    """Plain-text summary of a report dictionary (as produced by ``to_dict``)."""
    c = report["config"]
    m = report["manifest"]
    lines = [
        f"{report['tool']['name']} {report['tool']['version']} audit report ({c['criterion']}, {c['spec']} spec)",
        f"dataset digest: {m['dataset_digest']}",
        f"config digest:  {report['config_digest']}",
        f"records: {m['record_count']}  groups: {len(report['groups'])}",
        "",
    ]
    for g in report["groups"]:
        lines.append(f"[{g['verdict']}] {g['group']} (n={g['n']})" + _text_detail(c["criterion"], g))
        for d in g["diagnostics"]:
            lines.append(f"    note: {d}")
        if g["recommendation"]:
            lines.append(f"    next: {g['recommendation']}")
    lines.append("")
    lines.append("summary: " + ", ".join(f"{k}={v}" for k, v in report["summary"].items()))
    for w in report["warnings"]:
        lines.append(f"warning: {w}")
    return "\n".join(lines) + "\n"


def exit_code_for(report: Mapping) -> int:
    """0 when no group Fails or is insufficient, 2 on any Fail, else 3."""
    verdicts = {g["verdict"] for g in report["groups"]}
    if Verdict.FAIL.value in verdicts:
        return 2
    if Verdict.INSUFFICIENT.value in verdicts:
        return 3
    return 0


# ---------------------------------------------------------------- pipeline


def _margin_on_beta_scale(c: AuditConfig, mean_premium: float) -> float:
    if c.spec is Spec.LOG:
        m = math.log1p(c.delta_pct)
        if c.tau is not None:
            m = min(m, -math.log(c.tau))
        return m
    m = c.delta_pct * mean_premium
    if c.tau is not None:
        m = min(m, mean_premium * (1.0 - c.tau))
    return m


def _collect_more(c: AuditConfig, res: CdpResult, mean_premium: float) -> str:
    margin = _margin_on_beta_scale(c, mean_premium)
    base = "collect more data"
    try:
        pilot = PilotSummary(res.n, res.n * res.se**2, abs(res.beta_a), d=margin, alpha=c.alpha)
        if abs(res.beta_a) >= margin:
            return base + " (point estimate at or beyond the margin; more data is unlikely to yield Pass)"
        return base + f" (about {required_n(pilot)} observations for 80% power at the current estimate)"
    except (EffectAtThreshold, InvalidRange):
        return base


def _run_cdp(c: AuditConfig, sub: AuditDataset, mean_premium: float, bands: ToleranceBands):
    fit = fit_cdp(sub, spec=c.spec, controls=c.control_columns)
    res = tost_verdict(fit, bands, c.spec, protected=sub.protected)
    rec = None
    if res.verdict is Verdict.INSUFFICIENT:
        rec = _collect_more(c, res, mean_premium)
    elif res.verdict is Verdict.FAIL:
        rec = "remediation: review rating factors driving the conditional gap"
    return res.verdict, _cdp_dict(res, bands), rec


def _run_pd(c: AuditConfig, sub: AuditDataset):
    results = []
    for proxy in c.proxy_columns:
        others = tuple(p for p in c.proxy_columns if p != proxy)
        results.append(
            pd_test(sub, proxy, controls=others + c.control_columns, alpha=c.alpha,
                    rho_min=c.rho_min, critical_value=c.pd_quantile, spec=c.spec)
        )
    if len(results) > 1:
        results = holm_adjust(results, c.alpha, c.pd_quantile)
    flagged = [r.proxy for r in results if r.flagged]
    verdict = Verdict.FAIL if flagged else Verdict.PASS
    rec = f"investigate proxies {flagged} for absorbed protected-attribute effect" if flagged else None
    diags = tuple(f"{r.proxy}: {d}" for r in results for d in r.diagnostics)
    return verdict, {"tests": [_shift_dict(r) for r in results]}, rec, diags


def _manifest(c: AuditConfig, data: AuditDataset) -> dict:
    m = {
        "dataset_digest": data.digest,
        "source": data.source,
        "record_count": data.n,
        "columns": list(data.header),
        "timestamp": c.registered_at,
        "tool_version": __version__,
    }
    if c.time_column and c.time_column in data.columns:
        t = sorted(str(v) for v in data.column(c.time_column))
        m["time_range"] = [t[0], t[-1]] if t else None
    if c.model_version_column and c.model_version_column in data.columns:
        m["model_versions"] = sorted({str(v) for v in data.column(c.model_version_column)})
    return m


def run_audit(config: AuditConfig, data: AuditDataset) -> AuditReport:
    """Run the configured criterion in every group, independently.

    No correction is applied across groups.  Within a group, several PD
    proxies are Holm-adjusted.  A group whose test raises is reported as
    InsufficientInformation carrying the error as a diagnostic.
    """
    c = config
    warnings = []
    index = data.group_index()
    if c.groups is not None:
        extra = sorted(set(index) - set(c.groups))
        if extra:
            warnings.append(f"groups present in data but not registered, skipped: {extra}")
        index = {g: index.get(g, np.array([], dtype=int)) for g in sorted(c.groups)}

    mean_premium = c.mean_premium
    bands = None
    if c.criterion is Criterion.CDP:
        if mean_premium is None:
            mean_premium = float(np.mean(data.column(data.response)))
            warnings.append(f"mean premium taken from the full dataset: {mean_premium!r}")
        bands = ToleranceBands.from_percent(c.delta_pct, c.tau, c.alpha, mean_premium)
        if c.spec is Spec.LEVEL and c.tau is not None:
            warnings.append("Level spec with tau set: the ratio condition uses gap / mean premium")

    groups = []
    for gid, idx in index.items():
        sub = data.take(idx)
        diags: tuple[str, ...] = ()
        try:
            if sub.n == 0:
                raise InsufficientObservations("group has no observations")
            if c.criterion is Criterion.CDP:
                verdict, detail, rec = _run_cdp(c, sub, mean_premium, bands)
            else:
                verdict, detail, rec, diags = _run_pd(c, sub)
        except AuditError as exc:
            verdict, detail = Verdict.INSUFFICIENT, {}
            diags = (f"{type(exc).__name__}: {exc}",)
            rec = "resolve the diagnostic or collect more data, then rerun the registered test"
        groups.append(GroupResult(gid, sub.n, verdict, detail, diags, rec))
    return AuditReport(c, _manifest(c, data), tuple(groups), tuple(warnings))
