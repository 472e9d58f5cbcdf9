import numpy as np
import pytest

from fairaudit.dataio import AuditDataset


def make_dataset(cols, response="F", protected="A", controls=(), proxies=(), group=None):
    cols = {k: np.asarray(v, dtype=object if k == group else float) for k, v in cols.items()}
    return AuditDataset(
        header=tuple(cols),
        columns=cols,
        response=response,
        protected=protected,
        controls=tuple(controls),
        proxies=tuple(proxies),
        group=group,
    )


@pytest.fixture
def proxy_data():
    """Territory-style data where the proxy carries part of the protected effect."""
    rng = np.random.default_rng(11)
    n = 600
    A = (rng.random(n) < 0.3).astype(float)
    W = 0.8 * A + rng.normal(size=n)
    x = rng.normal(size=n)
    F = np.exp(5.0 + 0.3 * W + 0.2 * x + 0.25 * A + 0.1 * W**2)
    return make_dataset({"F": F, "A": A, "W": W, "x": x}, controls=("x",), proxies=("W",))


GROUP_GAPS = {"fair": (0.0, 3000), "small": (0.04, 60), "viol": (0.3, 3000)}


def audit_csv_bytes(groups=GROUP_GAPS, seed=5) -> bytes:
    """Three companies: a fair one, a small one and a violating one."""
    rng = np.random.default_rng(seed)
    lines = ["company,premium,minority,risk,territory"]
    for name, (gap, n) in groups.items():
        A = (rng.random(n) < 0.35).astype(int)
        W = 0.6 * A + rng.normal(size=n)
        x = rng.normal(size=n)
        F = np.exp(5.9 + gap * A + 0.2 * x + 0.3 * W + 0.05 * x**2 + 0.15 * rng.normal(size=n))
        for i in range(n):
            lines.append(f"{name},{float(F[i])!r},{A[i]},{float(x[i])!r},{float(W[i])!r}")
    return ("\n".join(lines) + "\n").encode()


CDP_CONFIG = {
    "criterion": "CDP",
    "protected_column": "minority",
    "response_column": "premium",
    "control_columns": ["risk", "territory"],
    "spec": "Log",
    "alpha": 0.05,
    "delta_pct": 0.05,
    "tau": 0.80,
    "group_column": "company",
    "mean_premium": 370.0,
}

PD_CONFIG = {
    "criterion": "PD",
    "protected_column": "minority",
    "response_column": "premium",
    "control_columns": ["risk"],
    "proxy_columns": ["territory"],
    "spec": "Log",
    "alpha": 0.05,
    "rho_min": 0.10,
    "pd_quantile": 1.645,
    "group_column": "company",
}


@pytest.fixture
def audit_files(tmp_path):
    import json

    data = tmp_path / "audit.csv"
    data.write_bytes(audit_csv_bytes())
    cdp = tmp_path / "cdp.json"
    cdp.write_text(json.dumps(CDP_CONFIG))
    pd = tmp_path / "pd.json"
    pd.write_text(json.dumps(PD_CONFIG))
    return {"data": data, "cdp": cdp, "pd": pd, "dir": tmp_path}
