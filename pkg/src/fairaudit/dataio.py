"""CSV ingestion, schema validation and by-group summary statistics."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import (
    MissingColumn,
    NonBinaryProtected,
    NonpositiveResponse,
    NonpositiveResponseForLog,
    ParseError,
)

# decimal notation only: no thousands separators, no nan/inf, no underscores
_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


class Spec(str, enum.Enum):
    LEVEL = "Level"
    LOG = "Log"


@dataclass(frozen=True)
class AuditDataset:
    """Immutable observation table with role bindings.

    Bound columns are float arrays; the group column and any unbound columns
    are kept as strings.
    """

    header: tuple[str, ...]
    columns: Mapping[str, NDArray]
    response: str
    protected: str
    controls: tuple[str, ...] = ()
    proxies: tuple[str, ...] = ()
    group: str | None = None
    digest: str | None = None
    source: str | None = None
    extra_bound: tuple[str, ...] = field(default=())

    def __post_init__(self):
        for name, arr in self.columns.items():
            arr.setflags(write=False)
        lengths = {len(a) for a in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError("columns have different lengths")

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def bound_numeric(self) -> tuple[str, ...]:
        names = [self.response, self.protected, *self.controls, *self.proxies, *self.extra_bound]
        return tuple(dict.fromkeys(names))

    def column(self, name: str) -> NDArray:
        try:
            return self.columns[name]
        except KeyError:
            raise MissingColumn(f"column {name!r} not in dataset") from None

    def take(self, index) -> "AuditDataset":
        index = np.asarray(index)
        cols = {k: v[index] for k, v in self.columns.items()}
        return AuditDataset(
            self.header, cols, self.response, self.protected, self.controls,
            self.proxies, self.group, None, self.source, self.extra_bound,
        )

    def group_index(self) -> dict[str, NDArray]:
        """Row indices per group id, ordered by group id."""
        if self.group is None:
            return {"all": np.arange(self.n)}
        g = np.asarray([str(v) for v in self.column(self.group)], dtype=object)
        return {key: np.flatnonzero(g == key) for key in sorted(set(g.tolist()))}

    def group_counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.group_index().items()}

    def with_digest(self) -> "AuditDataset":
        buf = io.StringIO()
        write_csv(self, buf)
        digest = hashlib.sha256(buf.getvalue().encode("utf-8")).hexdigest()
        return AuditDataset(
            self.header, self.columns, self.response, self.protected, self.controls,
            self.proxies, self.group, digest, self.source, self.extra_bound,
        )


def response_for_spec(data: AuditDataset, spec) -> NDArray:
    F = data.column(data.response)
    if Spec(spec) is Spec.LOG:
        if np.any(F <= 0):
            raise NonpositiveResponseForLog("log specification needs a strictly positive response")
        return np.log(F)
    return F


def _parse_number(text: str, row: int, col: str) -> float:
    s = text.strip()
    if s == "":
        raise ParseError(row, col, "missing value in bound column")
    if not _NUMBER.match(s):
        raise ParseError(row, col, f"not a decimal number: {text!r}")
    return float(s)


def parse_csv_bytes(
    raw: bytes,
    *,
    response: str,
    protected: str,
    controls: Sequence[str] = (),
    proxies: Sequence[str] = (),
    group: str | None = None,
    extra_bound: Sequence[str] = (),
    passthrough: Sequence[str] = (),
    positive_response: bool = False,
    source: str | None = None,
) -> AuditDataset:
    """Parse CSV bytes into an :class:`AuditDataset`.

    Row numbers in errors count data records from 1 (the header is row 0).
    ``passthrough`` columns are bound as strings without numeric parsing.
    """
    text = raw.decode("utf-8-sig")
    reader = csv.reader(io.StringIO(text, newline=""), strict=True)
    try:
        header = tuple(h.strip() for h in next(reader))
    except StopIteration:
        raise ParseError(0, "", "empty file, header row required") from None
    except csv.Error as exc:
        raise ParseError(0, "", str(exc)) from None
    if len(set(header)) != len(header):
        raise ParseError(0, "", f"duplicate column names in header {header}")

    numeric = list(dict.fromkeys([response, protected, *controls, *proxies, *extra_bound]))
    wanted = numeric + ([group] if group else []) + list(passthrough)
    for name in wanted:
        if name not in header:
            raise MissingColumn(f"column {name!r} not in header {header}")
    pos = {name: header.index(name) for name in header}

    values: dict[str, list] = {name: [] for name in header}
    row = 0
    try:
        for row, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(row, "", f"expected {len(header)} fields, found {len(rec)}")
            for name in header:
                cell = rec[pos[name]]
                if name in numeric:
                    x = _parse_number(cell, row, name)
                    if name == protected and x not in (0.0, 1.0):
                        raise NonBinaryProtected(row, name, f"protected value {cell!r} is not 0 or 1")
                    if name == response and positive_response and x <= 0:
                        raise NonpositiveResponse(row, name, f"response {cell!r} must be positive")
                    values[name].append(x)
                else:
                    if name == group and cell.strip() == "":
                        raise ParseError(row, name, "missing group id")
                    values[name].append(cell)
    except csv.Error as exc:
        raise ParseError(row + 1, "", str(exc)) from None

    columns = {}
    for name in header:
        if name in numeric:
            columns[name] = np.asarray(values[name], dtype=float)
        else:
            columns[name] = np.asarray(values[name], dtype=object)
    return AuditDataset(
        header=header,
        columns=columns,
        response=response,
        protected=protected,
        controls=tuple(controls),
        proxies=tuple(proxies),
        group=group,
        digest=hashlib.sha256(raw).hexdigest(),
        source=source,
        extra_bound=tuple(c for c in extra_bound if c not in (response, protected, *controls, *proxies)),
    )


def load_csv(path, config) -> AuditDataset:
    """Load and validate an audit CSV using the role bindings of ``config``.

    Raises
    ------
    ParseError
        Unparseable or missing value in a bound column (row and column given).
    MissingColumn
        A configured column is absent from the header.
    NonBinaryProtected
        Protected column value other than 0/1.
    NonpositiveResponse
        Nonpositive response under a log specification.
    """
    path = Path(path)
    raw = path.read_bytes()
    proxies = tuple(getattr(config, "proxy_columns", ()) or ())
    extra = tuple(getattr(config, "summary_columns", ()) or ())
    passthrough = tuple(
        c for c in (getattr(config, "time_column", None), getattr(config, "model_version_column", None)) if c
    )
    return parse_csv_bytes(
        raw,
        response=config.response_column,
        protected=config.protected_column,
        controls=tuple(config.control_columns),
        proxies=proxies,
        group=config.group_column,
        extra_bound=extra,
        passthrough=passthrough,
        positive_response=Spec(config.spec) is Spec.LOG,
        source=path.name,
    )


def _format_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return str(int(f)) if f.is_integer() and abs(f) < 1e15 else repr(f)
    return str(v)


def write_csv(data: AuditDataset, dest) -> None:
    """Write ``data`` as CSV; floats use shortest round-trip representation."""
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.header)
        cols = [data.columns[h] for h in data.header]
        for i in range(data.n):
            w.writerow([_format_cell(c[i]) for c in cols])
    finally:
        if own:
            fh.close()


def datasets_equal(a: AuditDataset, b: AuditDataset) -> bool:
    if a.header != b.header or a.n != b.n:
        return False
    for h in a.header:
        x, y = a.columns[h], b.columns[h]
        if x.dtype.kind == "f" or y.dtype.kind == "f":
            if not np.array_equal(np.asarray(x, float), np.asarray(y, float)):
                return False
        elif list(x) != list(y):
            return False
    return True


@dataclass(frozen=True)
class SummaryRow:
    column: str
    mean: float
    sd: float
    max: float
    mean_unprotected: float
    mean_protected: float
    ratio: float


@dataclass(frozen=True)
class Summary:
    n: int
    n_protected: int
    rows: tuple[SummaryRow, ...]

    def to_csv(self, dest) -> None:
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(["column", "mean", "sd", "max", "mean_unprotected", "mean_protected", "ratio"])
        for r in self.rows:
            w.writerow([r.column] + [repr(float(x)) for x in (r.mean, r.sd, r.max, r.mean_unprotected, r.mean_protected, r.ratio)])

    def to_text(self) -> str:
        lines = [
            f"n = {self.n} observations, {self.n_protected} protected",
            f"{'Variable':<24}{'Mean':>10}{'SD':>10}{'Max':>10}{'A=0':>10}{'A=1':>10}{'Ratio':>8}",
        ]
        for r in self.rows:
            lines.append(
                f"{r.column:<24}{r.mean:>10.2f}{r.sd:>10.2f}{r.max:>10.2f}"
                f"{r.mean_unprotected:>10.2f}{r.mean_protected:>10.2f}{r.ratio:>8.3f}"
            )
        return "\n".join(lines) + "\n"


def summarize(data: AuditDataset, columns: Iterable[str] | None = None) -> Summary:
    """Mean, SD (ddof=1), max per column, overall and by protected status.

    ``ratio`` is protected mean over unprotected mean; a column whose two
    group means are both zero gets ratio 1.
    """
    a = data.column(data.protected) == 1.0
    if columns is None:
        columns = [c for c in data.bound_numeric if c != data.protected]
    rows = []
    for name in columns:
        x = np.asarray(data.column(name), dtype=float)
        constant = len(x) < 2 or bool(np.all(x == x[0]))
        sd = 0.0 if constant else float(np.std(x, ddof=1))
        m0 = float(np.mean(x[~a])) if np.any(~a) else float("nan")
        m1 = float(np.mean(x[a])) if np.any(a) else float("nan")
        if m0 == 0.0:
            ratio = 1.0 if m1 == 0.0 else float("inf")
        else:
            ratio = m1 / m0
        rows.append(SummaryRow(name, float(np.mean(x)), sd, float(np.max(x)), m0, m1, ratio))
    return Summary(data.n, int(np.sum(a)), tuple(rows))
