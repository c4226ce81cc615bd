"""Transaction ingestion, synthetic series generation, normalization and splits."""

from __future__ import annotations

import csv
import datetime
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import EmptyFile, MalformedRow, NoQualifyingAccounts

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("account_id", "date", "type", "amount")


class Transaction(NamedTuple):
    account_id: int
    date: datetime.date
    amount: float  # signed: debits negative
    kind: str  # "credit" | "debit"


@dataclass
class TransactionTable:
    rows: list[Transaction]

    @property
    def n_accounts(self) -> int:
        return len({r.account_id for r in self.rows})


@dataclass
class Dataset:
    """Fixed-length univariate series with optional integer labels.

    ``series`` is an (N, T) float matrix; every row has the same length and
    contains only finite values.
    """

    series: np.ndarray
    ids: list[str]
    labels: np.ndarray | None = None
    normalized: bool = False

    def __post_init__(self) -> None:
        self.series = np.asarray(self.series, dtype=np.float64)
        if self.series.ndim != 2:
            raise ValueError("series must be a 2-D (N, T) matrix")
        if not np.all(np.isfinite(self.series)):
            raise ValueError("series contains non-finite values")
        if len(self.ids) != self.series.shape[0]:
            raise ValueError("ids length does not match series row count")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.series.shape[0],):
                raise ValueError("labels length does not match series row count")

    @property
    def n(self) -> int:
        return self.series.shape[0]

    @property
    def length(self) -> int:
        return self.series.shape[1]

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            series=self.series[idx],
            ids=[self.ids[i] for i in idx],
            labels=None if self.labels is None else self.labels[idx],
            normalized=self.normalized,
        )


@dataclass
class SynthConfig:
    degrees: tuple[int, ...] = (1, 2, 3)
    per_degree: int = 100
    length: int = 100
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        self.degrees = tuple(sorted(set(int(g) for g in self.degrees)))
        if any(g < 0 for g in self.degrees) or not self.degrees:
            raise ValueError("degrees must be a nonempty set of non-negative integers")
        if self.per_degree < 1:
            raise ValueError("per_degree must be >= 1")
        if self.length < 20 or self.length % 10 != 0:
            raise ValueError("length must be >= 20 and divisible by 10")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def load_transactions(path: str | Path) -> TransactionTable:
    """Parse a transaction CSV with header account_id,date,type,amount.

    Debit amounts are sign-flipped to negative; dates are ISO-8601.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyFile(str(path))
        fields = [f.strip().lower() for f in reader.fieldnames]
        missing = [c for c in REQUIRED_COLUMNS if c not in fields]
        if missing:
            raise MalformedRow(1, f"missing column(s): {', '.join(missing)}")
        rows: list[Transaction] = []
        for lineno, raw in enumerate(reader, start=2):
            try:
                account_id = int(str(raw["account_id"]).strip())
                date = datetime.date.fromisoformat(str(raw["date"]).strip())
                kind = str(raw["type"]).strip().lower()
                amount = float(str(raw["amount"]).strip())
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedRow(lineno, str(exc)) from exc
            if kind not in ("credit", "debit"):
                raise MalformedRow(lineno, f"unknown type {raw['type']!r}")
            if not np.isfinite(amount):
                raise MalformedRow(lineno, f"non-finite amount {raw['amount']!r}")
            if kind == "debit":
                amount = -abs(amount)
            else:
                amount = abs(amount)
            rows.append(Transaction(account_id, date, amount, kind))
    if not rows:
        raise EmptyFile(str(path))
    return TransactionTable(rows)


def _month_index(d: datetime.date) -> int:
    return d.year * 12 + (d.month - 1)


def build_series(
    table: TransactionTable, months: int, min_history: int | None = None
) -> Dataset:
    """Aggregate transactions into one monthly net-flow series per account.

    The series covers the account's most recent ``months`` calendar months;
    months without activity are zero-filled. Accounts whose history spans
    fewer than ``min_history`` months are dropped (the drop count is logged).
    """
    if months < 1:
        raise ValueError("months must be >= 1")
    if min_history is None:
        min_history = months
    if min_history < months:
        raise ValueError("min_history must be >= months")

    by_account: dict[int, list[Transaction]] = {}
    for row in table.rows:
        by_account.setdefault(row.account_id, []).append(row)

    series_rows: list[np.ndarray] = []
    ids: list[str] = []
    dropped = 0
    for account_id in sorted(by_account):
        txns = by_account[account_id]
        first = min(_month_index(t.date) for t in txns)
        last = max(_month_index(t.date) for t in txns)
        if last - first + 1 < min_history:
            dropped += 1
            continue
        start = last - months + 1
        values = np.zeros(months, dtype=np.float64)
        for t in txns:
            m = _month_index(t.date)
            if start <= m <= last:
                values[m - start] += t.amount
        series_rows.append(values)
        ids.append(str(account_id))

    if not series_rows:
        raise NoQualifyingAccounts(
            f"no account spans {min_history}+ months of history"
        )
    log.info("build_series: retained %d accounts, dropped %d", len(ids), dropped)
    return Dataset(series=np.vstack(series_rows), ids=ids)


def znormalize(d: Dataset) -> Dataset:
    """Per-row z-normalization with population std; constant rows map to zeros."""
    mu = d.series.mean(axis=1, keepdims=True)
    sigma = d.series.std(axis=1, keepdims=True)
    flat = sigma[:, 0] < 1e-12
    safe = np.where(flat[:, None], 1.0, sigma)
    out = (d.series - mu) / safe
    out[flat] = 0.0
    return Dataset(series=out, ids=list(d.ids), labels=d.labels, normalized=True)


def split(d: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive partition into (floor(ratio*N), rest) by seeded shuffle."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    if d.n < 2:
        raise ValueError("need at least 2 series to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(d.n)
    n_first = int(np.floor(ratio * d.n))
    first = np.sort(perm[:n_first])
    second = np.sort(perm[n_first:])
    return d.take(first), d.take(second)


def gen_polynomial(cfg: SynthConfig, normalize: bool = True) -> Dataset:
    """Synthetic dataset of noisy polynomials, labelled by degree index.

    Coefficients are drawn uniformly from [-1, 1]; the leading coefficient is
    re-drawn until its magnitude is at least 0.1 so the intended degree is
    realised. Series are evaluated on a uniform grid over [-1, 1].
    """
    rng = np.random.default_rng(cfg.seed)
    t = np.linspace(-1.0, 1.0, cfg.length)
    rows: list[np.ndarray] = []
    labels: list[int] = []
    ids: list[str] = []
    for label, degree in enumerate(cfg.degrees):
        for j in range(cfg.per_degree):
            coeffs = rng.uniform(-1.0, 1.0, size=degree + 1)
            while abs(coeffs[-1]) < 0.1:
                coeffs[-1] = rng.uniform(-1.0, 1.0)
            values = np.polynomial.polynomial.polyval(t, coeffs)
            if cfg.noise_sigma > 0:
                values = values + rng.normal(0.0, cfg.noise_sigma, size=cfg.length)
            rows.append(values)
            labels.append(label)
            ids.append(f"poly{degree}-{j}")
    ds = Dataset(series=np.vstack(rows), ids=ids, labels=np.asarray(labels))
    return znormalize(ds) if normalize else ds


# --- dataset CSV serialization ----------------------------------------------
# One row per series: id, optional label column (flagged by header), T values.

def save_dataset(d: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        cols = ["id"] + (["label"] if d.labels is not None else [])
        cols += [f"t{i}" for i in range(d.length)]
        writer.writerow(cols)
        for i in range(d.n):
            row: list[str] = [d.ids[i]]
            if d.labels is not None:
                row.append(str(int(d.labels[i])))
            row += [repr(float(v)) for v in d.series[i]]
            writer.writerow(row)


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(str(path)) from None
        if not header or header[0] != "id":
            raise MalformedRow(1, "expected dataset header starting with 'id'")
        has_labels = len(header) > 1 and header[1] == "label"
        offset = 2 if has_labels else 1
        ids: list[str] = []
        labels: list[int] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ids.append(row[0])
                if has_labels:
                    labels.append(int(row[1]))
                rows.append([float(v) for v in row[offset:]])
            except (ValueError, IndexError) as exc:
                raise MalformedRow(lineno, str(exc)) from exc
    if not rows:
        raise EmptyFile(str(path))
    return Dataset(
        series=np.asarray(rows, dtype=np.float64),
        ids=ids,
        labels=np.asarray(labels) if has_labels else None,
    )
