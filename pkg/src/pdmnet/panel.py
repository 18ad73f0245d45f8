"""Price panel ingestion, cleaning, returns and row normalization.

Panels are stored entity-major: ``values[i, t]`` is entity ``i`` at time
``t``. Wide CSV files on disk are time-major (one row per date, one column
per ticker) because that is how price exports are usually laid out.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateSeriesError,
    EmptyPanelError,
    LoadError,
    ReturnComputationError,
)

# relative floor below which a row's standard deviation counts as zero
DEGENERATE_SD_RTOL = 1e-14


@dataclass
class PricePanel:
    entities: list[str]
    dates: list[str]
    prices: np.ndarray
    missing_mask: np.ndarray

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        n, t = len(self.entities), len(self.dates)
        if self.prices.shape != (n, t) or self.missing_mask.shape != (n, t):
            raise ValueError(
                f"prices {self.prices.shape} / mask {self.missing_mask.shape} "
                f"do not match {n} entities x {t} dates"
            )
        if len(set(self.entities)) != n:
            raise ValueError("duplicate entity IDs")

    @property
    def shape(self):
        return self.prices.shape


@dataclass
class SeriesPanel:
    """N entities x T observations of dimensionless series.

    ``iteration`` is the decomposition depth at which the panel was produced
    (0 for the input returns).
    """

    entities: list[str]
    times: list[str]
    values: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-D array")
        if self.values.shape != (len(self.entities), len(self.times)):
            raise ValueError(
                f"values {self.values.shape} do not match "
                f"{len(self.entities)} entities x {len(self.times)} times"
            )
        self.entities = [str(e) for e in self.entities]
        self.times = [str(t) for t in self.times]

    @property
    def n_entities(self) -> int:
        return self.values.shape[0]

    @property
    def n_times(self) -> int:
        return self.values.shape[1]

    def with_values(self, values, iteration=None) -> "SeriesPanel":
        return SeriesPanel(
            list(self.entities),
            list(self.times),
            values,
            self.iteration if iteration is None else iteration,
        )

    def take(self, rows) -> "SeriesPanel":
        rows = np.asarray(rows, dtype=int)
        return SeriesPanel(
            [self.entities[r] for r in rows],
            list(self.times),
            self.values[rows],
            self.iteration,
        )


@dataclass
class CleaningReport:
    dropped_entities: list[tuple[str, float]] = field(default_factory=list)
    excised_events: list[tuple[str, str, float]] = field(default_factory=list)
    fill_count: int = 0
    # thresholds actually applied; filled by the operation that produced it
    settings: dict = field(default_factory=dict)

    def merge(self, other: "CleaningReport") -> "CleaningReport":
        return CleaningReport(
            self.dropped_entities + other.dropped_entities,
            self.excised_events + other.excised_events,
            self.fill_count + other.fill_count,
            {**self.settings, **other.settings},
        )

    def to_dict(self) -> dict:
        return {
            "dropped_entities": [
                {"entity": e, "missing_fraction": f} for e, f in self.dropped_entities
            ],
            "excised_events": [
                {"entity": e, "time": t, "value": v} for e, t, v in self.excised_events
            ],
            "fill_count": self.fill_count,
            "imputation": {
                "missing_prices": "forward fill, leading gaps back-filled",
                "extreme_returns": "replaced by 0",
            },
            "settings": self.settings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CleaningReport":
        return cls(
            [(x["entity"], x["missing_fraction"]) for x in d["dropped_entities"]],
            [(x["entity"], x["time"], x["value"]) for x in d["excised_events"]],
            int(d["fill_count"]),
            dict(d.get("settings", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _parse_price(text: str):
    """Return a float, or None when the cell is empty or unparsable."""
    text = text.strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return value


def load_prices(path, format: str = "wide_csv") -> PricePanel:
    """Read a wide CSV of close prices.

    Row 1 is ``date,TICKER1,TICKER2,...``; each following row is an ISO-8601
    date followed by one price per ticker. Empty or unparsable cells are
    marked missing. Rows are sorted by date.

    Raises
    ------
    LoadError
        On a malformed header, duplicate tickers or dates, a bad date, a row
        of the wrong width, or a non-positive price (the message names the
        offending line and column).
    """
    if format != "wide_csv":
        raise ValueError(f"unsupported price format {format!r}")
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise LoadError(f"{path}: empty file, expected header 'date,TICKER,...'")

    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or any(not h for h in header[1:]):
        raise LoadError(f"{path}: malformed header on line 1: {rows[0]!r}")
    entities = header[1:]
    seen = set()
    for col, ent in enumerate(entities, start=2):
        if ent in seen:
            raise LoadError(f"{path}: duplicate entity ID {ent!r} in header column {col}")
        seen.add(ent)

    dates, values, mask = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise LoadError(
                f"{path}: line {lineno} has {len(row)} fields, header has {len(header)}"
            )
        raw_date = row[0].strip()
        try:
            date.fromisoformat(raw_date)
        except ValueError:
            raise LoadError(f"{path}: line {lineno}: bad ISO-8601 date {raw_date!r}") from None
        prices, missing = [], []
        for col, cell in enumerate(row[1:], start=2):
            p = _parse_price(cell)
            if p is not None and p <= 0:
                raise LoadError(
                    f"{path}: line {lineno}, column {col} ({entities[col - 2]}): "
                    f"non-positive price {cell.strip()!r}"
                )
            prices.append(np.nan if p is None else p)
            missing.append(p is None)
        dates.append(raw_date)
        values.append(prices)
        mask.append(missing)

    if not dates:
        raise LoadError(f"{path}: header only, no price rows")
    order = sorted(range(len(dates)), key=lambda k: date.fromisoformat(dates[k]))
    dates = [dates[k] for k in order]
    for a, b in zip(dates, dates[1:]):
        if date.fromisoformat(a) == date.fromisoformat(b):
            raise LoadError(f"{path}: duplicate date {b}")
    prices = np.array(values, dtype=float)[order].T
    missing_mask = np.array(mask, dtype=bool)[order].T
    return PricePanel(entities, dates, prices, missing_mask)


def filter_missing(panel: PricePanel, max_missing_fraction: float = 0.30):
    """Drop entities with too many gaps and fill the rest.

    An entity is dropped when its fraction of missing cells is strictly
    greater than ``max_missing_fraction``. Remaining gaps are forward-filled
    from the last observed price; leading gaps take the first observed
    price.

    Returns
    -------
    (PricePanel, CleaningReport)
    """
    if not 0 <= max_missing_fraction < 1:
        raise ValueError("max_missing_fraction must lie in [0, 1)")
    frac = panel.missing_mask.mean(axis=1)
    keep = frac <= max_missing_fraction
    report = CleaningReport(settings={"max_missing_fraction": max_missing_fraction})
    report.dropped_entities = [
        (e, float(f)) for e, f, k in zip(panel.entities, frac, keep) if not k
    ]
    if not keep.any():
        raise EmptyPanelError(
            f"all {len(panel.entities)} entities exceed the missing-data "
            f"threshold {max_missing_fraction}"
        )

    prices = panel.prices[keep].copy()
    mask = panel.missing_mask[keep]
    report.fill_count = int(mask.sum())
    for row, gaps in zip(prices, mask):
        if not gaps.any():
            continue
        observed = np.flatnonzero(~gaps)
        # index of the last observation at or before each cell
        last = np.maximum.accumulate(np.where(gaps, -1, np.arange(len(row))))
        last[last < 0] = observed[0]
        row[:] = row[last]

    entities = [e for e, k in zip(panel.entities, keep) if k]
    return PricePanel(entities, list(panel.dates), prices, np.zeros_like(mask)), report


def log_returns(panel: PricePanel) -> SeriesPanel:
    """Fractional daily change ``(P_t - P_{t-1}) / P_{t-1}``.

    This is the first-order approximation of the logarithmic derivative of
    the price. The result has one column fewer than there are dates.
    """
    if panel.missing_mask.any():
        raise ValueError("price panel has gaps; run filter_missing first")
    if len(panel.dates) < 2:
        raise ValueError("need at least two dates to compute returns")
    prev = panel.prices[:, :-1]
    zero = prev == 0
    if zero.any():
        i, t = np.argwhere(zero)[0]
        raise ReturnComputationError(
            f"zero price for {panel.entities[i]} on {panel.dates[t]}; "
            "return on the next date is undefined"
        )
    values = (panel.prices[:, 1:] - prev) / prev
    return SeriesPanel(list(panel.entities), list(panel.dates[1:]), values, 0)


def clean_extremes(panel: SeriesPanel, threshold: float = 0.20):
    """Zero every entry with ``|value| >= threshold``.

    The column is kept so that entities stay aligned in time; the original
    values are recorded in the report.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    hit = np.abs(panel.values) >= threshold
    report = CleaningReport(settings={"extreme_threshold": threshold})
    for i, t in np.argwhere(hit):
        report.excised_events.append(
            (panel.entities[i], panel.times[t], float(panel.values[i, t]))
        )
    values = np.where(hit, 0.0, panel.values)
    return panel.with_values(values), report


def row_moments(values: np.ndarray):
    """Per-row mean and sample standard deviation (divisor T-1)."""
    values = np.asarray(values, dtype=float)
    means = values.mean(axis=1)
    sds = values.std(axis=1, ddof=1)
    return means, sds


def degenerate_rows(values: np.ndarray, sds: np.ndarray) -> np.ndarray:
    scale = np.abs(values).max(axis=1)
    return sds <= DEGENERATE_SD_RTOL * np.maximum(scale, np.finfo(float).tiny)


def normalize_rows(panel: SeriesPanel):
    """Scale each row to mean 0 and sample standard deviation 1.

    Returns ``(normalized_panel, means, sds)``; ``x * sds[:, None] +
    means[:, None]`` inverts the transform.
    """
    if panel.n_times < 2:
        raise DegenerateSeriesError("need at least two observations per row")
    means, sds = row_moments(panel.values)
    bad = degenerate_rows(panel.values, sds)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateSeriesError(
            f"entity {panel.entities[i]!r} has zero variance", entity=panel.entities[i]
        )
    values = (panel.values - means[:, None]) / sds[:, None]
    return panel.with_values(values), means, sds


def save_series_panel(panel: SeriesPanel, path, header_lines=()) -> None:
    """Write a panel as time-major CSV, with optional ``#`` comment lines.

    Floats are written with ``repr`` so that a save/load round trip is
    exact.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(f"# iteration: {panel.iteration}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time", *panel.entities])
        for t, label in enumerate(panel.times):
            writer.writerow([label, *(repr(float(v)) for v in panel.values[:, t])])


def load_series_panel(path) -> SeriesPanel:
    path = Path(path)
    iteration = 0
    with path.open(newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                if key.strip() == "iteration":
                    iteration = int(val)
                continue
            lines.append(line)
    rows = [r for r in csv.reader(lines) if r]
    if not rows:
        raise LoadError(f"{path}: no panel data")
    header = rows[0]
    if header[0] != "time" or len(header) < 2:
        raise LoadError(f"{path}: malformed panel header {header!r}")
    times = [r[0] for r in rows[1:]]
    try:
        values = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise LoadError(f"{path}: {exc}") from None
    if values.shape != (len(times), len(header) - 1):
        raise LoadError(f"{path}: ragged rows")
    return SeriesPanel(header[1:], times, values.T, iteration)
