"""Reporting on decompositions: sector dominance, MDS layouts, sector pressure."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateSeriesError
from .panel import SeriesPanel, row_moments
from .scrub import CharacteristicSet, solve_pressures
from .spectral import Partition, chordal_distance, correlation

SECTOR_CODES = ("B", "C", "F", "H", "I", "N", "S", "T", "U")
SECTOR_NAMES = {
    "B": "Basic Materials",
    "C": "Consumer Goods",
    "F": "Financial",
    "H": "Healthcare",
    "I": "Industrial Goods",
    "N": "None",
    "S": "Services",
    "T": "Technology",
    "U": "Utilities",
}
_SECTOR_LOOKUP = {
    **{c.lower(): c for c in SECTOR_CODES},
    **{name.lower(): c for c, name in SECTOR_NAMES.items()},
    "": "N",
}
UNCLASSIFIED = "unclassified"


def sector_code(label: str) -> str:
    try:
        return _SECTOR_LOOKUP[label.strip().lower()]
    except KeyError:
        raise ValueError(
            f"unknown sector {label!r}; expected one of {', '.join(SECTOR_CODES)} "
            "or their full names"
        ) from None


@dataclass
class LabelTable:
    """Sector code and exchange per entity; unknown entities get sector N."""

    sectors: dict[str, str] = field(default_factory=dict)
    exchanges: dict[str, str] = field(default_factory=dict)

    def sector(self, entity: str) -> str:
        return self.sectors.get(entity, "N")

    def exchange(self, entity: str) -> str:
        return self.exchanges.get(entity, "")

    def aligned(self, entities) -> tuple[list[str], list[str]]:
        return [self.sector(e) for e in entities], [self.exchange(e) for e in entities]

    @classmethod
    def from_csv(cls, path) -> "LabelTable":
        """Read ``ticker,sector,exchange`` rows (header optional)."""
        table = cls()
        with Path(path).open(newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or not any(c.strip() for c in row):
                    continue
                if lineno == 1 and row[0].strip().lower() in ("ticker", "entity"):
                    continue
                ticker = row[0].strip()
                try:
                    table.sectors[ticker] = sector_code(row[1] if len(row) > 1 else "")
                except ValueError as exc:
                    raise ValueError(f"{path}: line {lineno}: {exc}") from None
                table.exchanges[ticker] = row[2].strip() if len(row) > 2 else ""
        return table


@dataclass
class ClusterDominance:
    cluster: int
    size: int
    sector_fractions: dict[str, float]
    exchange_fractions: dict[str, float]
    dominant: str
    dominant_fraction: float

    def nasdaq_fraction(self) -> float:
        return self.exchange_fractions.get("NASDAQ", 0.0)


def dominance_report(partition: Partition, labels: LabelTable, entities) -> list[ClusterDominance]:
    """Sector histogram of each cluster.

    A cluster is dominated by a sector when that sector makes up strictly
    more than half of it; otherwise it is ``"unclassified"``.
    """
    if len(entities) != partition.N:
        raise ValueError("entities do not match the partition")
    sectors, exchanges = labels.aligned(entities)
    out = []
    for k in range(partition.K):
        idx = partition.members(k)
        n = idx.size
        counts = {c: 0 for c in SECTOR_CODES}
        ex_counts: dict[str, int] = {}
        for i in idx:
            counts[sectors[i]] += 1
            ex_counts[exchanges[i]] = ex_counts.get(exchanges[i], 0) + 1
        fracs = {c: counts[c] / n for c in SECTOR_CODES}
        top = max(SECTOR_CODES, key=lambda c: (counts[c], -SECTOR_CODES.index(c)))
        dominant = top if 2 * counts[top] > n else UNCLASSIFIED
        out.append(
            ClusterDominance(
                cluster=k,
                size=n,
                sector_fractions=fracs,
                exchange_fractions={e: c / n for e, c in sorted(ex_counts.items())},
                dominant=dominant,
                dominant_fraction=fracs[top],
            )
        )
    return out


def classical_mds(dist, dims: int = 2) -> np.ndarray:
    """Torgerson scaling: double-center the squared distances, embed on top eigenvectors.

    Each axis is oriented so that the first point with a non-negligible
    coordinate on it is positive. Missing dimensions (fewer positive
    eigenvalues than ``dims``) are zero-filled with a warning.
    """
    D = np.asarray(dist, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    if dims < 1:
        raise ValueError("dims must be >= 1")
    n = D.shape[0]
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D * D) @ J
    w, v = np.linalg.eigh(0.5 * (B + B.T))
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    scale = max(abs(w[0]), abs(w[-1])) if n else 0.0
    positive = np.flatnonzero(w > 1e-12 * scale) if scale > 0 else np.array([], dtype=int)
    use = positive[:dims]
    coords = np.zeros((n, dims))
    coords[:, : use.size] = v[:, use] * np.sqrt(w[use])
    if use.size < dims:
        warnings.warn(
            f"distance matrix has rank {use.size} < {dims}; padding with zeros",
            RuntimeWarning,
            stacklevel=2,
        )
    for a in range(use.size):
        col = coords[:, a]
        big = np.flatnonzero(np.abs(col) > 1e-9 * np.abs(col).max())
        if big.size and col[big[0]] < 0:
            coords[:, a] = -col
    return coords


def near_neighbor_edges(coords, fraction: float = 0.10) -> list[tuple[int, int, float]]:
    """Pairs whose distance is in the bottom ``fraction`` of all pairwise distances.

    At least one edge is returned when there are pairs; pairs tied with the
    cutoff distance are included. Edges are ``(i, j, distance)`` with
    ``i < j``, sorted by distance.
    """
    X = np.asarray(coords, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    iu, ju = np.triu_indices(n, k=1)
    d = np.linalg.norm(X[iu] - X[ju], axis=1)
    n_pairs = d.size
    count = max(1, math.floor(fraction * n_pairs + 1e-9))
    order = np.lexsort((ju, iu, d))
    cutoff = d[order[count - 1]]
    keep = d <= cutoff + 1e-12 * max(cutoff, 1.0)
    sel = order[keep[order]]
    return [(int(iu[k]), int(ju[k]), float(d[k])) for k in sel]


@dataclass
class EmbeddingReport:
    coords: np.ndarray
    edges: list[tuple[int, int, float]]
    sizes: np.ndarray
    dominant: list[str]
    groups: np.ndarray | None = None


def embedding_report(
    characteristic: np.ndarray,
    partition: Partition,
    labels: LabelTable | None = None,
    entities=None,
    fraction: float = 0.10,
    dims: int = 2,
    groups: Partition | None = None,
) -> EmbeddingReport:
    """Lay out clusters by the chordal distance between their characteristic series.

    ``groups`` optionally assigns each cluster to a coarser group (e.g. the
    next level of the hierarchy) for shading.
    """
    dist = chordal_distance(correlation(characteristic))
    coords = classical_mds(dist, dims)
    edges = near_neighbor_edges(coords, fraction) if partition.K >= 2 else []
    if labels is not None and entities is not None:
        dominant = [c.dominant for c in dominance_report(partition, labels, entities)]
    else:
        dominant = [UNCLASSIFIED] * partition.K
    group_ids = None
    if groups is not None:
        # each cluster takes the coarse group of its members
        group_ids = np.array(
            [int(np.bincount(groups.assignment[partition.members(k)]).argmax()) for k in range(partition.K)]
        )
    return EmbeddingReport(coords, edges, partition.sizes(), dominant, group_ids)


def subset_series(panel: SeriesPanel, members) -> np.ndarray:
    """Average return across ``members`` on each day."""
    members = np.asarray(members, dtype=int)
    if members.size == 0:
        raise ValueError("empty subset")
    return panel.values[members].mean(axis=0)


@dataclass
class PressureSeries:
    sectors: list[str]
    windows: list[tuple[str, str]]
    values: dict[str, np.ndarray]
    raw: dict[str, np.ndarray]
    window_length: int
    step: int
    normalization: str = "per-sector z-score across windows (mean 0, sd 1, divisor n-1)"


def window_starts(T: int, window: int, step: int) -> range:
    return range(0, T - window + 1, step)


def sector_pressure(
    panel: SeriesPanel,
    labels: LabelTable,
    window: int = 252,
    step: int = 21,
    sectors=None,
) -> PressureSeries:
    """Rolling mean market pressure of each sector.

    In each window every entity's pressure is its single-factor loading on
    the window's market mean series; a sector's value is the mean over its
    members, which equals the loading of the sector's average return series.
    Each sector's sequence of window values is then z-scored.
    """
    T = panel.n_times
    if not 2 <= window <= T:
        raise ValueError(f"window must lie in 2..{T}")
    if step < 1:
        raise ValueError("step must be >= 1")
    starts = window_starts(T, window, step)
    if len(starts) < 2:
        raise ValueError("need at least two windows to normalize the pressure series")
    codes, _ = labels.aligned(panel.entities)
    codes = np.array(codes)
    wanted = list(sectors) if sectors is not None else [c for c in SECTOR_CODES if (codes == c).any()]
    present = []
    for s in wanted:
        if (codes == s).any():
            present.append(s)
        else:
            warnings.warn(f"sector {s!r} has no members; omitted", RuntimeWarning, stacklevel=2)

    trivial = Partition.trivial(panel.n_entities)
    raw = {s: np.empty(len(starts)) for s in present}
    for w, a in enumerate(starts):
        X = SeriesPanel(panel.entities, panel.times[a : a + window], panel.values[:, a : a + window])
        market = CharacteristicSet(X.values.mean(axis=0, keepdims=True), trivial)
        tau, _ = solve_pressures(X, market)
        for s in present:
            raw[s][w] = tau[codes == s, 0].mean()

    values = {}
    for s in present:
        means, sds = row_moments(raw[s][None, :])
        if sds[0] <= 1e-14 * max(abs(means[0]), 1e-300):
            raise DegenerateSeriesError(f"pressure series of sector {s!r} is constant", entity=s)
        values[s] = (raw[s] - means[0]) / sds[0]
    windows = [(panel.times[a], panel.times[a + window - 1]) for a in starts]
    return PressureSeries(present, windows, values, raw, window, step)


def lagged_correlation(x, y, lag: int) -> float:
    """Pearson correlation of ``x[t]`` with ``y[t + lag]`` over the overlap."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if lag >= 0:
        a, b = x[: x.size - lag], y[lag:]
    else:
        a, b = x[-lag:], y[: y.size + lag]
    if a.size < 3:
        return np.nan
    return float(np.corrcoef(a, b)[0, 1])


def best_lag(x, y, max_lag: int) -> int:
    """Lag (in samples) by which ``y`` trails ``x``, by peak lagged correlation."""
    lags = range(-max_lag, max_lag + 1)
    corrs = [lagged_correlation(x, y, L) for L in lags]
    return int(lags[int(np.nanargmax(corrs))])


def adjusted_rand_index(a, b) -> float:
    """Chance-corrected agreement between two labelings (1 = identical)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("labelings differ in length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai.ravel(), bi.ravel()), 1)

    def pairs(x):
        x = np.asarray(x, dtype=float)
        return float((x * (x - 1) / 2).sum())

    n = a.size
    index = pairs(table)
    sa, sb = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = n * (n - 1) / 2
    expected = sa * sb / total if total else 0.0
    max_index = 0.5 * (sa + sb)
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)
