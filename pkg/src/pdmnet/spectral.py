"""Hierarchical spectral clustering of correlation networks.

The network on K series has edge weights ``exp(-d**2)`` where
``d = sin(arccos(rho) / 2)`` is half the chordal distance between the
series on the unit sphere. The number of clusters at each level is read off
the normalized Laplacian spectrum by comparing it with the spectrum of the
Gaussian ensemble GE(n, m): n i.i.d. standard normal series of length m.
"""
from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateEmbeddingError,
    DegenerateSeriesError,
    NumericError,
    PartitioningFailure,
)
from .panel import SeriesPanel, degenerate_rows, row_moments

# eigenvalues below ZERO_RTOL * max eigenvalue are treated as numerically zero
ZERO_RTOL = 1e-8


@dataclass
class CorrelationMatrix:
    labels: list[str]
    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError("rho must be square")
        if rho.shape[0] != len(self.labels):
            raise ValueError("label count does not match rho")
        rho = np.clip(0.5 * (rho + rho.T), -1.0, 1.0)
        np.fill_diagonal(rho, 1.0)
        self.rho = rho

    @property
    def size(self) -> int:
        return self.rho.shape[0]


@dataclass
class LaplacianSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    zero_tolerance: float
    matrix: np.ndarray = field(repr=False)
    degrees: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.eigenvalues)


@dataclass(frozen=True)
class GENullConfig:
    """Settings of the Gaussian-ensemble null model.

    ``zero_tolerance`` is relative: an eigenvalue is nonzero when it exceeds
    ``zero_tolerance * max(eigenvalues)``. ``workers`` only changes how the
    simulations are scheduled, never the result.
    """

    num_sims: int = 100
    seed: int = 0
    zero_tolerance: float = ZERO_RTOL
    workers: int = 1

    def __post_init__(self):
        if self.num_sims < 1:
            raise ValueError("num_sims must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "num_sims": self.num_sims,
            "seed": self.seed,
            "zero_tolerance": self.zero_tolerance,
        }


@dataclass(frozen=True)
class KMeansConfig:
    seed: int = 0
    restarts: int = 20
    max_iter: int = 300

    def __post_init__(self):
        if self.restarts < 1 or self.max_iter < 1:
            raise ValueError("restarts and max_iter must be >= 1")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "restarts": self.restarts, "max_iter": self.max_iter}


@dataclass
class Partition:
    """Surjective map from N items onto cluster labels ``0..K-1``."""

    assignment: np.ndarray
    K: int = -1

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("assignment must be a non-empty 1-D array")
        if not np.issubdtype(a.dtype, np.integer):
            if not np.all(a == np.round(a)):
                raise ValueError("assignment labels must be integers")
        a = a.astype(np.int64)
        K = int(a.max()) + 1 if self.K < 0 else int(self.K)
        if a.min() < 0 or a.max() >= K:
            raise ValueError(f"labels must lie in 0..{K - 1}")
        if np.unique(a).size != K:
            raise ValueError("partition is not surjective: some label is unused")
        self.assignment = a
        self.K = K

    @property
    def N(self) -> int:
        return self.assignment.size

    @classmethod
    def trivial(cls, n: int) -> "Partition":
        return cls(np.zeros(n, dtype=np.int64), 1)

    def canonical(self) -> "Partition":
        """Relabel clusters by ascending smallest member index."""
        return Partition(canonical_labels(self.assignment))

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)

    def compose(self, coarse: "Partition") -> "Partition":
        """Map items through this partition, then through ``coarse``."""
        if coarse.N != self.K:
            raise ValueError("coarse partition must cover this partition's clusters")
        return Partition(coarse.assignment[self.assignment], coarse.K)

    def refines(self, coarse: "Partition") -> bool:
        if coarse.N != self.N:
            return False
        pairs = np.unique(np.stack([self.assignment, coarse.assignment]), axis=1)
        return pairs.shape[1] == self.K

    def to_dict(self) -> dict:
        return {"assignment": self.assignment.tolist(), "K": self.K}

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        return cls(np.asarray(d["assignment"], dtype=np.int64), int(d["K"]))

    def __eq__(self, other):
        return (
            isinstance(other, Partition)
            and self.K == other.K
            and np.array_equal(self.assignment, other.assignment)
        )


def canonical_labels(assignment) -> np.ndarray:
    uniq, first, inverse = np.unique(
        np.asarray(assignment), return_index=True, return_inverse=True
    )
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(uniq.size)
    return rank[inverse.ravel()]


@dataclass
class Level:
    partition: Partition
    significant_count: int
    threshold: float
    seed: int

    def to_dict(self) -> dict:
        return {
            **self.partition.to_dict(),
            "significant_count": self.significant_count,
            "threshold": self.threshold,
            "seed": self.seed,
        }


@dataclass
class LevelStack:
    """Levels of a hierarchy; ``levels[0]`` is the finest (level 1).

    Every partition is over the original entities.
    """

    levels: list[Level]
    source_length: int

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, j) -> Level:
        return self.levels[j]

    def sizes(self) -> list[int]:
        return [lv.partition.K for lv in self.levels]

    def to_dict(self) -> dict:
        return {
            "source_length": self.source_length,
            "levels": [lv.to_dict() for lv in self.levels],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LevelStack":
        levels = [
            Level(Partition.from_dict(x), x["significant_count"], x["threshold"], x["seed"])
            for x in d["levels"]
        ]
        return cls(levels, d["source_length"])


def correlation(panel) -> CorrelationMatrix:
    """Pearson correlation between the rows of a panel (or a 2-D array)."""
    if isinstance(panel, SeriesPanel):
        labels, X = list(panel.entities), panel.values
    else:
        X = np.asarray(panel, dtype=float)
        labels = [str(i) for i in range(X.shape[0])]
    if X.shape[1] < 2:
        raise DegenerateSeriesError("need at least two observations per series")
    means, sds = row_moments(X)
    bad = degenerate_rows(X, sds)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateSeriesError(f"series {labels[i]!r} is constant", entity=labels[i])
    Z = (X - means[:, None]) / sds[:, None]
    rho = (Z @ Z.T) / (X.shape[1] - 1)
    return CorrelationMatrix(labels, rho)


def chordal_distance(rho) -> np.ndarray:
    """Half chordal distance ``sin(arccos(rho) / 2)``, entrywise, in [0, 1]."""
    r = rho.rho if isinstance(rho, CorrelationMatrix) else np.asarray(rho, dtype=float)
    # sin(arccos(r)/2) == sqrt((1 - r)/2), which keeps d(0) exact to the last ulp
    return np.sqrt(0.5 * (1.0 - np.clip(r, -1.0, 1.0)))


def _laplacian_matrix(rho: np.ndarray):
    d2 = 0.5 * (1.0 - np.clip(rho, -1.0, 1.0))
    W = np.exp(-d2)
    deg = W.sum(axis=1)
    s = 1.0 / np.sqrt(deg)
    L = np.eye(len(rho)) - s[:, None] * W * s[None, :]
    return 0.5 * (L + L.T), deg


def laplacian(rho: CorrelationMatrix, zero_tolerance: float = ZERO_RTOL) -> LaplacianSpectrum:
    """Normalized graph Laplacian ``I - D^-1/2 exp(-d^2) D^-1/2`` and its spectrum.

    ``D`` is the diagonal degree matrix of row sums of ``exp(-d^2)``.
    Eigenvalues are returned in ascending order.
    """
    if rho.size < 2:
        raise ValueError("Laplacian needs at least two series")
    L, deg = _laplacian_matrix(rho.rho)
    try:
        w, v = np.linalg.eigh(L)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Laplacian eigendecomposition failed: {exc}") from exc
    tol = zero_tolerance * max(float(w[-1]), 0.0)
    return LaplacianSpectrum(w, v, tol, L, deg)


def _smallest_nonzero(X: np.ndarray, zero_rtol: float) -> float:
    means, sds = row_moments(X)
    Z = (X - means[:, None]) / sds[:, None]
    rho = np.clip((Z @ Z.T) / (X.shape[1] - 1), -1.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    L, _ = _laplacian_matrix(rho)
    w = np.linalg.eigvalsh(L)
    nonzero = w[w > zero_rtol * w[-1]]
    return float(nonzero[0]) if nonzero.size else np.inf


def _ge_sim(n, m, zero_rtol, seed_seq) -> float:
    rng = np.random.default_rng(seed_seq)
    return _smallest_nonzero(rng.standard_normal((n, m)), zero_rtol)


_GE_MEMO: dict = {}


def ge_threshold(n: int, m: int, cfg: GENullConfig = GENullConfig()) -> float:
    """Smallest nonzero Laplacian eigenvalue seen across GE(n, m) simulations.

    Each simulation draws an ``n x m`` standard normal panel, builds its
    correlation Laplacian and keeps the smallest eigenvalue above the zero
    tolerance; the threshold is the minimum over ``cfg.num_sims`` draws.
    Simulation ``s`` is seeded from ``(cfg.seed, n, m)`` and ``s`` alone, so
    the result is bit-reproducible and independent of ``cfg.workers``.
    Results are memoized per process.
    """
    if n < 2 or m < 2:
        raise ValueError("GE null needs n >= 2 series of length m >= 2")
    key = (int(n), int(m), cfg.num_sims, cfg.seed, cfg.zero_tolerance)
    if key in _GE_MEMO:
        return _GE_MEMO[key]
    seqs = np.random.SeedSequence([cfg.seed, n, m]).spawn(cfg.num_sims)
    sim = functools.partial(_ge_sim, int(n), int(m), cfg.zero_tolerance)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            mins = list(pool.map(sim, seqs))
    else:
        mins = [sim(s) for s in seqs]
    _GE_MEMO[key] = value = float(min(mins))
    return value


def count_significant(spec: LaplacianSpectrum, threshold: float) -> int:
    """Number of eigenvalues strictly between the zero tolerance and ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    w = spec.eigenvalues
    return int(np.count_nonzero((w > spec.zero_tolerance) & (w < threshold)))


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = X[idx]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


def _sq_dists(X, centers):
    d = (X * X).sum(axis=1)[:, None] - 2.0 * X @ centers.T + (centers * centers).sum(axis=1)
    return np.maximum(d, 0.0)


def _lloyd(X, centers, max_iter):
    k = centers.shape[0]
    labels = None
    for _ in range(max_iter):
        new = np.argmin(_sq_dists(X, centers), axis=1)  # ties -> lowest index
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            # empty cluster takes the point farthest from its current centroid
            far = int(np.argmax(((X - centers[labels]) ** 2).sum(axis=1)))
            labels[far] = c
            counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        centers = sums / counts[:, None]
    wcss = float(((X - centers[labels]) ** 2).sum())
    return labels, centers, wcss


def kmeans(X, k: int, cfg: KMeansConfig = KMeansConfig()):
    """Lloyd's k-means with k-means++ seeding, best of ``cfg.restarts`` runs.

    Returns ``(labels, wcss)`` with canonical labels. Restart ``r`` is seeded
    from ``(cfg.seed, r)``; the earliest restart wins ties in WCSS.
    """
    X = np.asarray(X, dtype=float)
    if not 1 <= k <= X.shape[0]:
        raise ValueError(f"k={k} must lie in 1..{X.shape[0]}")
    best = None
    for seq in np.random.SeedSequence(cfg.seed).spawn(cfg.restarts):
        rng = np.random.default_rng(seq)
        labels, _, wcss = _lloyd(X, _kmeans_pp(X, k, rng), cfg.max_iter)
        if best is None or wcss < best[1]:
            best = (labels, wcss)
    return canonical_labels(best[0]), best[1]


def spectral_embedding(spec: LaplacianSpectrum, k: int) -> np.ndarray:
    """Rows of the k lowest eigenvectors, scaled to unit length."""
    V = spec.eigenvectors[:, :k]
    norms = np.linalg.norm(V, axis=1)
    if np.any(norms <= 1e-300):
        raise DegenerateEmbeddingError(
            f"embedding row(s) {np.flatnonzero(norms <= 1e-300).tolist()} are zero"
        )
    return V / norms[:, None]


def spectral_kmeans(
    spec: LaplacianSpectrum, k: int, seed: int = 0, restarts: int = 20, max_iter: int = 300
) -> Partition:
    """Cluster the spectral embedding built from the k smallest eigenpairs.

    The eigenvector of the zero eigenvalue is one of the k columns.
    """
    if not 2 <= k <= spec.size:
        raise ValueError(f"k={k} must lie in 2..{spec.size}")
    X = spectral_embedding(spec, k)
    labels, _ = kmeans(X, k, KMeansConfig(seed, restarts, max_iter))
    return Partition(labels)


def clusters_for(count: int) -> int:
    """Cluster count implied by ``count`` significant nonzero eigenvalues.

    A network of k well separated groups has one zero eigenvalue and k - 1
    small nonzero ones, so the significant modes plus the zero mode span
    the k group indicators.
    """
    return count + 1


def cluster_means(values: np.ndarray, partition: Partition) -> np.ndarray:
    sums = np.zeros((partition.K, values.shape[1]))
    np.add.at(sums, partition.assignment, values)
    return sums / partition.sizes()[:, None]


def level_seed(kmeans_cfg: KMeansConfig, iteration: int, level: int) -> int:
    """Deterministic k-means seed for one (iteration, level) cell."""
    ss = np.random.SeedSequence([kmeans_cfg.seed, iteration, level])
    return int(ss.generate_state(1)[0])


def build_levels(
    panel: SeriesPanel,
    cfg: GENullConfig = GENullConfig(),
    kmeans_cfg: KMeansConfig = KMeansConfig(),
    iteration: int = 0,
) -> LevelStack:
    """Stack of increasingly coarse partitions of the panel's entities.

    Level 1 clusters the entities; level j+1 clusters the mean series of the
    level-j clusters. Each level is compared against GE(n, T) with n the
    number of series being clustered. The stack stops when a level would
    have fewer than two clusters or would not merge anything.

    Raises
    ------
    PartitioningFailure
        If level 1 has fewer than two significant eigenvalues.
    """
    if panel.n_entities < 2:
        raise PartitioningFailure(0, np.nan, "fewer than two entities to cluster")
    T = panel.n_times
    series = panel.values
    current = None  # partition of entities at the previous level
    levels: list[Level] = []
    j = 1
    while True:
        spec = laplacian(correlation(series), cfg.zero_tolerance)
        threshold = ge_threshold(series.shape[0], T, cfg)
        count = count_significant(spec, threshold)
        if j == 1 and count < 2:
            raise PartitioningFailure(count, threshold)
        k = clusters_for(count)
        if k < 2 or k >= series.shape[0]:
            break
        seed = level_seed(kmeans_cfg, iteration, j)
        part = spectral_kmeans(spec, k, seed, kmeans_cfg.restarts, kmeans_cfg.max_iter)
        entity_part = part if current is None else current.compose(part).canonical()
        levels.append(Level(entity_part, count, threshold, seed))
        current = entity_part
        series = cluster_means(panel.values, current)
        j += 1
    if not levels:
        # count >= 2 always yields k >= 3; only reachable when k >= N
        raise PartitioningFailure(count, threshold, "level 1 would not merge any entities")
    return LevelStack(levels, T)
