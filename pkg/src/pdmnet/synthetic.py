"""Planted panels and records with known cluster structure."""
from __future__ import annotations

import numpy as np

from .panel import SeriesPanel, row_moments
from .pdm import COMPLETED, DecompositionRecord, IterationRecord
from .spectral import Partition


def _normalized(X):
    means, sds = row_moments(X)
    return (X - means[:, None]) / sds[:, None]


def _labels(n, prefix):
    width = len(str(n - 1))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def block_panel(sizes, T, rho, seed=0, normalize=True) -> tuple[SeriesPanel, np.ndarray]:
    """Rows ``sqrt(rho) f_k + sqrt(1 - rho) e_i`` for i in block k.

    Members of a block have population correlation ``rho``; blocks are
    independent. Returns the panel and the planted block labels.
    """
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    F = rng.standard_normal((len(sizes), T))
    X = np.sqrt(rho) * F[labels] + np.sqrt(1 - rho) * rng.standard_normal((labels.size, T))
    if normalize:
        X = _normalized(X)
    return SeriesPanel(_labels(labels.size, "E"), _labels(T, "t"), X), labels


def hierarchical_panel(
    n_coarse, fine_per_coarse, block_size, T, rho_coarse, rho_fine, seed=0
) -> tuple[SeriesPanel, np.ndarray, np.ndarray]:
    """Two-level planted panel: fine blocks nested inside coarse blocks.

    Members of the same fine block correlate at about ``rho_coarse +
    rho_fine``; members of different fine blocks in one coarse block at
    ``rho_coarse``. Returns ``(panel, fine_labels, coarse_labels)``.
    """
    rng = np.random.default_rng(seed)
    n_fine = n_coarse * fine_per_coarse
    fine = np.repeat(np.arange(n_fine), block_size)
    coarse = fine // fine_per_coarse
    G = rng.standard_normal((n_coarse, T))
    F = rng.standard_normal((n_fine, T))
    noise = 1.0 - rho_coarse - rho_fine
    X = (
        np.sqrt(rho_coarse) * G[coarse]
        + np.sqrt(rho_fine) * F[fine]
        + np.sqrt(noise) * rng.standard_normal((fine.size, T))
    )
    panel = SeriesPanel(_labels(fine.size, "E"), _labels(T, "t"), _normalized(X))
    return panel, fine, coarse


def crossed_partitions(N, K1, K2) -> tuple[np.ndarray, np.ndarray]:
    """Two interacting partitions: contiguous blocks crossed with residues mod K2."""
    if N % K1:
        raise ValueError("N must be divisible by K1")
    idx = np.arange(N)
    return idx // (N // K1), idx % K2


def planted_record(partitions, T, loadings, market_loading=0.5, seed=0) -> DecompositionRecord:
    """Record whose inversion plants the given partitions, one per iteration.

    Iteration 0 is the market cluster with pressure ``sqrt(market_loading)``.
    At iteration ``alpha`` every entity loads ``sqrt(loadings[alpha-1])`` on
    its own cluster's characteristic series (independent standard normal
    series) and carries the rest of its variance in the next residual, so
    the planted within-cluster correlation of D^alpha is
    ``loadings[alpha-1]``.
    """
    # keyed stream so a noise_seed equal to ``seed`` cannot replay these draws
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x504C41]))
    parts = [np.asarray(p, dtype=np.int64) for p in partitions]
    N = parts[0].size
    all_parts = [np.zeros(N, dtype=np.int64)] + parts
    all_loads = [market_loading] + list(loadings)
    if len(all_loads) != len(all_parts):
        raise ValueError("need one loading per planted partition")
    iterations = []
    for alpha, (assign, load) in enumerate(zip(all_parts, all_loads)):
        part = Partition(assign)
        V = _normalized(rng.standard_normal((part.K, T)))
        tau = np.zeros((N, part.K))
        tau[np.arange(N), part.assignment] = np.sqrt(load)
        iterations.append(
            IterationRecord(
                alpha=alpha,
                level=None if alpha == 0 else 1,
                partition=part,
                characteristic=V,
                pressures=tau,
                means=np.zeros(N),
                sds=np.full(N, np.sqrt(1.0 - load)),
                condition_estimate=1.0,
            )
        )
    terminal = SeriesPanel(
        _labels(N, "E"),
        _labels(T, "t"),
        _normalized(rng.standard_normal((N, T))),
        len(iterations),
    )
    return DecompositionRecord(
        entities=list(terminal.entities),
        times=list(terminal.times),
        partition_vector=(1,) * len(parts),
        iterations=iterations,
        terminal_panel=terminal,
        termination=COMPLETED,
    )


def rotation_panel(
    n_sectors=4, per_sector=25, T=2520, offset=None, amplitude=0.5, noise=1.0, seed=0
):
    """Market panel whose sector loadings cycle with a phase offset between sectors.

    Sector ``s`` has market loading ``1 + amplitude * sin(2 pi (t - s offset) / T)``.
    A balancing population labelled ``N`` carries the opposite swings, so the
    market mean's loading stays constant and capital only rotates between
    groups. Returns ``(panel, labels)`` with a ``LabelTable``.
    """
    from .analysis import SECTOR_CODES, LabelTable

    codes = [c for c in SECTOR_CODES if c != "N"][:n_sectors]
    if len(codes) < n_sectors:
        raise ValueError("too many sectors for the label scheme")
    if offset is None:
        offset = T / 8
    rng = np.random.default_rng(seed)
    market = rng.standard_normal(T)
    t = np.arange(T)
    n = 2 * n_sectors * per_sector
    load = np.empty((n, T))
    for s in range(n_sectors):
        swing = amplitude * np.sin(2 * np.pi * (t - s * offset) / T)
        load[s * per_sector : (s + 1) * per_sector] = 1 + swing
        base = (n_sectors + s) * per_sector
        load[base : base + per_sector] = 1 - swing
    X = load * market + noise * rng.standard_normal((n, T))
    entities = _labels(n, "E")
    labels = LabelTable(
        {entities[i]: codes[i // per_sector] for i in range(n_sectors * per_sector)}
    )
    return SeriesPanel(entities, _labels(T, "t"), X), labels
