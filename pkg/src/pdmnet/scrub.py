"""Partition scrubbing: remove cluster effects from a panel.

Each entity series ``D(i)`` is split into a projection onto the cluster
mean ("characteristic") series plus a residual,

    D(i) = sum_k tau_k(i) V_k + R(i),

with the pressures ``tau`` chosen so that ``R(i)`` is uncorrelated with
every ``V_k``. The residual is then row-normalized,
``D'(i) = (R(i) - m(i)) / s(i)``, and ``(tau, m, s)`` are kept so the step
can be inverted exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ScrubFailure
from .panel import SeriesPanel, degenerate_rows, row_moments
from .spectral import Partition, cluster_means

# reciprocal condition number of the pressure system below which the
# characteristic series are treated as linearly dependent
PROJECTION_RCOND = 1e-12
# a residual row whose sd is below this fraction of its input row's sd is
# considered fully explained by the projection
EXPLAINED_RTOL = 1e-10


@dataclass
class CharacteristicSet:
    series: np.ndarray
    partition: Partition

    @property
    def K(self) -> int:
        return self.series.shape[0]


@dataclass
class ScrubResult:
    pressures: np.ndarray
    residual_means: np.ndarray
    residual_sds: np.ndarray
    residual_panel: SeriesPanel
    characteristic: CharacteristicSet
    condition_estimate: float

    def projection(self) -> np.ndarray:
        return self.pressures @ self.characteristic.series


def characteristic_series(panel: SeriesPanel, partition: Partition) -> CharacteristicSet:
    """Mean series of each cluster, in label order."""
    if partition.N != panel.n_entities:
        raise ValueError(
            f"partition covers {partition.N} items, panel has {panel.n_entities} rows"
        )
    return CharacteristicSet(cluster_means(panel.values, partition), partition)


def pressure_system(V: np.ndarray):
    """Matrix ``A[j, k] = corr(V_j, V_k) * sd(V_k)`` and the row sds of V."""
    means, sds = row_moments(V)
    Vc = V - means[:, None]
    cov = Vc @ Vc.T / (V.shape[1] - 1)
    corr = cov / np.outer(sds, sds)
    return corr * sds[None, :], sds, Vc


def solve_pressures(
    panel: SeriesPanel, charset: CharacteristicSet, min_rcond: float = PROJECTION_RCOND
):
    """Cluster pressures of every entity on every characteristic series.

    For entity ``i`` the pressures solve ``A tau = b`` with
    ``A[j, k] = corr(V_j, V_k) sd(V_k)`` and ``b[j] = corr(V_j, D(i)) sd(D(i))``,
    which are the normal equations of regressing the mean-centered ``D(i)``
    on the mean-centered ``V``. ``A`` is factorized once for all entities.

    Returns
    -------
    pressures : (N, K) ndarray
    condition_estimate : float
        Reciprocal 2-norm condition number of ``A``.

    Raises
    ------
    ScrubFailure
        ``DegenerateCluster`` if some ``V_k`` is constant,
        ``ProjectionFailure`` if ``A`` is numerically singular.
    """
    V = charset.series
    if V.shape[1] < 2:
        raise ScrubFailure(ScrubFailure.DEGENERATE, "need at least two time points")
    flat = degenerate_rows(V, row_moments(V)[1])
    if flat.any():
        idx = np.flatnonzero(flat)
        raise ScrubFailure(
            ScrubFailure.DEGENERATE,
            f"characteristic series {idx.tolist()} are constant",
            idx,
        )
    A, sds, Vc = pressure_system(V)
    rcond = 1.0 / np.linalg.cond(A) if A.shape[0] > 1 else 1.0
    if not np.isfinite(rcond) or rcond < min_rcond:
        raise ScrubFailure(
            ScrubFailure.PROJECTION,
            f"characteristic series are numerically linearly dependent "
            f"(rcond {rcond:.3g} < {min_rcond:g})",
            range(A.shape[0]),
            condition_estimate=float(rcond),
        )
    # corr(V_j, D) * sd(D) == cov(V_j, D) / sd(V_j); this form stays defined
    # for constant D rows
    D = panel.values
    b = (Vc @ (D - D.mean(axis=1, keepdims=True)).T) / (V.shape[1] - 1) / sds[:, None]
    tau = scipy.linalg.lu_solve(scipy.linalg.lu_factor(A), b)
    return tau.T, float(rcond)


def scrub(
    panel: SeriesPanel, partition: Partition, min_rcond: float = PROJECTION_RCOND
) -> ScrubResult:
    """One partition-scrubbing step.

    The output panel holds the normalized residuals and has
    ``iteration = panel.iteration + 1``.

    Raises
    ------
    ScrubFailure
        Propagated from :func:`solve_pressures`, or ``DegenerateCluster``
        when an entity is fully explained by the characteristic series
        (its residual has zero variance).
    """
    charset = characteristic_series(panel, partition)
    pressures, rcond = solve_pressures(panel, charset, min_rcond)
    residual = panel.values - pressures @ charset.series
    means, sds = row_moments(residual)

    _, input_sds = row_moments(panel.values)
    scale = np.maximum(input_sds, np.abs(panel.values).max(axis=1))
    explained = sds <= EXPLAINED_RTOL * np.maximum(scale, np.finfo(float).tiny)
    if explained.any():
        idx = np.flatnonzero(explained)
        names = [panel.entities[i] for i in idx[:5]]
        raise ScrubFailure(
            ScrubFailure.DEGENERATE,
            f"residual has zero variance for {len(idx)} entit(y/ies), e.g. {names}",
            idx,
            condition_estimate=rcond,
        )
    normalized = (residual - means[:, None]) / sds[:, None]
    return ScrubResult(
        pressures=pressures,
        residual_means=means,
        residual_sds=sds,
        residual_panel=panel.with_values(normalized, panel.iteration + 1),
        characteristic=charset,
        condition_estimate=rcond,
    )


def unscrub(next_values, characteristic, pressures, means, sds) -> np.ndarray:
    """Invert one scrub: ``D = tau @ V + s * D' + m``."""
    return (
        pressures @ characteristic
        + np.asarray(sds)[:, None] * next_values
        + np.asarray(means)[:, None]
    )
