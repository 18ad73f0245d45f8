"""Partition decoupling: iterated scrubbing, reconstruction and PDNM synthesis.

Iteration 0 scrubs the single market cluster (every entity in one cluster).
Iteration ``alpha >= 1`` rebuilds the level stack on the current residual
panel, takes level ``pv[alpha - 1]`` and scrubs it. The stored pressures,
means and sds invert every step exactly, so replacing the terminal residual
with Gaussian noise and inverting gives a Partition Decoupled Null Model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    IncompleteRecordError,
    LevelOutOfRange,
    PartitioningFailure,
    ScrubFailure,
    UninvertibleRecordError,
)
from .panel import SeriesPanel, row_moments
from .scrub import PROJECTION_RCOND, scrub, unscrub
from .spectral import GENullConfig, KMeansConfig, LevelStack, Partition, build_levels

COMPLETED = "Completed"
PARTITIONING_FAILURE = "PartitioningFailure"
PROJECTION_FAILURE = ScrubFailure.PROJECTION
DEGENERATE_CLUSTER = ScrubFailure.DEGENERATE
TERMINATIONS = (COMPLETED, PARTITIONING_FAILURE, PROJECTION_FAILURE, DEGENERATE_CLUSTER)

RECORD_FORMAT = "pdmnet.decomposition"


@dataclass
class IterationRecord:
    alpha: int
    level: int | None
    partition: Partition
    characteristic: np.ndarray
    pressures: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    condition_estimate: float
    level_stack: LevelStack | None = None

    @property
    def K(self) -> int:
        return self.partition.K


@dataclass
class DecompositionRecord:
    entities: list[str]
    times: list[str]
    partition_vector: tuple[int, ...]
    iterations: list[IterationRecord]
    terminal_panel: SeriesPanel
    termination: str = COMPLETED
    diagnostics: dict = field(default_factory=dict)
    ge_config: GENullConfig = field(default_factory=GENullConfig)
    kmeans_config: KMeansConfig = field(default_factory=KMeansConfig)

    @property
    def m(self) -> int:
        """Index of the last stored iteration (-1 if nothing was scrubbed)."""
        return len(self.iterations) - 1

    def sizes(self) -> list[int]:
        return [it.K for it in self.iterations]

    def partitions(self) -> list[Partition]:
        return [it.partition for it in self.iterations]


@dataclass
class PdnmSpec:
    record: DecompositionRecord
    noise_seed: int = 0


def _scrub_step(state, partition, alpha, level, stack, min_rcond=PROJECTION_RCOND):
    res = scrub(state, partition, min_rcond)
    it = IterationRecord(
        alpha=alpha,
        level=level,
        partition=partition,
        characteristic=res.characteristic.series,
        pressures=res.pressures,
        means=res.residual_means,
        sds=res.residual_sds,
        condition_estimate=res.condition_estimate,
        level_stack=stack,
    )
    return it, res.residual_panel


def _scrub_failure_diag(exc: ScrubFailure, alpha: int) -> dict:
    return {
        "iteration": alpha,
        "detail": exc.detail,
        "indices": list(exc.indices),
        "condition_estimate": exc.condition_estimate,
    }


def _partitioning_diag(exc: PartitioningFailure, alpha: int) -> dict:
    return {
        "iteration": alpha,
        "detail": str(exc),
        "significant_count": exc.count,
        "threshold": exc.threshold,
    }


def decompose(
    panel: SeriesPanel,
    pv=(),
    cfg: GENullConfig = GENullConfig(),
    kmeans_cfg: KMeansConfig = KMeansConfig(),
    min_rcond: float = PROJECTION_RCOND,
) -> DecompositionRecord:
    """Run the partition decoupling method for partition vector ``pv``.

    ``panel`` is the row-normalized input D^0. Partitioning or scrub
    failures end the run early and are recorded in ``termination``; they
    are results, not errors. ``min_rcond`` is the reciprocal condition
    number below which a scrub is a ``ProjectionFailure``.

    Raises
    ------
    LevelOutOfRange
        If ``pv[alpha - 1]`` exceeds the number of levels built at
        iteration ``alpha``.
    """
    pv = tuple(int(x) for x in pv)
    if any(x < 1 for x in pv):
        raise ValueError(f"partition vector entries must be >= 1, got {pv}")
    state = panel.with_values(panel.values, 0)
    iterations: list[IterationRecord] = []
    termination, diag = COMPLETED, {}

    try:
        it, state_next = _scrub_step(
            state, Partition.trivial(panel.n_entities), 0, None, None, min_rcond
        )
        iterations.append(it)
        state = state_next
    except ScrubFailure as exc:
        termination, diag = exc.kind, _scrub_failure_diag(exc, 0)

    if termination == COMPLETED:
        for alpha, level in enumerate(pv, start=1):
            try:
                stack = build_levels(state, cfg, kmeans_cfg, iteration=alpha)
            except PartitioningFailure as exc:
                termination, diag = PARTITIONING_FAILURE, _partitioning_diag(exc, alpha)
                break
            if level > len(stack):
                raise LevelOutOfRange(alpha, level, len(stack))
            try:
                it, state_next = _scrub_step(
                    state, stack[level - 1].partition, alpha, level, stack, min_rcond
                )
            except ScrubFailure as exc:
                termination, diag = exc.kind, _scrub_failure_diag(exc, alpha)
                break
            iterations.append(it)
            state = state_next

    return DecompositionRecord(
        entities=list(panel.entities),
        times=list(panel.times),
        partition_vector=pv,
        iterations=iterations,
        terminal_panel=state,
        termination=termination,
        diagnostics=diag,
        ge_config=cfg,
        kmeans_config=kmeans_cfg,
    )


def _check_complete(record: DecompositionRecord) -> None:
    if record.termination not in TERMINATIONS:
        raise IncompleteRecordError(f"unknown termination {record.termination!r}")
    if record.termination == COMPLETED and len(record.iterations) != len(record.partition_vector) + 1:
        raise IncompleteRecordError(
            f"completed record for pv {list(record.partition_vector)} must hold "
            f"{len(record.partition_vector) + 1} iterations, found {len(record.iterations)}"
        )
    N, T = record.terminal_panel.values.shape
    for it in record.iterations:
        shapes = (
            it.characteristic.shape == (it.K, T),
            it.pressures.shape == (N, it.K),
            np.shape(it.means) == (N,),
            np.shape(it.sds) == (N,),
            it.partition.N == N,
        )
        if not all(shapes):
            raise IncompleteRecordError(f"iteration {it.alpha} has inconsistent shapes")


def reconstruct(record: DecompositionRecord, terminal=None) -> SeriesPanel:
    """Invert every stored scrub, from the last iteration down to 0.

    ``terminal`` optionally replaces the stored terminal panel values.
    """
    _check_complete(record)
    values = record.terminal_panel.values if terminal is None else np.asarray(terminal, float)
    if values.shape != record.terminal_panel.values.shape:
        raise IncompleteRecordError("terminal panel shape does not match record")
    for it in reversed(record.iterations):
        values = unscrub(values, it.characteristic, it.pressures, it.means, it.sds)
    return SeriesPanel(list(record.entities), list(record.times), values, 0)


def generate_pdnm(spec: PdnmSpec) -> SeriesPanel:
    """Synthetic panel from a record with Gaussian noise as terminal residual.

    The noise rows are normalized to mean 0 and sd 1 before inversion, like
    the forward pipeline's terminal panel.
    """
    record = spec.record
    if record.termination not in (COMPLETED, PARTITIONING_FAILURE):
        raise UninvertibleRecordError(
            f"record terminated with {record.termination}; pressures past that "
            "point are not reliable, refusing to build a null model"
        )
    rng = np.random.default_rng(spec.noise_seed)
    noise = rng.standard_normal(record.terminal_panel.values.shape)
    means, sds = row_moments(noise)
    noise = (noise - means[:, None]) / sds[:, None]
    return reconstruct(record, terminal=noise)


def parameter_count(record: DecompositionRecord) -> int:
    """Per-entity parameters stored: sum of cluster counts + 2 per iteration."""
    return sum(it.K for it in record.iterations) + 2 * len(record.iterations)


@dataclass
class TreeNode:
    partition_vector: tuple[int, ...]
    sizes: list[int]
    termination: str
    diagnostics: dict = field(default_factory=dict)
    children: list["TreeNode"] = field(default_factory=list)

    def leaves(self) -> list["TreeNode"]:
        if not self.children:
            return [self]
        return [leaf for c in self.children for leaf in c.leaves()]

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def to_dict(self) -> dict:
        return {
            "partition_vector": list(self.partition_vector),
            "sizes": list(self.sizes),
            "termination": self.termination,
            "diagnostics": self.diagnostics,
            "children": [c.to_dict() for c in self.children],
        }


def partition_tree(
    panel: SeriesPanel,
    max_depth: int,
    cfg: GENullConfig = GENullConfig(),
    kmeans_cfg: KMeansConfig = KMeansConfig(),
) -> TreeNode:
    """Depth-first enumeration of all partition vectors up to ``max_depth``.

    Each node records the cluster counts ``|C^alpha|`` along its path. A
    node's partitions depend only on its own prefix, so siblings share the
    parent's iterations; the level stack is built once per node.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    state = panel.with_values(panel.values, 0)
    try:
        it, state = _scrub_step(state, Partition.trivial(panel.n_entities), 0, None, None)
    except ScrubFailure as exc:
        return TreeNode((), [], exc.kind, _scrub_failure_diag(exc, 0))
    root = TreeNode((), [it.K], COMPLETED)
    _grow(root, state, max_depth, cfg, kmeans_cfg)
    return root


def _grow(node, state, max_depth, cfg, kmeans_cfg):
    alpha = len(node.partition_vector) + 1
    if alpha > max_depth:
        return
    try:
        stack = build_levels(state, cfg, kmeans_cfg, iteration=alpha)
    except PartitioningFailure as exc:
        node.termination = PARTITIONING_FAILURE
        node.diagnostics = _partitioning_diag(exc, alpha)
        return
    for level in range(1, len(stack) + 1):
        pv = node.partition_vector + (level,)
        try:
            it, child_state = _scrub_step(state, stack[level - 1].partition, alpha, level, stack)
        except ScrubFailure as exc:
            node.children.append(
                TreeNode(pv, list(node.sizes), exc.kind, _scrub_failure_diag(exc, alpha))
            )
            continue
        child = TreeNode(pv, node.sizes + [it.K], COMPLETED)
        node.children.append(child)
        _grow(child, child_state, max_depth, cfg, kmeans_cfg)


# --------------------------------------------------------------------------
# serialization


def _floats(a):
    return np.asarray(a, dtype=float).tolist()


def record_to_dict(record: DecompositionRecord, meta: dict | None = None) -> dict:
    out = {
        "format": RECORD_FORMAT,
        "version": __version__,
        "partition_vector": list(record.partition_vector),
        "entities": list(record.entities),
        "times": list(record.times),
        "termination": {"status": record.termination, **record.diagnostics},
        "ge_config": record.ge_config.to_dict(),
        "kmeans_config": record.kmeans_config.to_dict(),
        "iterations": [
            {
                "alpha": it.alpha,
                "level": it.level,
                "partition": it.partition.to_dict(),
                "characteristic": _floats(it.characteristic),
                "condition_estimate": it.condition_estimate,
                "parameters": {
                    "pressures": _floats(it.pressures),
                    "means": _floats(it.means),
                    "sds": _floats(it.sds),
                },
                "level_stack": None if it.level_stack is None else it.level_stack.to_dict(),
            }
            for it in record.iterations
        ],
        "terminal_panel": {
            "iteration": record.terminal_panel.iteration,
            "values": _floats(record.terminal_panel.values),
        },
    }
    if meta is not None:
        out = {"meta": meta, **out}
    return out


def record_from_dict(d: dict) -> DecompositionRecord:
    if d.get("format") != RECORD_FORMAT:
        raise IncompleteRecordError(f"not a decomposition record (format {d.get('format')!r})")
    try:
        entities, times = d["entities"], d["times"]
        iterations = []
        for x in d["iterations"]:
            p = x["parameters"]
            iterations.append(
                IterationRecord(
                    alpha=x["alpha"],
                    level=x["level"],
                    partition=Partition.from_dict(x["partition"]),
                    characteristic=np.array(x["characteristic"], dtype=float).reshape(
                        x["partition"]["K"], len(times)
                    ),
                    pressures=np.array(p["pressures"], dtype=float).reshape(
                        len(entities), x["partition"]["K"]
                    ),
                    means=np.array(p["means"], dtype=float),
                    sds=np.array(p["sds"], dtype=float),
                    condition_estimate=x["condition_estimate"],
                    level_stack=None
                    if x["level_stack"] is None
                    else LevelStack.from_dict(x["level_stack"]),
                )
            )
        term = dict(d["termination"])
        status = term.pop("status")
        terminal = SeriesPanel(
            entities,
            times,
            np.array(d["terminal_panel"]["values"], dtype=float).reshape(len(entities), len(times)),
            d["terminal_panel"]["iteration"],
        )
        return DecompositionRecord(
            entities=entities,
            times=times,
            partition_vector=tuple(d["partition_vector"]),
            iterations=iterations,
            terminal_panel=terminal,
            termination=status,
            diagnostics=term,
            ge_config=GENullConfig(**d["ge_config"]),
            kmeans_config=KMeansConfig(**d["kmeans_config"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise IncompleteRecordError(f"malformed decomposition record: {exc}") from exc


def save_record(record: DecompositionRecord, path, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(record_to_dict(record, meta)) + "\n")


def load_record(path) -> DecompositionRecord:
    return record_from_dict(json.loads(Path(path).read_text()))
