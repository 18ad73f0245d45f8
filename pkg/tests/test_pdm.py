import json

import numpy as np
import pytest

from pdmnet.analysis import adjusted_rand_index
from pdmnet.errors import IncompleteRecordError, LevelOutOfRange, UninvertibleRecordError
from pdmnet.panel import SeriesPanel, normalize_rows
from pdmnet.pdm import (
    COMPLETED,
    DEGENERATE_CLUSTER,
    PARTITIONING_FAILURE,
    PROJECTION_FAILURE,
    PdnmSpec,
    decompose,
    generate_pdnm,
    load_record,
    parameter_count,
    partition_tree,
    reconstruct,
    record_from_dict,
    record_to_dict,
    save_record,
)
from pdmnet.scrub import scrub
from pdmnet.spectral import GENullConfig, KMeansConfig, Partition, build_levels, cluster_means
from pdmnet.synthetic import block_panel, crossed_partitions, hierarchical_panel, planted_record


def rel_error(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


@pytest.fixture(scope="module")
def hier():
    panel, fine, coarse = hierarchical_panel(2, 3, 10, 500, 0.3, 0.35, seed=3)
    return panel, fine, coarse


def test_empty_pv_is_market_scrub(hier):
    panel, _, _ = hier
    rec = decompose(panel, ())
    assert rec.termination == COMPLETED
    assert rec.sizes() == [1]
    expected = scrub(panel, Partition.trivial(panel.n_entities)).residual_panel.values
    np.testing.assert_array_equal(rec.terminal_panel.values, expected)
    assert rec.terminal_panel.iteration == 1


def test_noise_fails_at_first_iteration():
    panel, _ = block_panel([100], 500, 0.0, seed=21)
    rec = decompose(panel, (1,))
    assert rec.termination == PARTITIONING_FAILURE
    assert rec.diagnostics["iteration"] == 1
    assert rec.sizes() == [1]
    assert rel_error(reconstruct(rec).values, panel.values) < 1e-8


def test_hierarchical_levels_in_record(hier):
    panel, fine, coarse = hier
    rec = decompose(panel, (2,))
    assert rec.iterations[1].partition == Partition(coarse).canonical()
    assert rec.iterations[1].level_stack.sizes()[:2] == [6, 2]


def test_level_out_of_range(hier):
    with pytest.raises(LevelOutOfRange) as info:
        decompose(hier[0], (9,))
    assert info.value.requested == 9 and info.value.iteration == 1


def test_planted_partitions_recovered():
    c1, c2 = crossed_partitions(90, 6, 3)
    rec = planted_record([c1, c2], 600, [0.9, 0.5], seed=4)
    panel = generate_pdnm(PdnmSpec(rec, 4))
    out = decompose(panel, (1, 1), GENullConfig(seed=0), KMeansConfig(seed=4))
    assert out.termination == COMPLETED
    assert adjusted_rand_index(out.iterations[1].partition.assignment, c1) > 0.9
    assert adjusted_rand_index(out.iterations[2].partition.assignment, c2) > 0.9


@pytest.mark.parametrize("pv", [(), (1,), (1, 1), (2, 1)])
def test_round_trip(hier, pv):
    panel = hier[0]
    rec = decompose(panel, pv)
    assert rel_error(reconstruct(rec).values, panel.values) < 1e-8


def test_zero_pressure_reconstruction():
    rng = np.random.default_rng(0)
    rec = planted_record([np.arange(6) % 2], 50, [0.5], seed=1)
    rec.iterations = rec.iterations[:1]
    rec.partition_vector = ()
    rec.iterations[0].pressures[:] = 0
    rec.iterations[0].means = rng.normal(size=6)
    out = reconstruct(rec).values
    it = rec.iterations[0]
    np.testing.assert_allclose(out, it.sds[:, None] * rec.terminal_panel.values + it.means[:, None])


def test_single_entity_panel():
    panel = SeriesPanel(["A"], [f"t{i}" for i in range(20)], np.random.default_rng(2).normal(size=(1, 20)))
    panel, _, _ = normalize_rows(panel)
    rec = decompose(panel, (1,))
    assert rec.termination == DEGENERATE_CLUSTER
    np.testing.assert_array_equal(reconstruct(rec).values, panel.values)


def test_prefix_determinism(hier):
    panel = hier[0]
    a = decompose(panel, (1,))
    b = decompose(panel, (1, 1))
    assert a.iterations[1].partition == b.iterations[1].partition
    np.testing.assert_array_equal(a.iterations[1].pressures, b.iterations[1].pressures)
    # the second iteration of b starts from a's terminal panel
    means = cluster_means(a.terminal_panel.values, b.iterations[2].partition)
    np.testing.assert_array_equal(b.iterations[2].characteristic, means)


def test_decompose_deterministic(hier):
    a = record_to_dict(decompose(hier[0], (1, 1), kmeans_cfg=KMeansConfig(seed=7)))
    b = record_to_dict(decompose(hier[0], (1, 1), kmeans_cfg=KMeansConfig(seed=7)))
    assert json.dumps(a) == json.dumps(b)


# --- PDNM


def test_pdnm_same_seed_identical(hier):
    rec = decompose(hier[0], (1,))
    a = generate_pdnm(PdnmSpec(rec, 3)).values
    b = generate_pdnm(PdnmSpec(rec, 3)).values
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, generate_pdnm(PdnmSpec(rec, 4)).values)


def test_pdnm_zero_pressures_is_noise():
    rec = planted_record([np.arange(20) % 2], 4000, [0.5], seed=0)
    for it in rec.iterations:
        it.pressures[:] = 0
    out = generate_pdnm(PdnmSpec(rec, 1)).values
    rho = np.corrcoef(out)
    off = rho[~np.eye(20, dtype=bool)]
    assert np.abs(off).max() < 5 / np.sqrt(4000)


def test_pdnm_refuses_projection_failure(hier):
    rec = decompose(hier[0], (1,))
    rec.termination = PROJECTION_FAILURE
    with pytest.raises(UninvertibleRecordError):
        generate_pdnm(PdnmSpec(rec))


def test_pdnm_closure():
    # four planted clusters of 50; re-decomposing the null model one level past
    # the record should find nothing beyond the planted structure
    closed = 0
    for seed in range(50):
        rec = planted_record([np.arange(200) // 50], 500, [0.5], seed=seed)
        panel, _, _ = normalize_rows(generate_pdnm(PdnmSpec(rec, seed)))
        out = decompose(panel, (1, 1), GENullConfig(seed=0), KMeansConfig(seed=seed))
        closed += out.termination == PARTITIONING_FAILURE and out.diagnostics["iteration"] == 2
    assert closed > 25


# --- bookkeeping


def test_parameter_count(hier):
    rec = decompose(hier[0], (1, 1))
    assert parameter_count(rec) == sum(rec.sizes()) + 2 * len(rec.iterations)


def test_record_json_round_trip(tmp_path, hier):
    rec = decompose(hier[0], (1, 1))
    path = tmp_path / "r.json"
    save_record(rec, path, meta={"note": "x"})
    back = load_record(path)
    assert back.sizes() == rec.sizes()
    assert back.termination == rec.termination
    np.testing.assert_array_equal(reconstruct(back).values, reconstruct(rec).values)
    assert json.loads(path.read_text())["meta"] == {"note": "x"}


def test_record_rejects_garbage():
    with pytest.raises(IncompleteRecordError):
        record_from_dict({"format": "something else"})
    with pytest.raises(IncompleteRecordError):
        record_from_dict({"format": "pdmnet.decomposition"})


def test_incomplete_record_refused(hier):
    rec = decompose(hier[0], (1,))
    rec.iterations = rec.iterations[:1]
    with pytest.raises(IncompleteRecordError):
        reconstruct(rec)


# --- partition tree


def test_tree_depth_one_leaves_match_levels(hier):
    panel = hier[0]
    root = partition_tree(panel, 1)
    state = scrub(panel, Partition.trivial(panel.n_entities)).residual_panel
    n_levels = len(build_levels(state, iteration=1))
    assert n_levels == 2
    assert sorted(leaf.sizes[-1] for leaf in root.leaves()) == [2, 6]


def test_tree_matches_decompose(hier):
    panel = hier[0]
    root = partition_tree(panel, 2)
    for node in root.walk():
        if node.partition_vector and node.termination == COMPLETED:
            assert decompose(panel, node.partition_vector).sizes() == node.sizes
