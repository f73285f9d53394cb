"""Entropy/feature-similarity scoring and the hard-sample partition."""
import math
import warnings

import numpy as np
import pytest
import torch

from helpers import ScriptedModel, binary_entropy, indexed_images, manifest_from_arrays
from sfdaseg.errors import ContractError
from sfdaseg.selection import (
    Partition,
    SampleScore,
    centroid,
    cosine_similarity,
    partition_target,
    sample_entropy,
    select_high_entropy,
    select_low_similarity,
)


# ---------------------------------------------------------------- entropy

def test_entropy_certain_prediction_zero():
    assert sample_entropy(np.ones((2, 4, 4))) == 0.0
    assert sample_entropy(np.zeros((2, 4, 4))) == 0.0


def test_entropy_maximal_at_half():
    assert sample_entropy(np.full((1, 1), 0.5)) == pytest.approx(math.log(2), abs=1e-12)


def test_entropy_hand_value():
    # mean of the two per-pixel binary entropies; both pixels give 0.3251
    assert sample_entropy(np.array([0.9, 0.1])) == pytest.approx(0.3251, abs=5e-5)
    expected = (binary_entropy(0.9) + binary_entropy(0.1)) / 2
    assert sample_entropy(np.array([0.9, 0.1])) == pytest.approx(expected, abs=1e-12)


def test_entropy_symmetric_in_p():
    rng = np.random.default_rng(0)
    p = rng.random((2, 5, 5))
    assert sample_entropy(p) == pytest.approx(sample_entropy(1.0 - p), abs=1e-12)


def test_entropy_channel_permutation_invariant():
    rng = np.random.default_rng(1)
    p = rng.random((3, 4, 4))
    assert sample_entropy(p) == pytest.approx(sample_entropy(p[::-1]), abs=1e-15)


def test_entropy_accepts_tensors():
    p = torch.full((2, 2), 0.5)
    assert sample_entropy(p) == pytest.approx(math.log(2), abs=1e-7)


# ---------------------------------------------------------------- top-k selection

def _scores(entropies):
    return [SampleScore(f"id{i}", e, 0.0) for i, e in enumerate(entropies)]


def test_select_high_entropy_single_max():
    ids = select_high_entropy(_scores([0.1, 0.5, 0.3, 0.9, 0.2]), 0.20)
    assert ids == ["id3"]


def test_select_high_entropy_top_two():
    ids = select_high_entropy(_scores([0.1, 0.5, 0.3, 0.9, 0.2]), 0.40)
    assert set(ids) == {"id3", "id1"}


def test_select_high_entropy_matches_sort_oracle():
    rng = np.random.default_rng(7)
    vals = list(rng.random(20))
    scores = _scores(vals)
    for ratio in (0.05, 0.25, 0.5, 0.95):
        k = min(20, max(1, int(math.floor(ratio * 20 + 0.5))))
        expected = [f"id{i}" for i in np.argsort(vals)[::-1][:k]]
        assert set(select_high_entropy(scores, ratio)) == set(expected)


def test_select_high_entropy_tie_prefers_ascending_id():
    ids = select_high_entropy(_scores([0.4] * 5), 0.20)
    assert ids == ["id0"]


def test_select_high_entropy_validates():
    with pytest.raises(ContractError):
        select_high_entropy([], 0.2)
    with pytest.raises(ContractError):
        select_high_entropy(_scores([0.1]), 0.0)
    with pytest.raises(ContractError):
        select_high_entropy(_scores([0.1]), 1.0)


# ---------------------------------------------------------------- centroid / similarity

def test_centroid_two_units():
    assert np.allclose(centroid([np.array([1.0, 0.0]), np.array([0.0, 1.0])]), [0.5, 0.5])


def test_centroid_single_vector_identity():
    v = np.array([3.0, -1.0, 2.0])
    assert np.array_equal(centroid([v]), v)


def test_centroid_matches_loop_mean():
    rng = np.random.default_rng(8)
    vecs = [rng.normal(size=6) for _ in range(10)]
    total = np.zeros(6)
    for v in vecs:
        total += v
    assert np.allclose(centroid(vecs), total / 10, atol=1e-12)


def test_centroid_empty_rejected():
    with pytest.raises(ContractError):
        centroid([])


def test_cosine_hand_value():
    sim = cosine_similarity(np.array([0.7071, 0.7071]), np.array([1.0, 0.0]))
    assert sim == pytest.approx(0.7071, abs=1e-4)


def test_cosine_zero_norm_warns_and_floors():
    with pytest.warns(RuntimeWarning):
        assert cosine_similarity(np.zeros(3), np.array([1.0, 0.0, 0.0])) == -1.0


def test_select_low_similarity_hand_case():
    feats = [
        ("a", np.array([1.0, 0.0])),
        ("b", np.array([0.0, 1.0])),
        ("c", np.array([0.7071, 0.7071])),
    ]
    center = np.array([1.0, 0.0])
    # sims: a=1, b=0, c=0.7071 -> bottom third is b
    assert select_low_similarity(feats, center, 1.0 / 3.0) == ["b"]


def test_select_low_similarity_perfect_match_never_first_out():
    feats = [("match", np.array([2.0, 0.0])), ("other", np.array([0.5, 1.0]))]
    picked = select_low_similarity(feats, np.array([1.0, 0.0]), 0.5)
    assert picked == ["other"]


def test_select_low_similarity_tie_first_ids():
    feats = [(f"id{i}", np.array([1.0, 1.0])) for i in range(4)]
    picked = select_low_similarity(feats, np.array([1.0, 1.0]), 0.5)
    assert picked == ["id0", "id1"]


# ---------------------------------------------------------------- partition

def _entropy_probs(p_values, c=2, h=8, w=8):
    """Constant-probability maps; entropy ranks follow distance from 0.5."""
    return torch.stack([torch.full((c, h, w), float(p)) for p in p_values])


def _scripted_partition_model():
    # entropies: p=0.5 (idx3) > 0.6 (idx1) > 0.8 (idx2) > 0.9 (idx4) > 0.95 (idx0)
    probs = _entropy_probs([0.95, 0.6, 0.8, 0.5, 0.9])
    pooled = torch.tensor(
        [[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, -1.0]]
    )
    return ScriptedModel(probs, pooled=pooled)


def test_partition_intersection_rule():
    # D_e (sigma=0.4) = {idx3, idx1}; D_f = {idx1 (sim<0), idx4} -> D_u = {idx1}
    model = _scripted_partition_model()
    manifest = manifest_from_arrays(indexed_images(5))
    part = partition_target(manifest, model, ratio=0.40)
    assert part.unreliable_ids == ["target_0001"]
    assert part.reliable_ids == [f"target_{i:04d}" for i in (0, 2, 3, 4)]
    assert set(part.meta["high_entropy_ids"]) == {"target_0001", "target_0003"}
    assert set(part.meta["low_similarity_ids"]) == {"target_0001", "target_0004"}
    assert part.meta["empty_intersection"] is False


def test_partition_empty_intersection_degrades_gracefully():
    # entropy picks idx3; similarity picks idx1 -> empty intersection
    probs = _entropy_probs([0.95, 0.9, 0.85, 0.5, 0.8])
    pooled = torch.tensor([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    model = ScriptedModel(probs, pooled=pooled)
    manifest = manifest_from_arrays(indexed_images(5))
    part = partition_target(manifest, model, ratio=0.20)
    assert part.unreliable_ids == []
    assert part.reliable_ids == manifest.ids()
    assert part.meta["empty_intersection"] is True


def test_partition_deterministic_and_bounded():
    rng = np.random.default_rng(21)
    n = 12
    probs = torch.from_numpy(rng.uniform(0.05, 0.95, size=(n, 2, 8, 8))).float()
    pooled = torch.from_numpy(rng.normal(size=(n, 5))).float()
    model = ScriptedModel(probs, pooled=pooled)
    manifest = manifest_from_arrays(indexed_images(n))
    for sigma in (0.1, 0.3, 0.6):
        p1 = partition_target(manifest, model, ratio=sigma)
        p2 = partition_target(manifest, model, ratio=sigma)
        assert p1.unreliable_ids == p2.unreliable_ids
        assert p1.reliable_ids == p2.reliable_ids
        assert len(p1.unreliable_ids) <= round(sigma * n)
        assert sorted(p1.reliable_ids + p1.unreliable_ids) == sorted(manifest.ids())


def test_partition_monotone_in_sigma():
    rng = np.random.default_rng(22)
    n = 10
    probs = torch.from_numpy(rng.uniform(0.05, 0.95, size=(n, 2, 8, 8))).float()
    pooled = torch.from_numpy(rng.normal(size=(n, 4))).float()
    model = ScriptedModel(probs, pooled=pooled)
    manifest = manifest_from_arrays(indexed_images(n))
    previous: set = set()
    for sigma in (0.1, 0.2, 0.4, 0.7, 0.9):
        part = partition_target(manifest, model, ratio=sigma)
        current = set(part.unreliable_ids)
        assert previous <= current
        previous = current


def test_partition_empty_manifest_rejected():
    model = _scripted_partition_model()
    empty = manifest_from_arrays(indexed_images(1))
    empty.records = []
    with pytest.raises(ContractError):
        partition_target(empty, model, ratio=0.2)


def test_partition_scores_recorded():
    model = _scripted_partition_model()
    manifest = manifest_from_arrays(indexed_images(5))
    part = partition_target(manifest, model, ratio=0.40)
    by_id = {s.id: s for s in part.scores}
    assert len(by_id) == 5
    # idx3 carries the p=0.5 map: maximal entropy ln 2 across all pixels
    assert by_id["target_0003"].entropy == pytest.approx(math.log(2), abs=1e-6)
    # centroid of the pooled vectors is [0.4, -0.2]; cos([1,0], .) = 0.894
    assert by_id["target_0000"].similarity == pytest.approx(0.4 / math.hypot(0.4, 0.2), abs=1e-6)


def test_partition_json_roundtrip(tmp_path):
    model = _scripted_partition_model()
    manifest = manifest_from_arrays(indexed_images(5))
    part = partition_target(manifest, model, ratio=0.40)
    path = tmp_path / "partition.json"
    part.to_json(path)
    back = Partition.from_json(path)
    assert back.reliable_ids == part.reliable_ids
    assert back.unreliable_ids == part.unreliable_ids
    assert back.ratio == part.ratio
    assert {s.id for s in back.scores} == {s.id for s in part.scores}
