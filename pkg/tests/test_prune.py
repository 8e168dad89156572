import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dfkd.errors import ConfigError, ContractError
from dfkd.nn import LayerSpec, Model, checkpoint_bytes, tinynet
from dfkd.prune import (
    MaskSet, apply_mask, compute_mask, global_l1_threshold, prune, pruned_indices, sparsity_csv, sparsity_report,
)


def model_with_weights(weights):
    """Linear chain 1 -> ... whose prunable weights are exactly ``weights`` (list of 2-D arrays)."""
    specs = [LayerSpec("linear", {"in_features": w.shape[1], "out_features": w.shape[0]}) for w in weights]
    m = Model((weights[0].shape[1],), specs, seed=0)
    for (_, t), w in zip(m.prunable_weights(), weights):
        t.data[...] = w
    return m


def test_hand_case_single_tensor():
    m = model_with_weights([np.array([[0.1, -0.5, 0.3, -0.05]])])
    mask = compute_mask(m, 0.5)
    assert mask.masks["0.weight"].ravel().tolist() == [0, 1, 1, 0]
    assert np.isclose(global_l1_threshold(m, 0.5), 0.1)


def test_global_not_per_layer():
    m = model_with_weights([np.array([[0.2]]), np.array([[0.1], [0.3]])])
    mask = compute_mask(m, 1 / 3)
    assert mask.masks["0.weight"].ravel().tolist() == [1]
    assert mask.masks["1.weight"].ravel().tolist() == [0, 1]


def test_p_zero_prunes_nothing():
    m = tinynet(seed=1)
    before = checkpoint_bytes(m)
    assert global_l1_threshold(m, 0.0) == float("-inf")
    student = prune(m, 0.0)
    assert all(v.all() for v in student.mask.masks.values())
    assert checkpoint_bytes(m) == before


def test_ties_resolved_stably():
    m = model_with_weights([np.full((2, 3), 0.4)])
    mask = compute_mask(m, 0.5)
    assert mask.pruned_count() == 3
    assert mask.masks["0.weight"].ravel().tolist() == [0, 0, 0, 1, 1, 1]


def test_exact_count_tinynet():
    m = tinynet(seed=4)
    mask = compute_mask(m, 0.75)
    assert mask.pruned_count() == math.floor(0.75 * mask.total())
    assert set(mask.masks) == {"0.weight", "3.weight", "6.weight", "10.weight"}


def test_apply_mask_contracts():
    m = tinynet(seed=4)
    ones = MaskSet({k: np.ones_like(t.data, dtype=np.uint8) for k, t in m.prunable_weights()}, float("-inf"))
    before = checkpoint_bytes(m)
    apply_mask(m, ones)
    m.mask = None
    assert checkpoint_bytes(m) == before

    zeros = dict(ones.masks)
    zeros["3.weight"] = np.zeros_like(zeros["3.weight"])
    apply_mask(m, MaskSet(zeros, 0.0))
    assert not m.layers[3].weight.data.any()

    mask = compute_mask(m, 0.6)
    once = checkpoint_bytes(apply_mask(m, mask))
    assert checkpoint_bytes(apply_mask(m, mask)) == once

    with pytest.raises(ContractError):
        apply_mask(m, MaskSet({"1.weight": np.ones(16, np.uint8)}, 0.0))
    with pytest.raises(ContractError):
        apply_mask(m, MaskSet({"0.weight": np.ones((2, 2), np.uint8)}, 0.0))


def test_invalid_amount():
    with pytest.raises(ConfigError):
        compute_mask(tinynet(), 1.0)
    with pytest.raises(ConfigError):
        compute_mask(tinynet(), -0.1)


def test_sparsity_report():
    m = tinynet(seed=7)
    rows = sparsity_report(m)
    assert rows[-1].layer == "global" and rows[-1].zeros == 0
    student = prune(m, 0.75)
    rows = sparsity_report(student, student.mask)
    glob = rows[-1]
    assert abs(glob.fraction - 0.75) <= 1 / glob.total
    assert any(abs(r.fraction - 0.75) > 0.01 for r in rows[:-1])
    csv_text = sparsity_csv(rows)
    assert csv_text.splitlines()[0] == "layer,total,zeros,fraction"
    assert len(csv_text.splitlines()) == len(rows) + 1


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 60), elements=st.floats(-3, 3)),
       st.lists(st.floats(0, 0.99), min_size=2, max_size=5))
def test_pruned_sets_nest_and_are_exact(mags, ps):
    mags = np.abs(mags)
    sets = []
    for p in sorted(ps):
        idx = pruned_indices(mags, p)
        assert len(idx) == math.floor(p * mags.size)
        if len(idx):
            assert mags[idx].max() <= np.delete(mags, idx).min(initial=np.inf)
        sets.append(set(idx.tolist()))
    assert all(a <= b for a, b in zip(sets, sets[1:]))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=4), st.floats(0, 0.99), st.integers(0, 2**16))
def test_layered_equals_single_tensor_oracle(sizes, p, seed):
    r = np.random.default_rng(seed)
    specs, prev = [], 2
    for n in sizes:
        specs.append(LayerSpec("linear", {"in_features": prev, "out_features": n}))
        prev = n
    m = Model((2,), specs, seed=0)
    for (_, t) in m.prunable_weights():
        t.data[...] = r.normal(size=t.data.shape).astype(np.float32)
    mask = compute_mask(m, p)
    flat = np.concatenate([np.abs(t.data).ravel() for _, t in m.prunable_weights()])
    oracle = np.ones(flat.size, np.uint8)
    oracle[np.argsort(flat, kind="stable")[:math.floor(p * flat.size)]] = 0
    assert np.array_equal(np.concatenate([v.ravel() for v in mask.masks.values()]), oracle)
