import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from core_services.coattention import (
    CoAttentionParams, affinity, attention_mass, co_attend, flatten_features, init_coattention,
)
from core_services.tensor_core import constant, parameter
from utils.exceptions import ShapeError


def _features(rng, channels=3, side=2, batch=None):
    shape = (channels, side, side) if batch is None else (batch, channels, side, side)
    return rng.normal(size=shape)


def test_flatten_is_row_major_over_the_grid():
    q = np.arange(8.0).reshape(2, 2, 2)
    flat = flatten_features(q).data
    np.testing.assert_array_equal(flat[0], [0.0, 1.0, 2.0, 3.0])


def test_affinity_entry_scores_cell_of_b_against_cell_of_a(rng):
    q_a, q_b = _features(rng), _features(rng)
    params = init_coattention(3, rng)
    L = affinity(q_a, q_b, params).data
    flat_a, flat_b = q_a.reshape(3, -1), q_b.reshape(3, -1)
    i, j = 1, 3
    assert L[i, j] == pytest.approx(flat_b[:, i] @ params.W_L.data @ flat_a[:, j])


def test_summaries_average_the_other_image(rng):
    q_a, q_b = _features(rng), _features(rng)
    pair = co_attend(q_a, q_b, init_coattention(3, rng))
    assert pair.L.shape == pair.A_a.shape == pair.A_b.shape == (4, 4)
    assert pair.Z_a.shape == pair.Z_b.shape == (3, 4)
    np.testing.assert_allclose(pair.A_a.data.sum(axis=1), 1.0)
    np.testing.assert_allclose(pair.A_b.data.sum(axis=1), 1.0)
    # column j of Z_a mixes the columns of b with the weights a's cell j puts on them
    flat_a, flat_b = q_a.reshape(3, -1), q_b.reshape(3, -1)
    for j in range(4):
        np.testing.assert_allclose(pair.Z_a.data[:, j], sum(pair.A_b.data[j, i] * flat_b[:, i] for i in range(4)))
        np.testing.assert_allclose(pair.Z_b.data[:, j], sum(pair.A_a.data[j, i] * flat_a[:, i] for i in range(4)))


def test_each_cell_recovers_its_matching_cell_in_the_other_image():
    order = [2, 0, 3, 1]
    q_a = np.eye(4).reshape(4, 2, 2)
    q_b = np.eye(4)[:, order].reshape(4, 2, 2)
    pair = co_attend(q_a, q_b, CoAttentionParams(parameter(20.0 * np.eye(4))))
    np.testing.assert_allclose(pair.Z_a.data, np.eye(4), atol=1e-6)
    np.testing.assert_allclose(pair.Z_b.data, np.eye(4)[:, order], atol=1e-6)


def test_identical_inputs_with_identity_weights_give_identical_summaries(rng):
    q = _features(rng)
    pair = co_attend(q, q.copy(), CoAttentionParams(parameter(np.eye(3))))
    np.testing.assert_allclose(pair.Z_a.data, pair.Z_b.data, rtol=0, atol=1e-12)


def test_swapping_the_pair_with_transposed_weights_exchanges_roles(rng):
    q_a, q_b = _features(rng), _features(rng)
    params = init_coattention(3, rng)
    pair = co_attend(q_a, q_b, params)
    swapped = co_attend(q_b, q_a, CoAttentionParams(parameter(params.W_L.data.T.copy())))
    np.testing.assert_allclose(swapped.L.data, pair.L.data.T, atol=1e-12)
    np.testing.assert_allclose(swapped.A_a.data, pair.A_b.data, atol=1e-12)
    np.testing.assert_allclose(swapped.A_b.data, pair.A_a.data, atol=1e-12)
    np.testing.assert_allclose(swapped.Z_a.data, pair.Z_b.data, atol=1e-12)
    np.testing.assert_allclose(swapped.Z_b.data, pair.Z_a.data, atol=1e-12)


def test_zero_affinity_gives_uniform_attention(rng):
    q_a, q_b = _features(rng), _features(rng)
    pair = co_attend(q_a, q_b, CoAttentionParams(parameter(np.zeros((3, 3)))))
    np.testing.assert_allclose(pair.A_a.data, 0.25)
    expected = np.tile(q_b.reshape(3, -1).mean(axis=1, keepdims=True), (1, 4))
    np.testing.assert_allclose(pair.Z_a.data, expected)


def test_batched_pairs_match_single_pairs(rng):
    q_a, q_b = _features(rng, batch=2), _features(rng, batch=2)
    params = init_coattention(3, rng)
    batch = co_attend(q_a, q_b, params)
    single = co_attend(q_a[1], q_b[1], params)
    np.testing.assert_allclose(batch.Z_b.data[1], single.Z_b.data)


def test_mismatched_feature_maps_are_rejected(rng):
    params = init_coattention(3, rng)
    with pytest.raises(ShapeError):
        co_attend(_features(rng, side=2), _features(rng, side=3), params)
    with pytest.raises(ShapeError):
        co_attend(_features(rng, channels=4), _features(rng, channels=4), params)


def test_w_l_must_be_square():
    with pytest.raises(ShapeError):
        CoAttentionParams(constant(np.ones((2, 3))))


def test_attention_mass_totals_the_grid(rng):
    pair = co_attend(_features(rng), _features(rng), init_coattention(3, rng))
    mass_a, mass_b = attention_mass(pair)
    assert mass_a.sum() == pytest.approx(4.0)
    assert mass_b.sum() == pytest.approx(4.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2 ** 16))
def test_attention_rows_are_distributions(channels, side, seed):
    rng = np.random.default_rng(seed)
    pair = co_attend(_features(rng, channels, side), _features(rng, channels, side),
                     init_coattention(channels, rng))
    assert np.all(pair.A_a.data >= 0)
    np.testing.assert_allclose(pair.A_b.data.sum(axis=-1), 1.0, atol=1e-12)
