import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from config import GlimpseConfig
from core_services.glimpse_attention import (
    MIN_STRIDE, Filterbanks, GlimpseParams, extract_glimpse, filterbanks, unpack_glimpse,
)
from core_services.tensor_core import backward, constant, parameter, reduce_sum
from utils.exceptions import ShapeError


def _params(g_x, g_y, delta, gamma, K, A, B=None):
    return GlimpseParams(g_x=constant(g_x), g_y=constant(g_y), delta=constant(delta),
                         gamma=constant(gamma), K=K, A=A, B=A if B is None else B)


def test_unpack_maps_raw_vector_to_centre_stride_and_intensity():
    p = unpack_glimpse(np.array([0.0, 0.0, 1.0]), 14, 14, 2)
    assert p.g_x.item() == pytest.approx(6.5)
    assert p.g_y.item() == pytest.approx(6.5)
    assert p.delta.item() == pytest.approx(14.0)
    assert p.gamma.item() == pytest.approx(np.exp(-1.0))


def test_unpack_extremes_reach_the_grid_border():
    p = unpack_glimpse(np.array([-1.0, 1.0, 0.5]), 7, 5, 3)
    assert p.g_x.item() == pytest.approx(0.0)
    assert p.g_y.item() == pytest.approx(4.0)
    assert p.delta.item() == pytest.approx(7 / 2 * 0.5)


def test_single_filter_uses_the_whole_extent_as_stride_scale():
    p = unpack_glimpse(np.array([0.0, 0.0, -0.5]), 4, 4, 1)
    assert p.delta.item() == pytest.approx(2.0)
    assert p.gamma.item() == pytest.approx(1.0)


def test_zero_stride_is_clamped():
    p = unpack_glimpse(np.array([0.3, -0.2, 0.0]), 6, 6, 2)
    assert p.delta.item() == pytest.approx(MIN_STRIDE)


def test_unpack_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        unpack_glimpse(np.zeros(2), 4, 4, 2)
    with pytest.raises(ShapeError):
        unpack_glimpse(np.zeros(3), 0, 4, 2)


def test_filter_peaks_sit_on_the_filter_centres():
    banks = filterbanks(_params(3.0, 3.0, 1.0, 0.3, K=3, A=7))
    assert list(banks.F_X.data.argmax(axis=1)) == [2, 3, 4]
    assert list(banks.F_Y.data.argmax(axis=1)) == [2, 3, 4]


def test_division_variant_spreads_centres_by_the_inverse_stride():
    p = _params(3.0, 3.0, 0.45, 0.1, K=3, A=7)
    assert list(filterbanks(p, eq7_division=True).F_X.data.argmax(axis=1)) == [1, 3, 5]
    assert list(filterbanks(p).F_X.data.argmax(axis=1)) == [3, 3, 3]


@pytest.mark.parametrize("kernel", ["cauchy", "gaussian"])
def test_filter_rows_are_normalized(kernel):
    banks = filterbanks(_params(2.2, 1.7, 1.3, 0.8, K=2, A=5, B=4), kernel=kernel)
    assert banks.F_X.shape == (2, 5) and banks.F_Y.shape == (2, 4)
    np.testing.assert_allclose(banks.F_X.data.sum(axis=1), 1.0)
    np.testing.assert_allclose(banks.F_Y.data.sum(axis=1), 1.0)
    assert np.all(banks.F_X.data >= 0)


def test_gaussian_rows_without_mass_fall_back_to_uniform():
    banks = filterbanks(_params(1000.0, 1000.0, 1.0, 0.01, K=2, A=4), kernel="gaussian")
    np.testing.assert_allclose(banks.F_X.data, 0.25)


def test_identity_banks_return_the_scaled_grid(rng):
    Z = rng.normal(size=(2, 9))
    p = _params(1.0, 1.0, 1.0, 0.7, K=3, A=3)
    eye = constant(np.eye(3))
    G = extract_glimpse(p, Z, banks=Filterbanks(F_X=eye, F_Y=eye)).data
    np.testing.assert_allclose(G, 0.7 * Z.reshape(2, 3, 3))


def test_uniform_banks_average_each_channel(rng):
    Z = rng.normal(size=(3, 16))
    p = _params(1.5, 1.5, 1.0, 1.0, K=2, A=4)
    flat = constant(np.full((2, 4), 0.25))
    G = extract_glimpse(p, Z, banks=Filterbanks(F_X=flat, F_Y=flat)).data
    expected = np.broadcast_to(Z.mean(axis=1)[:, None, None], (3, 2, 2))
    np.testing.assert_allclose(G, expected)


def test_glimpse_reads_rows_with_f_y_and_columns_with_f_x():
    Z = np.zeros((1, 9))
    Z[0, 1 * 3 + 2] = 1.0                                      # row y=1, column x=2
    p = _params(0.0, 0.0, 1.0, 1.0, K=1, A=3)
    F_X = constant([[0.0, 0.0, 1.0]])
    F_Y = constant([[0.0, 1.0, 0.0]])
    G = extract_glimpse(p, Z, banks=Filterbanks(F_X=F_X, F_Y=F_Y)).data
    assert G.reshape(-1)[0] == pytest.approx(1.0)


def test_batched_glimpses_match_single_pairs(rng):
    raw = rng.uniform(-1, 1, size=(3, 3))
    Z = rng.normal(size=(3, 2, 16))
    cfg = GlimpseConfig(K=2)
    batch = extract_glimpse(unpack_glimpse(raw, 4, 4, 2), Z, cfg).data
    single = extract_glimpse(unpack_glimpse(raw[2], 4, 4, 2), Z[2], cfg).data
    assert batch.shape == (3, 2, 2, 2)
    np.testing.assert_allclose(batch[2], single)


def test_summary_grid_must_match_the_glimpse_grid(rng):
    with pytest.raises(ShapeError):
        extract_glimpse(unpack_glimpse(np.zeros(3), 4, 4, 2), rng.normal(size=(2, 9)))


def test_glimpse_is_differentiable_in_the_raw_vector(rng):
    raw = parameter(rng.uniform(-0.5, 0.5, size=3))
    G = extract_glimpse(unpack_glimpse(raw, 4, 4, 2), rng.normal(size=(2, 16)))
    grads = backward(None, reduce_sum(G))
    assert grads[raw].shape == (3,)
    assert np.all(np.isfinite(grads[raw]))


def test_window_is_clipped_to_the_grid():
    record = unpack_glimpse(np.array([0.0, -1.0, 1.0]), 14, 14, 2).snapshot()
    x0, y0, x1, y1 = record.window()
    assert (x0, y0) == (0.0, 0.0)
    assert x1 == pytest.approx(13.0) and y1 == pytest.approx(13.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.integers(1, 4), st.integers(2, 6))
def test_unpacked_parameters_stay_in_range(raw, K, side):
    p = unpack_glimpse(np.array(raw), side, side, K)
    assert 0.0 <= p.g_x.item() <= side - 1
    assert 0.0 <= p.g_y.item() <= side - 1
    assert p.delta.item() >= MIN_STRIDE
    assert np.exp(-1.0) - 1e-12 <= p.gamma.item() <= np.e + 1e-12


def test_extraction_is_linear_in_the_summary(rng):
    p = _params(1.7, 0.6, 1.3, 0.8, 2, 3)
    z1, z2 = rng.normal(size=(4, 9)), rng.normal(size=(4, 9))
    combined = extract_glimpse(p, 2.5 * z1 - 0.75 * z2).data
    separate = 2.5 * extract_glimpse(p, z1).data - 0.75 * extract_glimpse(p, z2).data
    np.testing.assert_allclose(combined, separate, rtol=0, atol=1e-10)


@pytest.mark.parametrize("kernel", ["cauchy", "gaussian"])
def test_sharper_intensity_concentrates_every_filter(kernel):
    peaks = []
    for gamma in np.geomspace(3.0, 0.05, 25):
        banks = filterbanks(_params(2.3, 3.6, 1.4, gamma, 3, 7), kernel=kernel)
        peaks.append(np.concatenate([banks.F_X.data.max(axis=-1), banks.F_Y.data.max(axis=-1)]))
    peaks = np.array(peaks)
    assert np.all(np.diff(peaks, axis=0) >= -1e-12)
    assert np.all(peaks[-1] > peaks[0] + 0.1)
