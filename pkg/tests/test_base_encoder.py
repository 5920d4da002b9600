import numpy as np
import pytest

from config import EncoderConfig
from core_services.base_encoder import (
    FeatureMap, conv2d, encode, init_stem, load_feature_file, max_pool, save_feature_file,
)
from core_services.tensor_core import backward, constant, parameter, reduce_sum
from utils.exceptions import FormatError, ShapeError


@pytest.fixture
def stem_cfg():
    return EncoderConfig(stem_channels=(4, 6), stem_strides=(2, 1), pool=2, input_side=16)


def test_stem_output_has_configured_geometry(stem_cfg, rng):
    params = init_stem(stem_cfg, rng)
    features = encode(rng.uniform(size=(16, 16, 3)), stem_cfg, params)
    assert features.values.shape == (stem_cfg.channels, stem_cfg.side, stem_cfg.side) == (6, 2, 2)
    batch = encode(rng.uniform(size=(3, 16, 16, 3)), stem_cfg, params)
    assert batch.batched and batch.values.shape == (3, 6, 2, 2)


def test_batch_encoding_matches_single_images(stem_cfg, rng):
    params = init_stem(stem_cfg, rng)
    images = rng.uniform(size=(2, 16, 16, 3))
    batch = encode(images, stem_cfg, params).values.data
    np.testing.assert_allclose(batch[1], encode(images[1], stem_cfg, params).values.data)


def test_conv2d_matches_direct_loop(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    weight = rng.normal(size=(2 * 3 * 3, 4))
    bias = rng.normal(size=4)
    out = conv2d(constant(x), constant(weight), constant(bias), kernel=3, stride=2).data

    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    kernel = weight.reshape(2, 3, 3, 4)
    expected = np.zeros((1, 4, 3, 3))
    for i in range(3):
        for j in range(3):
            patch = padded[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
            expected[0, :, i, j] = np.einsum("cyx,cyxo->o", patch, kernel) + bias
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_max_pool_routes_gradient_to_the_winning_cell():
    x = parameter(np.array([[[[1.0, 5.0], [2.0, 3.0]]]]))
    pooled = max_pool(x, 2)
    assert pooled.data.reshape(-1)[0] == 5.0
    grads = backward(None, reduce_sum(pooled))
    np.testing.assert_array_equal(grads[x][0, 0], [[0.0, 1.0], [0.0, 0.0]])


def test_wrong_image_side_is_a_shape_error(stem_cfg, rng):
    params = init_stem(stem_cfg, rng)
    with pytest.raises(ShapeError):
        encode(rng.uniform(size=(12, 12, 3)), stem_cfg, params)


def test_out_of_range_pixels_are_rejected(stem_cfg, rng):
    params = init_stem(stem_cfg, rng)
    with pytest.raises(ShapeError):
        encode(np.full((16, 16, 3), 1.5), stem_cfg, params)


def test_non_square_feature_map_is_rejected():
    with pytest.raises(ShapeError):
        FeatureMap(constant(np.ones((2, 3, 4))))


def test_file_load_mode_reads_feature_blocks(tmp_path, rng):
    cfg = EncoderConfig(mode="file-load", feature_channels=5, feature_side=3)
    values = rng.normal(size=(5, 3, 3))
    path = save_feature_file(str(tmp_path / "a.dccfeat"), values)
    np.testing.assert_array_equal(encode(path, cfg).values.data, values)
    np.testing.assert_array_equal(load_feature_file(path).values.data, values)


def test_file_load_mode_rejects_mismatched_blocks(tmp_path, rng):
    cfg = EncoderConfig(mode="file-load", feature_channels=5, feature_side=3)
    path = save_feature_file(str(tmp_path / "b.dccfeat"), rng.normal(size=(4, 3, 3)))
    with pytest.raises(FormatError):
        encode(path, cfg)


def test_stem_parameters_receive_gradients(stem_cfg, rng):
    params = init_stem(stem_cfg, rng)
    features = encode(rng.uniform(size=(16, 16, 3)), stem_cfg, params)
    grads = backward(None, reduce_sum(features.values))
    for name, tensor in params.named().items():
        assert tensor in grads, name
