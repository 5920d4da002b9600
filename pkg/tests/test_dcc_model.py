import numpy as np
import pytest

from conftest import tiny_config
from core_services.dcc_model import DCCModel
from core_services.similarity_head import episode_loss
from core_services.tensor_core import backward
from data_services.episodes import sample_episodes
from utils.exceptions import ContractError, ShapeError


@pytest.mark.parametrize("fusion, size", [("dcc", 3), ("spp", 20), ("gp", 4)])
def test_embedding_size_per_fusion(fusion, size):
    cfg = tiny_config(head={"fusion": fusion})
    assert DCCModel.embedding_size_for(cfg) == size
    model = DCCModel.initialize(cfg, np.random.default_rng(0))
    assert model.head.w.shape == (size,)
    assert (model.comparator is not None) == (fusion == "dcc")


def test_parameters_are_named_by_component(tiny_cfg):
    names = set(DCCModel.initialize(tiny_cfg, np.random.default_rng(0)).parameters())
    assert {"encoder.conv1.weight", "encoder.conv2.bias", "coattention.W_L", "comparator.W_g",
            "comparator.lstm.W_i", "head.w", "head.class_weights"} <= names


def test_initialization_is_seeded(tiny_cfg):
    first = DCCModel.initialize(tiny_cfg, np.random.default_rng(4)).state_dict()
    second = DCCModel.initialize(tiny_cfg, np.random.default_rng(4)).state_dict()
    for name in first:
        np.testing.assert_array_equal(first[name], second[name])


def test_state_dict_round_trip_and_mismatches(tiny_cfg):
    source = DCCModel.initialize(tiny_cfg, np.random.default_rng(1))
    target = DCCModel.initialize(tiny_cfg, np.random.default_rng(2))
    target.load_state_dict(source.state_dict())
    np.testing.assert_array_equal(target.coattention.W_L.data, source.coattention.W_L.data)

    state = source.state_dict()
    state["coattention.W_L"] = np.ones((3, 3))
    with pytest.raises(ShapeError):
        target.load_state_dict(state)
    state = source.state_dict()
    del state["head.b"]
    with pytest.raises(ShapeError):
        target.load_state_dict(state)


def test_untrained_loss_is_near_chance(tiny_dataset):
    cfg = tiny_config(train={"classes": 4})
    model = DCCModel.initialize(cfg, np.random.default_rng(0))
    episodes = sample_episodes(tiny_dataset, 4, 6, np.random.default_rng(0))
    outcome = episode_loss(model, episodes)
    assert outcome.loss.item() == pytest.approx(np.log(4), abs=0.5)
    assert outcome.probs.shape == (6, 4)
    np.testing.assert_allclose(outcome.probs.sum(axis=1), 1.0)
    assert 0.0 <= outcome.accuracy <= 1.0


@pytest.mark.parametrize("fusion", ["dcc", "spp", "gp"])
def test_every_parameter_receives_a_gradient(tiny_dataset, fusion):
    cfg = tiny_config(head={"fusion": fusion})
    model = DCCModel.initialize(cfg, np.random.default_rng(0))
    if model.comparator is not None:
        model.comparator.b_g.data = np.array([0.1, -0.2, 0.5])
    episodes = sample_episodes(tiny_dataset, 3, 2, np.random.default_rng(1))
    grads = backward(None, episode_loss(model, episodes).loss)
    for name, tensor in model.parameters().items():
        assert tensor in grads, name
        assert np.all(np.isfinite(grads[tensor])), name


def test_episodes_with_different_class_counts_cannot_share_a_batch(tiny_dataset, tiny_cfg):
    model = DCCModel.initialize(tiny_cfg, np.random.default_rng(0))
    rng = np.random.default_rng(2)
    mixed = sample_episodes(tiny_dataset, 3, 1, rng) + sample_episodes(tiny_dataset, 2, 1, rng)
    with pytest.raises(ContractError):
        episode_loss(model, mixed)


def test_pair_scores_cover_every_combination(tiny_dataset, tiny_cfg):
    model = DCCModel.initialize(tiny_cfg, np.random.default_rng(0))
    images = tiny_dataset.items
    scores = model.pair_scores(images[:3], images[3:8])
    assert scores.shape == (3, 5)
    assert np.all(np.abs(scores) <= 1.0)
    row = model.pair_scores([images[1]], images[3:8])
    np.testing.assert_allclose(row[0], scores[1], atol=1e-12)


def test_symmetric_scores_average_both_orders(tiny_dataset, tiny_cfg):
    model = DCCModel.initialize(tiny_cfg, np.random.default_rng(0))
    images = tiny_dataset.items[:4]
    forward = model.pair_scores(images, images)
    symmetric = model.pair_scores(images, images, symmetric=True)
    np.testing.assert_allclose(symmetric, 0.5 * (forward + forward.T), atol=1e-12)
    np.testing.assert_allclose(symmetric, symmetric.T, atol=1e-12)


def test_compare_pair_returns_the_glimpse_trajectory(tiny_dataset):
    cfg = tiny_config(comparator={"glimpses": 3})
    model = DCCModel.initialize(cfg, np.random.default_rng(0))
    comparison, pair = model.compare_pair(tiny_dataset.items[0], tiny_dataset.items[1])
    assert len(comparison.trajectory) == 6
    assert pair.A_a.shape == (1, 4, 4)
    pooled, _ = DCCModel.initialize(tiny_config(head={"fusion": "gp"}), np.random.default_rng(0)) \
        .compare_pair(tiny_dataset.items[0], tiny_dataset.items[1])
    assert pooled is None
