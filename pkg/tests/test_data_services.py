import json
import os

import numpy as np
import pytest

from config import DataConfig
from data_services.dataset import IdentityDataset
from data_services.directory_loader import load_directory, write_manifest
from data_services.episodes import make_episode, sample_episodes
from data_services.synth_data_service import (
    BACKGROUND, OCCLUDER, ViewParams, build_dataset, export_dataset, generate_identity, render_identity_views,
    render_view,
)
from utils.exceptions import DataError
from utils.image_utils import save_image

TORSO = (slice(18, 30), slice(21, 35))
LEGS = (slice(37, 49), slice(23, 33))


def _chroma(image, region):
    mean = image[region].reshape(-1, 3).mean(axis=0)
    return mean - mean.mean()


# --- synthetic identities ------------------------------------------------------

def test_build_is_deterministic_and_ordered():
    cfg = DataConfig(ids=3, views=2, side=16)
    first, second = build_dataset(cfg, seed=9), build_dataset(cfg, seed=9)
    assert list(first.labels) == [0, 0, 1, 1, 2, 2]
    assert list(first.cameras) == [0, 1, 0, 1, 0, 1]
    for a, b in zip(first.items, second.items):
        np.testing.assert_array_equal(a, b)


def test_views_do_not_depend_on_the_dataset_size():
    small = build_dataset(DataConfig(ids=2, views=2, side=16), seed=1)
    large = build_dataset(DataConfig(ids=5, views=2, side=16), seed=1)
    np.testing.assert_array_equal(small.items[3], large.items[3])


def test_id_offset_renders_the_same_identities():
    shifted = build_dataset(DataConfig(ids=2, views=2, side=16, id_offset=3), seed=1)
    plain = build_dataset(DataConfig(ids=5, views=2, side=16), seed=1)
    assert shifted.identities == [3, 4]
    np.testing.assert_array_equal(shifted.items[0], plain.items[6])


def test_identities_have_distinct_attributes():
    protos = [generate_identity(7, i) for i in range(200)]
    assert len({p.hue_bins for p in protos}) == 200
    with pytest.raises(DataError):
        generate_identity(7, 12 ** 3)


def test_images_are_quantized_and_in_range():
    view = render_identity_views(DataConfig(side=24), 0, 5)[1][1]
    assert view.shape == (24, 24, 3)
    assert view.min() >= 0.0 and view.max() <= 1.0
    np.testing.assert_allclose(view * 255, np.rint(view * 255), atol=1e-9)


def test_part_colours_separate_identities():
    neutral = ViewParams(camera=0)
    protos = [generate_identity(0, i) for i in range(12)]
    for region, part in ((TORSO, 1), (LEGS, 2)):
        a = next(p for p in protos if p.hue_bins[part] != protos[0].hue_bins[part])
        gap = _chroma(render_view(protos[0], neutral), region) - _chroma(render_view(a, neutral), region)
        assert np.linalg.norm(gap) > 0.02


def test_brightness_shifts_every_channel():
    proto = generate_identity(0, 2)
    plain = render_view(proto, ViewParams(camera=0))
    brighter = render_view(proto, ViewParams(camera=0, brightness=0.1))
    assert plain[0, 0, 0] == pytest.approx(BACKGROUND, abs=1 / 255)
    assert brighter[0, 0, 0] == pytest.approx(BACKGROUND + 0.1, abs=1 / 255)


def test_occluder_paints_a_flat_block():
    proto = generate_identity(0, 1)
    image = render_view(proto, ViewParams(camera=0, occlusion=(0.0, 0.0, 0.25, 0.25)))
    np.testing.assert_allclose(image[:14, :14], OCCLUDER, atol=1 / 255)


def test_occluding_most_of_the_figure_asks_for_a_resample():
    with pytest.raises(DataError, match="resample"):
        render_view(generate_identity(0, 1), ViewParams(camera=0, occlusion=(0.0, 0.0, 1.0, 1.0)))


# --- datasets and episodes -----------------------------------------------------

def test_dataset_queries(tiny_dataset):
    assert tiny_dataset.identities == [0, 1, 2, 3]
    assert tiny_dataset.cameras_of(2) == [0, 1]
    assert list(tiny_dataset.indices_of(2, camera=1)) == [5]
    assert tiny_dataset.multi_view_identities() == [0, 1, 2, 3]
    manifest = tiny_dataset.manifest()
    assert manifest["images"] == 8 and manifest["counts"]["1"] == {"0": 1, "1": 1}


def test_dataset_columns_must_agree():
    with pytest.raises(DataError):
        IdentityDataset(items=[1, 2], labels=np.array([0]), cameras=np.array([0, 0]), side=8)


def test_episode_structure(tiny_dataset, rng):
    for _ in range(50):
        episode = make_episode(tiny_dataset, 3, rng)
        episode.validate()
        assert len(set(episode.identities)) == 3
        assert episode.unknown_camera != episode.cameras[episode.target]
        ref = episode.references[episode.target]
        assert not np.array_equal(ref, episode.unknown)


def test_true_class_position_is_uniform(tiny_dataset):
    rng = np.random.default_rng(0)
    counts = np.bincount([e.target for e in sample_episodes(tiny_dataset, 4, 10_000, rng)], minlength=4)
    expected = 10_000 / 4
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < 16.27


def test_episode_needs_enough_multi_view_identities(tiny_dataset, rng):
    with pytest.raises(DataError):
        make_episode(tiny_dataset, 5, rng)
    with pytest.raises(DataError):
        make_episode(tiny_dataset, 1, rng)
    single_view = IdentityDataset(items=[0, 1, 2], labels=[0, 1, 2], cameras=[0, 0, 0], side=8)
    with pytest.raises(DataError):
        make_episode(single_view, 2, rng)


# --- directories ---------------------------------------------------------------

def test_export_then_load_reproduces_the_images(tmp_path, tiny_dataset):
    paths = export_dataset(tiny_dataset, str(tmp_path))
    assert len(paths) == 8
    assert os.path.isfile(tmp_path / "0002" / "1_0.ppm")
    assert json.loads((tmp_path / "manifest.json").read_text())["images"] == 8

    loaded = load_directory(str(tmp_path), side=8)
    assert loaded.identities == tiny_dataset.identities
    assert list(loaded.cameras) == list(tiny_dataset.cameras)
    for a, b in zip(loaded.items, tiny_dataset.items):
        np.testing.assert_array_equal(a, b)


def test_png_export(tmp_path, tiny_dataset):
    export_dataset(tiny_dataset, str(tmp_path), image_format="png")
    loaded = load_directory(str(tmp_path), side=8)
    np.testing.assert_array_equal(loaded.items[-1], tiny_dataset.items[-1])
    with pytest.raises(DataError):
        export_dataset(tiny_dataset, str(tmp_path), image_format="jpg")


def test_unparseable_names_are_skipped(tmp_path, capsys):
    image = np.full((8, 8, 3), 0.5)
    save_image(str(tmp_path / "7" / "0_0.png"), image)
    save_image(str(tmp_path / "7" / "1_0.png"), image)
    save_image(str(tmp_path / "7" / "front.png"), image)
    (tmp_path / "7" / "notes.txt").write_text("x")
    dataset = load_directory(str(tmp_path), side=8)
    assert len(dataset) == 2 and dataset.identities == [7]
    assert sorted(dataset.skipped) == [os.path.join("7", "front.png"), os.path.join("7", "notes.txt")]
    assert "Skipped 2" in capsys.readouterr().out


def test_images_are_resized_to_the_configured_side(tmp_path):
    save_image(str(tmp_path / "1" / "0_0.png"), np.full((16, 16, 3), 0.2))
    dataset = load_directory(str(tmp_path), side=8)
    assert dataset.items[0].shape == (8, 8, 3)


def test_broken_directories_raise_data_errors(tmp_path):
    with pytest.raises(DataError):
        load_directory(str(tmp_path / "missing"), side=8)
    with pytest.raises(DataError):
        load_directory(str(tmp_path), side=8)
    (tmp_path / "3").mkdir()
    (tmp_path / "3" / "readme.md").write_text("x")
    with pytest.raises(DataError):
        load_directory(str(tmp_path), side=8)


def test_feature_directories_keep_paths(tmp_path, rng):
    from core_services.base_encoder import save_feature_file
    save_feature_file(str(tmp_path / "4" / "0_0.dccfeat"), rng.normal(size=(2, 3, 3)))
    save_feature_file(str(tmp_path / "4" / "1_0.dccfeat"), rng.normal(size=(2, 3, 3)))
    dataset = load_directory(str(tmp_path), side=3, features=True)
    assert all(isinstance(item, str) and item.endswith(".dccfeat") for item in dataset.items)
    write_manifest(dataset, str(tmp_path / "m.json"))
    assert json.loads((tmp_path / "m.json").read_text())["identities"] == [4]
