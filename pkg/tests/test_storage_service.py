import numpy as np
import pytest

from utils import storage_service
from utils.exceptions import FormatError


def test_feature_file_layout(tmp_path, rng):
    values = rng.normal(size=(3, 2, 2))
    path = storage_service.write_feature_file(str(tmp_path / "q.dccfeat"), values)
    blob = open(path, "rb").read()
    assert blob.startswith(b"DCCFEAT v1 3 2 2\n")
    assert len(blob) == len(b"DCCFEAT v1 3 2 2\n") + 12 * 8
    np.testing.assert_array_equal(storage_service.read_feature_file(path), values)


def test_truncated_feature_file_reports_sizes(tmp_path, rng):
    path = storage_service.write_feature_file(str(tmp_path / "q.dccfeat"), rng.normal(size=(2, 2, 2)))
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-8])
    with pytest.raises(FormatError) as info:
        storage_service.read_feature_file(path)
    assert info.value.expected_bytes == 64 and info.value.actual_bytes == 56


@pytest.mark.parametrize("content", [b"", b"DCCFEAT v2 1 1 1\n" + b"\0" * 8, b"DCCFEAT v1 1 2 3\n" + b"\0" * 48,
                                     b"no newline at all"])
def test_malformed_feature_files(tmp_path, content):
    path = tmp_path / "bad.dccfeat"
    path.write_bytes(content)
    with pytest.raises(FormatError):
        storage_service.read_feature_file(str(path))


def test_feature_blocks_must_be_square(tmp_path):
    with pytest.raises(FormatError):
        storage_service.write_feature_file(str(tmp_path / "x.dccfeat"), np.ones((2, 2, 3)))


def test_checkpoint_round_trip(tmp_path, rng):
    tensors = {"a": rng.normal(size=(2, 3)), "adam.m/a": rng.normal(size=(2, 3)), "s": np.array(1.5)}
    meta = {"step": 7, "config": {"train": {"lr": 0.001}}}
    path = storage_service.write_checkpoint(str(tmp_path / "run" / "c.dcckpt"), tensors, meta)
    loaded, loaded_meta = storage_service.read_checkpoint(path)
    assert loaded_meta == meta
    assert set(loaded) == set(tensors)
    for name, value in tensors.items():
        np.testing.assert_array_equal(loaded[name], value)
    assert loaded["s"].shape == ()


def test_checkpoint_manifest_is_readable_text(tmp_path):
    path = storage_service.write_checkpoint(str(tmp_path / "c.dcckpt"), {"w": np.ones((2, 2))}, {"step": 1})
    head = open(path, "rb").read().split(b"\nend\n")[0].decode()
    lines = head.split("\n")
    assert lines[0] == "DCCKPT v1"
    assert lines[1].startswith("meta ")
    assert lines[2] == "tensor w 2,2 0 4"


def test_corrupt_checkpoints_are_rejected(tmp_path):
    path = storage_service.write_checkpoint(str(tmp_path / "c.dcckpt"), {"w": np.ones(4)}, {})
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-8])
    with pytest.raises(FormatError):
        storage_service.read_checkpoint(path)
    open(path, "wb").write(blob.replace(b"DCCKPT v1", b"DCCKPT v9"))
    with pytest.raises(FormatError):
        storage_service.read_checkpoint(path)
    with pytest.raises(FormatError):
        storage_service.read_checkpoint(str(tmp_path / "absent.dcckpt"))


def test_tensor_names_cannot_contain_spaces(tmp_path):
    with pytest.raises(FormatError):
        storage_service.write_checkpoint(str(tmp_path / "c.dcckpt"), {"bad name": np.ones(1)}, {})


def test_metrics_log_appends_rows(tmp_path):
    path = str(tmp_path / "metrics.csv")
    storage_service.append_metrics(path, [(1, 1.25, 0.5, 0.001)])
    storage_service.append_metrics(path, [(2, 1.0, 0.75, 0.00088)])
    assert open(path).readline().strip() == "step,loss,acc,lr"
    assert storage_service.read_metrics(path) == [(1, 1.25, 0.5, 0.001), (2, 1.0, 0.75, 0.00088)]


def test_json_helpers(tmp_path):
    path = storage_service.save_json(str(tmp_path / "d" / "x.json"), {"k": [1, 2]})
    assert storage_service.load_json(path) == {"k": [1, 2]}
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(FormatError):
        storage_service.load_json(str(tmp_path / "broken.json"))
