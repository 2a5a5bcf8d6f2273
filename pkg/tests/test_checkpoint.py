import numpy as np
import pytest

from affectseq.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = {
        "w": rng.normal(size=(4, 3)),
        "b": rng.normal(size=(3,)),
        "scalarish": rng.normal(size=(1,)),
    }
    path = tmp_path / "ck.json"
    save_checkpoint(path, params, {"lr": 1e-3, "t": 8}, "aggregator")
    ck = load_checkpoint(path)
    assert ck.kind == "aggregator"
    assert ck.config == {"lr": 1e-3, "t": 8}
    for name in params:
        np.testing.assert_array_equal(ck.params[name], params[name])
        assert ck.params[name].dtype == np.float64


def test_same_params_write_identical_bytes(tmp_path):
    rng = np.random.default_rng(1)
    params = {"w": rng.normal(size=(5, 5))}
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_checkpoint(a, params, {"seed": 7}, "head")
    save_checkpoint(b, params, {"seed": 7}, "head")
    assert a.read_bytes() == b.read_bytes()


def test_missing_file_raises(tmp_path):
    with pytest.raises(CheckpointError, match="does not exist"):
        load_checkpoint(tmp_path / "nope.json")


def test_corrupt_json_raises(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(CheckpointError, match="not valid JSON"):
        load_checkpoint(path)


def test_shape_mismatch_raises(tmp_path):
    path = tmp_path / "bad.json"
    save_checkpoint(path, {"w": np.zeros((2, 2))}, {}, "head")
    blob = path.read_text().replace('"shape": [2, 2]', '"shape": [2, 3]')
    path.write_text(blob)
    with pytest.raises(CheckpointError, match="does not match shape"):
        load_checkpoint(path)
