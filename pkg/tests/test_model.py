import numpy as np
import pytest

from rscn.model import CheckpointError, SubspaceNet, load_arrays, load_matrix, save_arrays, save_matrix


def _trained_like(rng):
    model = SubspaceNet((1, 9, 7), 3, [{"filters": 3, "kernel": 3, "stride": 2},
                                       {"filters": 4, "kernel": 3, "stride": 1}], seed=2)
    model.init_C(5)
    for p in model.parameters().values():
        p[...] = rng.standard_normal(p.shape)
    model.centroids = rng.standard_normal((3, 3))
    return model


def test_checkpoint_round_trip_bit_identical(rng, tmp_path):
    model = _trained_like(rng)
    model.save(tmp_path / "m.bin", extra={"note": "x"})
    loaded = SubspaceNet.load(tmp_path / "m.bin")
    X = rng.random((5, 1, 9, 7))
    assert np.array_equal(model.encode(X), loaded.encode(X))
    assert np.array_equal(model.decoder.forward(model.encode(X)), loaded.decoder.forward(loaded.encode(X)))
    assert np.array_equal(model.classify(model.encode(X))[0], loaded.classify(loaded.encode(X))[0])
    assert np.array_equal(model.C, loaded.C)
    assert np.array_equal(model.centroids, loaded.centroids)
    assert load_arrays(tmp_path / "m.bin")[1]["extra"] == {"note": "x"}


def test_shallow_model_round_trip(rng, tmp_path):
    model = SubspaceNet((6,), 2)
    model.head.params["W"][...] = rng.standard_normal((6, 2))
    model.save(tmp_path / "s.bin")
    X = rng.standard_normal((4, 6))
    np.testing.assert_array_equal(SubspaceNet.load(tmp_path / "s.bin").predict(X), model.predict(X))


def test_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOTACKPT" + bytes(16))
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_arrays(tmp_path / "x.bin")


def test_truncated_payload(tmp_path):
    save_matrix(tmp_path / "c.bin", np.ones((3, 3)))
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_matrix(tmp_path / "c.bin")


def test_unsupported_version(tmp_path):
    save_arrays(tmp_path / "v.bin", {"a": np.zeros(2)})
    raw = bytearray((tmp_path / "v.bin").read_bytes())
    raw[8] = 99
    (tmp_path / "v.bin").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version 99"):
        load_arrays(tmp_path / "v.bin")


def test_matrix_round_trip(rng, tmp_path):
    C = rng.standard_normal((4, 4))
    save_matrix(tmp_path / "c.bin", C)
    assert np.array_equal(load_matrix(tmp_path / "c.bin"), C)


def test_input_shape_checked(rng):
    model = SubspaceNet((1, 4, 4), 2, [{"filters": 1, "kernel": 3, "stride": 1}])
    with pytest.raises(ValueError, match="model expects"):
        model.encode(np.zeros((2, 1, 5, 5)))
    # flattened rows of the right length are accepted
    assert model.encode(np.zeros((2, 16))).shape == (2, 16)
