import numpy as np
import pytest

import koopflow as kf
from koopflow.dataio import read_blob, write_blob
from koopflow.errors import CheckpointError, ConfigError


@pytest.fixture
def ds():
    dom = kf.make_domain("nsd", 16, 16)
    return kf.normalize(kf.generate_dataset(dom, 0.0, 1.0, 0.1, 1.0))


def test_round_trip_bitwise(tmp_path, ds):
    d1 = tmp_path / "a"
    kf.save_dataset(ds, str(d1))
    loaded = kf.load_dataset(str(d1))
    d2 = tmp_path / "b"
    kf.save_dataset(loaded, str(d2))
    assert (d1 / "data.f32").read_bytes() == (d2 / "data.f32").read_bytes()


def test_round_trip_metadata(tmp_path, ds):
    out = tmp_path / "ds"
    kf.save_dataset(ds, str(out))
    loaded = kf.load_dataset(str(out))
    assert loaded.domain.example is ds.domain.example
    assert loaded.domain.shape == ds.domain.shape
    assert np.allclose(loaded.times, ds.times)
    assert loaded.train_horizon == ds.train_horizon
    assert np.allclose(loaded.norm_scale, ds.norm_scale)
    assert np.array_equal(loaded.zero_channels, ds.zero_channels)
    # float32 quantization is the only loss
    assert np.max(np.abs(loaded.data - ds.data)) < 1e-6


def test_refuses_nonempty_dir(tmp_path, ds):
    out = tmp_path / "ds"
    kf.save_dataset(ds, str(out))
    with pytest.raises(ConfigError):
        kf.save_dataset(ds, str(out))
    kf.save_dataset(ds, str(out), force=True)


def test_truncated_blob_detected(tmp_path, ds):
    out = tmp_path / "ds"
    kf.save_dataset(ds, str(out))
    blob = out / "data.f32"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        kf.load_dataset(str(out))


def test_missing_manifest(tmp_path):
    with pytest.raises(ConfigError, match="manifest"):
        kf.load_dataset(str(tmp_path / "nope"))


def test_endianness_and_layout(tmp_path, ds):
    out = tmp_path / "ds"
    kf.save_dataset(ds, str(out))
    raw = np.frombuffer((out / "data.f32").read_bytes(), dtype="<f4")
    T, H, W = len(ds), *ds.domain.shape
    arr = raw.reshape(T, 5, H, W)
    assert np.allclose(arr[:, :4], ds.data.astype("<f4"))
    assert np.array_equal(arr[0, 4], ds.domain.mask.astype("<f4"))


def test_blob_helpers_round_trip(tmp_path):
    arrays = {
        "alpha": np.arange(12, dtype="<f8").reshape(3, 4),
        "beta": np.float32([1.5, -2.25]),
        "gamma": np.array(7, dtype="<i8"),
    }
    path = tmp_path / "blob.bin"
    index = write_blob(str(path), arrays)
    out = read_blob(str(path), index)
    for k, v in arrays.items():
        assert np.array_equal(out[k], v)
        assert out[k].dtype == v.dtype


def test_blob_trailing_bytes_detected(tmp_path):
    path = tmp_path / "blob.bin"
    index = write_blob(str(path), {"a": np.zeros(4)})
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(CheckpointError, match="trailing"):
        read_blob(str(path), index)
