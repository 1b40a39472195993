"""Dataset directory format: manifest.json + raw little-endian data blob.

A dataset directory holds

    manifest.json   geometry, times, normalization stats, channel order
    data.f32        float32 little-endian, row-major, [T, C, H, W]

with C = 5 channels (u1, u2, p, phi, mask). The mask channel is replicated
across time so the blob is self-contained. Also provides the raw-blob
helpers shared with the checkpoint format.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import CheckpointError, ConfigError
from .fields import CHANNELS, Example, TrajectoryDataset, make_domain

FORMAT_VERSION = 1
FILE_CHANNELS = CHANNELS + ("mask",)


def _atomic_write(path: str, payload: bytes):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_blob(path: str, arrays: dict[str, np.ndarray]) -> list[dict]:
    """Concatenate arrays into one raw little-endian blob; return the index."""
    index, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        shape = list(arr.shape)
        le = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        index.append({
            "name": name,
            "shape": shape,
            "dtype": le.dtype.str,
            "offset": offset,
        })
        chunks.append(raw)
        offset += len(raw)
    _atomic_write(path, b"".join(chunks))
    return index


def read_blob(path: str, index: list[dict]) -> dict[str, np.ndarray]:
    """Inverse of write_blob; validates offsets and total size."""
    with open(path, "rb") as fh:
        raw = fh.read()
    out = {}
    end = 0
    for entry in index:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        start = entry["offset"]
        end = start + count * dt.itemsize
        if end > len(raw):
            raise CheckpointError(
                f"blob {path} truncated: need {end} bytes, have {len(raw)}")
        out[entry["name"]] = np.frombuffer(
            raw, dtype=dt, count=count, offset=start).reshape(entry["shape"]).copy()
    if end != len(raw):
        raise CheckpointError(f"blob {path} has {len(raw) - end} trailing bytes")
    return out


def _prepare_dir(outdir: str, force: bool):
    if os.path.isdir(outdir) and os.listdir(outdir) and not force:
        raise ConfigError(f"output directory {outdir} is not empty (use force)")
    os.makedirs(outdir, exist_ok=True)


def save_dataset(ds: TrajectoryDataset, outdir: str, force: bool = False):
    """Write manifest.json + data.f32 into outdir."""
    _prepare_dir(outdir, force)
    T = len(ds)
    mask = np.broadcast_to(ds.domain.mask, (T, 1) + ds.domain.shape)
    stacked = np.concatenate([ds.data, mask], axis=1).astype("<f4")
    manifest = {
        "format_version": FORMAT_VERSION,
        "example_id": ds.domain.example.value,
        "grid": [ds.domain.grid_h, ds.domain.grid_w],
        "dt": ds.dt,
        "times": [float(t) for t in ds.times],
        "train_horizon": ds.train_horizon,
        "channels": list(FILE_CHANNELS),
        "norm_scale": None if ds.norm_scale is None else [float(s) for s in ds.norm_scale],
        "zero_channels": None if ds.zero_channels is None else [bool(z) for z in ds.zero_channels],
        "forcing_freq": ds.forcing_freq,
        "ramp_T": ds.ramp_T,
        "endianness": "little",
        "dtype": "float32",
    }
    _atomic_write(os.path.join(outdir, "data.f32"), stacked.tobytes())
    _atomic_write(os.path.join(outdir, "manifest.json"),
                  json.dumps(manifest, indent=2).encode())


def load_dataset(path: str) -> TrajectoryDataset:
    """Read a dataset directory back; values are the stored float32 ones."""
    mpath = os.path.join(path, "manifest.json")
    if not os.path.isfile(mpath):
        raise ConfigError(f"no dataset manifest at {mpath}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported dataset format_version {manifest.get('format_version')}")
    if manifest.get("channels") != list(FILE_CHANNELS):
        raise CheckpointError(f"unexpected channel order {manifest.get('channels')}")
    H, W = manifest["grid"]
    times = np.asarray(manifest["times"], dtype=float)
    T = len(times)
    with open(os.path.join(path, "data.f32"), "rb") as fh:
        raw = fh.read()
    expect = T * len(FILE_CHANNELS) * H * W * 4
    if len(raw) != expect:
        raise CheckpointError(
            f"data.f32 holds {len(raw)} bytes, expected {expect}")
    stacked = np.frombuffer(raw, dtype="<f4").reshape(T, len(FILE_CHANNELS), H, W)
    domain = make_domain(Example(manifest["example_id"]), H, W)
    if not np.array_equal(stacked[0, 4] > 0.5, domain.mask > 0.5):
        raise CheckpointError("stored mask channel disagrees with the geometry")
    norm_scale = manifest["norm_scale"]
    zero = manifest["zero_channels"]
    return TrajectoryDataset(
        domain=domain,
        times=times,
        data=stacked[:, :4].astype(float),
        dt=float(manifest["dt"]),
        train_horizon=float(manifest["train_horizon"]),
        norm_scale=None if norm_scale is None else np.asarray(norm_scale, dtype=float),
        zero_channels=None if zero is None else np.asarray(zero, dtype=bool),
        forcing_freq=manifest.get("forcing_freq"),
        ramp_T=manifest.get("ramp_T"),
    )
