"""Portable checkpoint container.

A checkpoint is a zip archive holding ``manifest.json`` plus one ``.npy``
member per named tensor, always stored as little-endian float64.  Member
timestamps are fixed so identical content gives identical bytes.
"""
import io
import json
import os
import zipfile

import numpy as np

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _member(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def write_archive(path, manifest, arrays, float_dtype="<f8"):
    """Write ``manifest`` (JSON-able dict) and ``arrays`` into a zip at ``path``.

    The archive is built next to ``path`` and moved into place, so readers
    never see a partial file.
    """
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        _write_zip(tmp, manifest, arrays, float_dtype)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _write_zip(path, manifest, arrays, float_dtype):
    entries = []
    with zipfile.ZipFile(path, "w") as zf:
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype.kind == "f":
                arr = arr.astype(float_dtype)
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(_member(f"tensors/{name}.npy"), buf.getvalue())
            entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str})
        full = dict(manifest, format_version=FORMAT_VERSION, tensors=entries)
        zf.writestr(_member("manifest.json"), json.dumps(full, sort_keys=True, indent=1))


def read_archive(path):
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with zf:
        manifest = json.loads(zf.read("manifest.json"))
        arrays = {}
        for entry in manifest["tensors"]:
            arr = np.lib.format.read_array(io.BytesIO(zf.read(f"tensors/{entry['name']}.npy")), allow_pickle=False)
            if list(arr.shape) != entry["shape"]:
                raise CheckpointError(f"tensor {entry['name']} has shape {arr.shape}, manifest says {entry['shape']}")
            arrays[entry["name"]] = arr
    return manifest, arrays


def validate_parameters(arrays, expected_shapes):
    """Check that every expected parameter is present with the expected shape."""
    missing = [k for k in expected_shapes if k not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {', '.join(missing)}")
    for name, shape in expected_shapes.items():
        if tuple(arrays[name].shape) != tuple(shape):
            raise CheckpointError(f"parameter {name} has shape {tuple(arrays[name].shape)}, expected {tuple(shape)}")
