"""Parameter checkpoints: a zip of .npy arrays plus a JSON manifest of shapes.

Written with fixed zip timestamps so identical weights always produce
byte-identical files (np.savez stamps the current time, which would break
run reproducibility).
"""

from __future__ import annotations

import io
import json
import os
import zipfile

import numpy as np
import torch

from .errors import DataError

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _writestr(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o600 << 16
    zf.writestr(info, payload)


def save_checkpoint(path: "str | os.PathLike", state_dict) -> None:
    """Serialize a model state dict (tensors or arrays) as a named-tensor archive."""
    arrays = {}
    for name, value in state_dict.items():
        arrays[name] = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) \
            else np.asarray(value)
    manifest = {
        name: {"shape": list(a.shape), "dtype": str(a.dtype)}
        for name, a in arrays.items()
    }
    with zipfile.ZipFile(path, "w") as zf:
        _writestr(zf, "manifest.json",
                  json.dumps(manifest, sort_keys=True, indent=2).encode())
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arrays[name], allow_pickle=False)
            _writestr(zf, f"tensors/{name}.npy", buf.getvalue())


def load_checkpoint(path: "str | os.PathLike") -> dict[str, np.ndarray]:
    if not os.path.isfile(path):
        raise DataError(f"checkpoint not found: {path}")
    out = {}
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        for name, meta in manifest.items():
            arr = np.lib.format.read_array(io.BytesIO(zf.read(f"tensors/{name}.npy")),
                                           allow_pickle=False)
            if list(arr.shape) != meta["shape"]:
                raise DataError(f"checkpoint tensor {name!r} has shape {list(arr.shape)}, "
                                f"manifest says {meta['shape']}")
            out[name] = arr
    return out


def apply_checkpoint(model: torch.nn.Module, path: "str | os.PathLike") -> None:
    arrays = load_checkpoint(path)
    state = {k: torch.from_numpy(np.array(v)) for k, v in arrays.items()}
    model.load_state_dict(state)
