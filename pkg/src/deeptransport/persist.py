"""Checkpoint archive: named parameters + optimizer state + manifest.

Layout is a ZIP file (stored, not compressed) containing:

    manifest.json        ordered tensor names/shapes, Adam scalars, meta
    param/<name>         raw little-endian float64 payload
    adam_m/<name>        first-moment accumulator (when state is saved)
    adam_v/<name>        second-moment accumulator

Entry timestamps are pinned so identical contents produce identical
bytes, which the reproducibility guarantees rely on.
"""

import json
import zipfile

import numpy as np

from .autodiff import AdamState, ParamSet
from .errors import DataError

_EPOCH = (1980, 1, 1, 0, 0, 0)
FORMAT_VERSION = 1


def _write(zf, name, payload: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, payload)


def save_checkpoint(path, params: ParamSet, adam: AdamState | None = None, meta: dict | None = None):
    """Write parameters (and optionally Adam state) to ``path``."""
    manifest = {
        "format": FORMAT_VERSION,
        "tensors": [{"name": n, "shape": list(t.data.shape)} for n, t in params.items()],
        "adam": None,
        "meta": meta or {},
    }
    if adam is not None:
        manifest["adam"] = {
            "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
            "eps": adam.eps, "step": adam.step,
        }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        _write(zf, "manifest.json", json.dumps(manifest, sort_keys=True).encode())
        for name, t in params.items():
            _write(zf, f"param/{name}", np.ascontiguousarray(t.data, dtype="<f8").tobytes())
            if adam is not None:
                _write(zf, f"adam_m/{name}", np.ascontiguousarray(adam.m[name], dtype="<f8").tobytes())
                _write(zf, f"adam_v/{name}", np.ascontiguousarray(adam.v[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (params, adam_state_or_None, meta)."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError:
            raise DataError(f"checkpoint {path} has no manifest") from None
        if manifest.get("format") != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint format {manifest.get('format')!r}")

        def read_array(entry, shape):
            raw = np.frombuffer(zf.read(entry), dtype="<f8")
            expected = int(np.prod(shape)) if shape else 1
            if raw.size != (int(np.prod(shape)) if shape else raw.size):
                raise DataError(f"payload size mismatch for {entry} (want {expected})")
            return raw.reshape(shape).astype(np.float64)

        params = ParamSet()
        adam_info = manifest.get("adam")
        adam = None
        if adam_info is not None:
            adam = AdamState(
                lr=adam_info["lr"], beta1=adam_info["beta1"],
                beta2=adam_info["beta2"], eps=adam_info["eps"],
                step=adam_info["step"],
            )
        for entry in manifest["tensors"]:
            name, shape = entry["name"], tuple(entry["shape"])
            params.add(name, read_array(f"param/{name}", shape))
            if adam is not None:
                adam.m[name] = read_array(f"adam_m/{name}", shape)
                adam.v[name] = read_array(f"adam_v/{name}", shape)
        return params, adam, manifest.get("meta", {})
