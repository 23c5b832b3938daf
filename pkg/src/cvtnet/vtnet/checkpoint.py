"""Model checkpoints: a versioned ``.npz`` container.

Holds the config as JSON, the flat parameter vector, the input
standardization, and free-form provenance (seeds, versions).
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from cvtnet.errors import PathError, SchemaError
from cvtnet.vtnet.net import VTNet, VTNetConfig

FORMAT_VERSION = 1


def save_checkpoint(path, net: VTNet, provenance: dict | None = None) -> None:
    arrays = {
        "format_version": np.array(FORMAT_VERSION),
        "config": np.array(net.config.to_json()),
        "params": net.get_flat(),
        "input_mean": net.input_mean,
        "input_scale": net.input_scale,
        "provenance": np.array(json.dumps(provenance or {}, sort_keys=True)),
    }
    # np.savez stamps entries with the wall clock; a fixed date keeps bytes reproducible
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for key, arr in arrays.items():
            info = zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            entry = io.BytesIO()
            np.lib.format.write_array(entry, np.asarray(arr), allow_pickle=False)
            zf.writestr(info, entry.getvalue())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[VTNet, dict]:
    p = Path(path)
    if not p.is_file():
        raise PathError(f"no such file: {p}")
    with np.load(p, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise SchemaError(f"unsupported checkpoint version {version}")
        net = VTNet(VTNetConfig.from_dict(json.loads(str(data["config"]))))
        net.set_flat(data["params"])
        net.input_mean = data["input_mean"].copy()
        net.input_scale = data["input_scale"].copy()
        provenance = json.loads(str(data["provenance"]))
    return net, provenance
