"""Checkpoint files: one ``.npz`` archive holding arrays plus a JSON header.

Parameters live under ``param/<name>``, BN running statistics under
``buffer/<name>`` and optimizer slots under ``opt/<optimizer>/<slot>``.
The header carries the format tag, config echo, epoch/step counters,
RNG state and alpha/beta snapshots.
"""
from __future__ import annotations

import dataclasses
import io
import json
import os
from pathlib import Path

import numpy as np

FORMAT_TAG = "hinas-ckpt-v1"


@dataclasses.dataclass
class Checkpoint:
    state: dict[str, np.ndarray]        # as produced by Module.state_dict()
    optim: dict[str, dict[str, np.ndarray]]
    meta: dict


def save_checkpoint(path, net, meta: dict, optimizers: dict | None = None) -> Path:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    arrays = {}
    for name, arr in net.state_dict().items():
        if name.startswith("buffer:"):
            arrays[f"buffer/{name[len('buffer:'):]}"] = arr
        else:
            arrays[f"param/{name}"] = arr
    for oname, opt in (optimizers or {}).items():
        for key, arr in opt.state_arrays().items():
            arrays[f"opt/{oname}/{key}"] = arr
    header = dict(meta, format=FORMAT_TAG)
    arrays["__meta__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise ValueError(f"{path} is not a checkpoint (no header)")
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("format") != FORMAT_TAG:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        state, optim = {}, {}
        for key in z.files:
            if key.startswith("param/"):
                state[key[len("param/"):]] = z[key]
            elif key.startswith("buffer/"):
                state["buffer:" + key[len("buffer/"):]] = z[key]
            elif key.startswith("opt/"):
                _, oname, slot = key.split("/", 2)
                optim.setdefault(oname, {})[slot] = z[key]
    return Checkpoint(state, optim, meta)


def restore(ckpt: Checkpoint, net, optimizers: dict | None = None) -> None:
    net.load_state_dict(ckpt.state)
    for oname, opt in (optimizers or {}).items():
        if oname in ckpt.optim:
            opt.load_state_arrays(ckpt.optim[oname])


def parameter_scalars(path) -> int:
    """Total scalar count over the stored parameter buffers."""
    with np.load(path, allow_pickle=False) as z:
        return int(sum(z[k].size for k in z.files if k.startswith("param/")))
