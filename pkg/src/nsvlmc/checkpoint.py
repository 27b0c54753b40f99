"""Versioned checkpoints: named float64 parameter arrays plus the resolved config.

The container is an ``.npz`` archive (readable with ``numpy.load``) holding one
``.npy`` member per parameter and a ``__meta__.json`` member. Members are
written with a fixed timestamp so equal states give byte-identical files.
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .data import Normalization
from .errors import MissingFile, SchemaMismatch
from .models import LmcState, ModelSpec, ParamLayout

FORMAT_VERSION = 1
META_MEMBER = "__meta__.json"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, payload)


def save_checkpoint(state: LmcState, path, config: dict | None = None) -> None:
    spec = state.spec.to_dict()
    meta = {
        "version": FORMAT_VERSION,
        "spec": spec,
        "params": [[k, list(s)] for k, s in state.layout.shapes.items()],
        "n_tasks": state.n_tasks,
        "input_dim": state.input_dim,
        "n_inducing": state.n_inducing,
        "task_sizes": list(state.task_sizes),
        "norm": state.norm.to_dict() if state.norm is not None else None,
        "seed": state.seed,
        "meta": state.meta,
        "config": config or {},
    }
    p = state.unpack()
    with zipfile.ZipFile(path, "w") as zf:
        _member(zf, META_MEMBER, json.dumps(meta, indent=1, sort_keys=True).encode())
        for name in state.layout.shapes:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(p[name].detach().numpy(), "<f8", order="C"),
                                      allow_pickle=False)
            _member(zf, name + ".npy", buf.getvalue())


def load_checkpoint(path) -> tuple[LmcState, dict]:
    """Restore a state and the config stored with it."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as err:
        raise SchemaMismatch(f"{path}: not a checkpoint ({err})") from err
    with zf:
        names = set(zf.namelist())
        if META_MEMBER not in names:
            raise SchemaMismatch(f"{path}: missing {META_MEMBER}")
        meta = json.loads(zf.read(META_MEMBER))
        if meta.get("version", 0) > FORMAT_VERSION:
            raise SchemaMismatch(f"{path}: checkpoint version {meta['version']} is newer than "
                                 f"supported version {FORMAT_VERSION}")
        layout = ParamLayout()
        values = {}
        for name, shape in meta["params"]:
            if name + ".npy" not in names:
                raise SchemaMismatch(f"{path}: parameter {name!r} missing")
            arr = np.lib.format.read_array(io.BytesIO(zf.read(name + ".npy")), allow_pickle=False)
            if list(arr.shape) != list(shape):
                raise SchemaMismatch(f"{path}: {name} has shape {arr.shape}, expected {shape}")
            layout.add(name, shape)
            values[name] = arr
    spec = dict(meta["spec"])
    spec["dkl_layers"] = tuple(spec["dkl_layers"]) if spec.get("dkl_layers") else None
    norm = Normalization.from_dict(meta["norm"]) if meta.get("norm") else None
    state = LmcState(ModelSpec(**spec), layout, layout.pack(values), meta["n_tasks"],
                     meta["input_dim"], meta["n_inducing"], meta["task_sizes"], norm,
                     meta["seed"], meta.get("meta", {}))
    return state, meta.get("config", {})


def params_equal(a: LmcState, b: LmcState) -> bool:
    return list(a.layout.shapes.items()) == list(b.layout.shapes.items()) and bool(
        torch.equal(a.params, b.params))
