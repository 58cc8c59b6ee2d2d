"""Weight checkpoints.

Layout: magic ``RMF1``, u32 little-endian manifest length, UTF-8 JSON
manifest, then the raw little-endian tensor buffers back to back in
manifest order. The manifest carries the model configuration and one entry
(name, shape, dtype) per buffer; learnable tensors use their dotted
parameter names, batch-norm running statistics append ``.running_mean`` /
``.running_var`` to their layer names.

The manifest JSON is serialized with sorted keys and no whitespace so two
identical training runs write byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct

import numpy as np

from .errors import CheckpointNotFoundError, DataError
from .model import ModelConfig, ModelParams, init_params
from .tensor import Tensor

MAGIC = b"RMF1"

_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


def _manifest_entries(params: ModelParams) -> list:
    entries = []
    for name in sorted(params.tensors):
        t = params.tensors[name]
        entries.append({"name": name, "shape": list(t.shape),
                        "dtype": str(t.dtype)})
    for name in sorted(params.bn):
        st = params.bn[name]
        for suffix, buf in (("running_mean", st.running_mean),
                            ("running_var", st.running_var)):
            entries.append({"name": f"{name}.{suffix}",
                            "shape": list(buf.shape), "dtype": str(buf.dtype)})
    return entries


def save_checkpoint(path, params: ModelParams, config: ModelConfig,
                    extra: dict | None = None) -> None:
    entries = _manifest_entries(params)
    manifest = {
        "format": "RMF1",
        "config": dataclasses.asdict(config),
        "tensors": entries,
    }
    if extra:
        manifest["extra"] = extra
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for e in entries:
            f.write(_lookup_buffer(params, e["name"]).astype(
                _DTYPES[e["dtype"]], copy=False).tobytes())


def _lookup_buffer(params: ModelParams, name: str) -> np.ndarray:
    if name.endswith(".running_mean"):
        return params.bn[name[:-len(".running_mean")]].running_mean
    if name.endswith(".running_var"):
        return params.bn[name[:-len(".running_var")]].running_var
    return params.tensors[name].data


def load_checkpoint(path):
    """Read a checkpoint back as (params, config, extra).

    The model is rebuilt from the embedded config first, then every buffer
    is overwritten from the file; a missing or mismatched entry is a data
    error, so a loaded model is always structurally complete.
    """
    if not os.path.exists(path):
        raise CheckpointNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        raw_len = f.read(4)
        if len(raw_len) != 4:
            raise DataError(f"{path}: truncated manifest length")
        (mlen,) = struct.unpack("<I", raw_len)
        try:
            manifest = json.loads(f.read(mlen).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"{path}: unreadable manifest ({e})")
        payload = f.read()

    try:
        config = ModelConfig(**manifest["config"]).validate()
        entries = manifest["tensors"]
    except (KeyError, TypeError) as e:
        raise DataError(f"{path}: malformed manifest ({e})")

    dtype = np.float32
    for e in entries:
        if e["dtype"] == "float64":
            dtype = np.float64
            break
    params = init_params(config, seed=0, dtype=dtype)

    expected = {e["name"] for e in entries}
    want = set(params.tensors)
    for bn_name in params.bn:
        want.add(f"{bn_name}.running_mean")
        want.add(f"{bn_name}.running_var")
    if expected != want:
        missing = sorted(want - expected)[:5]
        surplus = sorted(expected - want)[:5]
        raise DataError(
            f"{path}: parameter set mismatch (missing {missing}, surplus {surplus})")

    off = 0
    for e in entries:
        if e["dtype"] not in _DTYPES:
            raise DataError(f"{path}: unknown dtype {e['dtype']!r}")
        dt = _DTYPES[e["dtype"]]
        shape = tuple(int(s) for s in e["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * dt.itemsize
        chunk = payload[off:off + nbytes]
        if len(chunk) != nbytes:
            raise DataError(f"{path}: truncated buffer for {e['name']}")
        off += nbytes
        arr = np.frombuffer(chunk, dtype=dt).reshape(shape)
        name = e["name"]
        if name.endswith(".running_mean"):
            params.bn[name[:-len(".running_mean")]].running_mean = arr.copy()
        elif name.endswith(".running_var"):
            params.bn[name[:-len(".running_var")]].running_var = arr.copy()
        else:
            t = params.tensors[name]
            if t.shape != shape:
                raise DataError(
                    f"{path}: {name} has shape {shape}, model wants {t.shape}")
            params.tensors[name] = Tensor(arr.copy(), requires_grad=True)
    if off != len(payload):
        raise DataError(f"{path}: {len(payload) - off} trailing bytes")
    return params, config, manifest.get("extra")
