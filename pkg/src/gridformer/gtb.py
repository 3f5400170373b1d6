"""GTB container: one binary format for datasets and checkpoints.

Layout, all little-endian:

    magic "GTB1" (4 bytes)
    header length, u32
    UTF-8 JSON manifest (header length bytes)
    payload: row-major float32 tensors, back to back

Dataset payload is the snapshots in time order, each V x H x W with the
variables in manifest order.  A checkpoint manifest carries
``"kind": "checkpoint"`` plus named parameter entries, and its payload is the
parameter tensors in manifest order.  Writers are deterministic (sorted JSON
keys), so identical content yields identical bytes; readers validate the
declared sizes and report the byte offset of any corruption.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Any

import numpy as np

from .grid import Dataset, GridSpec

MAGIC = b"GTB1"


class GTBError(IOError):
    pass


def _manifest_bytes(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write(path, manifest: dict, arrays: list[np.ndarray]) -> None:
    header = _manifest_bytes(manifest)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read(path) -> tuple[dict, bytes, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise GTBError(f"{path}: bad magic {blob[:4]!r} at byte 0 (expected {MAGIC!r})")
    if len(blob) < 8:
        raise GTBError(f"{path}: truncated header length field at byte 4")
    (hlen,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + hlen:
        raise GTBError(f"{path}: manifest truncated at byte {len(blob)} (need {8 + hlen})")
    try:
        manifest = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GTBError(f"{path}: manifest is not valid UTF-8 JSON at byte 8: {exc}") from exc
    return manifest, blob[8 + hlen:], 8 + hlen


# -- datasets -------------------------------------------------------------------

def write_dataset(path, ds: Dataset) -> None:
    if not ds.variables:
        raise GTBError("refusing to write a dataset with an empty variable list")
    manifest: dict[str, Any] = {
        "kind": "dataset",
        "dtype": "f32",
        "grid": {"lats": ds.grid.lats.tolist(), "lons": ds.grid.lons.tolist()},
        "variables": list(ds.variables),
        "time": {"values": ds.times.tolist()},
    }
    if ds.norm_stats is not None:
        manifest["norm_stats"] = {k: [float(m), float(s)] for k, (m, s) in ds.norm_stats.items()}
    if ds.generator is not None:
        manifest["generator"] = ds.generator
    _write(path, manifest, [ds.values])


def read_dataset(path) -> Dataset:
    manifest, payload, base = _read(path)
    if manifest.get("kind") != "dataset":
        raise GTBError(f"{path}: manifest kind is {manifest.get('kind')!r}, expected 'dataset'")
    if manifest.get("dtype") != "f32":
        raise GTBError(f"{path}: unsupported dtype {manifest.get('dtype')!r}")
    grid = GridSpec(lats=np.array(manifest["grid"]["lats"]),
                    lons=np.array(manifest["grid"]["lons"]))
    variables = tuple(manifest["variables"])
    if not variables:
        raise GTBError(f"{path}: manifest declares no variables")
    times = np.asarray(manifest["time"]["values"], dtype=np.int64)
    n, v = times.size, len(variables)
    h, w = grid.shape
    expected = n * v * h * w * 4
    if len(payload) != expected:
        raise GTBError(f"{path}: payload is {len(payload)} bytes at offset {base}, "
                       f"manifest declares {expected} ({n} x {v} x {h} x {w} float32)")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, v, h, w).copy()
    stats = None
    if "norm_stats" in manifest:
        stats = {k: (float(m), float(s)) for k, (m, s) in manifest["norm_stats"].items()}
    return Dataset(grid=grid, variables=variables, times=times, values=values,
                   norm_stats=stats, generator=manifest.get("generator"))


# -- checkpoints ------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Named parameters plus everything needed to rebuild and reuse the model."""

    params: dict[str, np.ndarray]           # name -> float32 array, iterated sorted
    config: dict                             # model architecture hyperparameters
    vocabulary: tuple[str, ...]
    meta: dict                               # norm stats, grid, training provenance

    def param_names(self) -> list[str]:
        return sorted(self.params)


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    names = ckpt.param_names()
    manifest: dict[str, Any] = {
        "kind": "checkpoint",
        "dtype": "f32",
        "model_config": ckpt.config,
        "vocabulary": list(ckpt.vocabulary),
        "params": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in names],
        "meta": ckpt.meta,
    }
    _write(path, manifest, [ckpt.params[n] for n in names])


def read_checkpoint(path) -> Checkpoint:
    manifest, payload, base = _read(path)
    if manifest.get("kind") != "checkpoint":
        raise GTBError(f"{path}: manifest kind is {manifest.get('kind')!r}, expected 'checkpoint'")
    entries = manifest["params"]
    total = sum(int(np.prod(e["shape"])) for e in entries) * 4
    if len(payload) != total:
        raise GTBError(f"{path}: payload is {len(payload)} bytes at offset {base}, "
                       f"manifest declares {total}")
    params: dict[str, np.ndarray] = {}
    offset = 0
    flat = np.frombuffer(payload, dtype="<f4")
    for e in entries:
        shape = tuple(int(d) for d in e["shape"])
        size = int(np.prod(shape))
        params[e["name"]] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    return Checkpoint(params=params, config=manifest["model_config"],
                      vocabulary=tuple(manifest["vocabulary"]),
                      meta=manifest.get("meta", {}))
