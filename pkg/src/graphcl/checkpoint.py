"""Versioned checkpoint file.

Layout::

    GRAPHCL-CKPT <version>\\n
    <manifest byte length>\\n
    <manifest: UTF-8 JSON text>
    <blob: float32 little-endian values>

The manifest lists every array as ``{"name", "shape", "offset"}`` (offsets in
bytes into the blob) plus the step counter, optimizer step counts, the flat
config text, and the vocabulary.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"GRAPHCL-CKPT"
VERSION = 1
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: dict[str, int] = field(default_factory=dict)
    step: int = 0
    config: str = ""
    vocab: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    entries, chunks = [], []
    offset = 0
    for group, arrays in (("param", ckpt.params), ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v)):
        for name, arr in arrays.items():
            raw = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
            entries.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    manifest = {
        "step": ckpt.step,
        "adam_t": ckpt.adam_t,
        "config": ckpt.config,
        "vocab": ckpt.vocab,
        "extra": ckpt.extra,
        "blob_bytes": offset,
        "entries": entries,
    }
    text = json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + b" " + str(VERSION).encode() + b"\n")
        fh.write(str(len(text)).encode() + b"\n")
        fh.write(text)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    first, _, rest = data.partition(b"\n")
    magic, _, version = first.partition(b" ")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != str(VERSION).encode():
        raise CheckpointError(f"{path}: unsupported checkpoint version {version.decode(errors='replace')!r}, "
                              f"expected {VERSION}")
    size_line, _, rest = rest.partition(b"\n")
    try:
        size = int(size_line)
        manifest = json.loads(rest[:size].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as err:
        raise CheckpointError(f"{path}: corrupt manifest ({err})") from None
    blob = rest[size:]
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(f"{path}: blob has {len(blob)} bytes, manifest expects {manifest['blob_bytes']}")
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for e in manifest["entries"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype=_LE_F32, count=n, offset=e["offset"]).reshape(e["shape"])
        target = groups[e["group"]]
        if e["name"] in target:
            raise CheckpointError(f"{path}: duplicate entry {e['group']}/{e['name']}")
        target[e["name"]] = arr.astype(np.float32)
    return Checkpoint(groups["param"], groups["adam_m"], groups["adam_v"],
                      {k: int(v) for k, v in manifest["adam_t"].items()}, int(manifest["step"]),
                      manifest["config"], list(manifest["vocab"]), manifest.get("extra", {}))
