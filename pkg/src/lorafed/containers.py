"""Self-describing binary container for matrices and vectors.

Layout (version 1):

* 4 magic bytes ``LFC1``
* u32 little-endian header length
* UTF-8 JSON header: ``{"format_version": 1, "kind": ..., "meta": {...},
  "tensors": [{"name", "type": "matrix"|"vector", "rows", "cols",
  "offset"}, ...]}`` with offsets counted in f64 slots
* payload: the tensors' little-endian f64 data, concatenated

Floats in the meta dict survive exactly (JSON uses repr round-tripping);
tensor payloads are raw bits, so write -> read -> write is byte-stable.
Checkpoints, exported benchmarks and adapter snapshots all share this
one format, distinguished by ``kind``.
"""

from __future__ import annotations

import json
import struct
import sys
from array import array
from dataclasses import dataclass
from pathlib import Path

from lorafed.linalg import Matrix, Vector, le_bytes
from lorafed.lora import (
    DecomposedAdapter,
    DecomposedHead,
    DecomposedMatrix,
    LoraAdapter,
    LoraHead,
)

MAGIC = b"LFC1"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    """Corrupt or unsupported container file."""


@dataclass
class Container:
    kind: str
    meta: dict
    tensors: dict[str, Matrix | Vector]


def write_container(
    path, kind: str, meta: dict, tensors: list[tuple[str, Matrix | Vector]]
) -> None:
    entries = []
    offset = 0
    payload = bytearray()
    for name, t in tensors:
        if isinstance(t, Matrix):
            entries.append(
                {"name": name, "type": "matrix", "rows": t.rows, "cols": t.cols, "offset": offset}
            )
            count = t.rows * t.cols
        else:
            entries.append(
                {"name": name, "type": "vector", "rows": len(t), "cols": 1, "offset": offset}
            )
            count = len(t)
        payload.extend(le_bytes(t.data))
        offset += count
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def read_container(path) -> Container:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ContainerError(f"{path}: not a container file (bad magic)")
    (header_len,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ContainerError(
            f"{path}: unsupported format version {header.get('format_version')}"
        )
    payload = blob[8 + header_len :]
    tensors: dict[str, Matrix | Vector] = {}
    for e in header["tensors"]:
        start = e["offset"] * 8
        count = e["rows"] * e["cols"]
        raw = payload[start : start + count * 8]
        if len(raw) != count * 8:
            raise ContainerError(f"{path}: truncated payload for tensor {e['name']!r}")
        data = array("d")
        data.frombytes(raw)
        if sys.byteorder == "big":
            data.byteswap()
        if e["type"] == "matrix":
            tensors[e["name"]] = Matrix._wrap(e["rows"], e["cols"], data)
        else:
            tensors[e["name"]] = Vector._wrap(data)
    return Container(kind=header["kind"], meta=header["meta"], tensors=tensors)


# ---------------------------------------------------------------------------
# Adapter snapshots (raw or decomposed), used by checkpoints


def adapters_to_tensors(
    adapters: list[LoraAdapter],
) -> tuple[dict, list[tuple[str, Matrix | Vector]]]:
    meta = {
        "storage": "raw",
        "layers": len(adapters),
        "heads": adapters[0].num_heads,
        "rank": adapters[0].rank,
        "alpha": adapters[0].alpha,
    }
    tensors: list[tuple[str, Matrix | Vector]] = []
    for li, ad in enumerate(adapters):
        for hi, h in enumerate(ad.heads):
            tensors.append((f"layer{li}.head{hi}.b", h.b))
            tensors.append((f"layer{li}.head{hi}.a", h.a))
    return meta, tensors


def tensors_to_adapters(meta: dict, tensors: dict) -> list[LoraAdapter]:
    out = []
    for li in range(meta["layers"]):
        heads = []
        for hi in range(meta["heads"]):
            heads.append(
                LoraHead(
                    b=tensors[f"layer{li}.head{hi}.b"],
                    a=tensors[f"layer{li}.head{hi}.a"],
                )
            )
        out.append(LoraAdapter(heads, meta["rank"], meta["alpha"]))
    return out


def components_to_tensors(
    components: list[DecomposedAdapter],
) -> tuple[dict, list[tuple[str, Matrix | Vector]]]:
    meta = {
        "storage": "decomposed",
        "layers": len(components),
        "heads": components[0].num_heads,
        "rank": components[0].rank,
        "alpha": components[0].alpha,
    }
    tensors: list[tuple[str, Matrix | Vector]] = []
    for li, comp in enumerate(components):
        for hi, h in enumerate(comp.heads):
            tensors.append((f"layer{li}.head{hi}.b_dir", h.b.direction))
            tensors.append((f"layer{li}.head{hi}.b_mag", h.b.magnitude))
            tensors.append((f"layer{li}.head{hi}.a_dir", h.a.direction))
            tensors.append((f"layer{li}.head{hi}.a_mag", h.a.magnitude))
    return meta, tensors


def tensors_to_components(meta: dict, tensors: dict) -> list[DecomposedAdapter]:
    out = []
    for li in range(meta["layers"]):
        heads = []
        for hi in range(meta["heads"]):
            heads.append(
                DecomposedHead(
                    b=DecomposedMatrix(
                        tensors[f"layer{li}.head{hi}.b_dir"],
                        tensors[f"layer{li}.head{hi}.b_mag"],
                    ),
                    a=DecomposedMatrix(
                        tensors[f"layer{li}.head{hi}.a_dir"],
                        tensors[f"layer{li}.head{hi}.a_mag"],
                    ),
                )
            )
        out.append(DecomposedAdapter(heads, meta["rank"], meta["alpha"]))
    return out


def save_adapter_snapshot(path, adapters=None, components=None, extra_meta=None) -> None:
    if (adapters is None) == (components is None):
        raise ValueError("pass exactly one of adapters / components")
    if adapters is not None:
        meta, tensors = adapters_to_tensors(adapters)
    else:
        meta, tensors = components_to_tensors(components)
    if extra_meta:
        meta = {**meta, **extra_meta}
    write_container(path, "adapter-snapshot", meta, tensors)


def load_adapter_snapshot(path) -> tuple[dict, list]:
    """Returns (meta, adapters-or-components), honoring the storage flag."""
    c = read_container(path)
    if c.meta["storage"] == "raw":
        return c.meta, tensors_to_adapters(c.meta, c.tensors)
    return c.meta, tensors_to_components(c.meta, c.tensors)


def find_containers(directory, kind: str) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        return []
    out = []
    for p in sorted(root.glob("*.lfc")):
        try:
            if read_container(p).kind == kind:
                out.append(p)
        except ContainerError:
            continue
    return out
