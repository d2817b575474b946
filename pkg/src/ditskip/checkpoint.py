"""Deterministic binary container: JSON header line + float64 blob.

Layout: one UTF-8 JSON line (format version, CRC32 of the blob, entry
table with shapes/offsets, free-form metadata), then the raw blob of
little-endian 64-bit floats with all arrays concatenated in declared
order. Round trips are bit-exact; loads verify the checksum; writes are
atomic (temp file + rename). The same container stores model
checkpoints and datasets, so every artifact byte is a pure function of
its contents.
"""

from __future__ import annotations

import json
import os
import zlib

import numpy as np

from .backbone import KINDS, BlockWeights, ModelConfig, ModelWeights, ModulationParams
from .data import SyntheticDataset
from .lazy import PredictorBank

__all__ = [
    "FORMAT_VERSION",
    "CheckpointError",
    "ChecksumError",
    "VersionError",
    "save_arrays",
    "load_arrays",
    "inspect_header",
    "save_checkpoint",
    "load_checkpoint",
    "save_dataset",
    "load_dataset",
]

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Base class for container failures."""


class ChecksumError(CheckpointError):
    """Blob bytes do not match the header CRC32."""


class VersionError(CheckpointError):
    """Container was written with an unsupported format version."""


def save_arrays(path, named_arrays, meta: dict | None = None):
    """Write (name, array) pairs and metadata; atomic and byte-deterministic."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in named_arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "count": int(arr.size),
        })
        chunks.append(arr.tobytes())
        offset += arr.size
    blob = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "crc32": zlib.crc32(blob),
        "entries": entries,
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header_bytes)
        fh.write(blob)
    os.replace(tmp, path)


def inspect_header(path) -> dict:
    """Parse the header line only; no blob read, no checksum work."""
    with open(path, "rb") as fh:
        line = fh.readline()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable container header in {path}: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    return header


def load_arrays(path):
    """Read and verify the container; returns ({name: array}, meta)."""
    header = inspect_header(path)
    with open(path, "rb") as fh:
        fh.readline()
        blob = fh.read()
    if zlib.crc32(blob) != header["crc32"]:
        raise ChecksumError(f"{path}: blob checksum mismatch")
    flat = np.frombuffer(blob, dtype="<f8")
    arrays = {}
    for entry in header["entries"]:
        chunk = flat[entry["offset"]:entry["offset"] + entry["count"]]
        if chunk.size != entry["count"]:
            raise CheckpointError(f"{path}: truncated blob at entry {entry['name']}")
        arrays[entry["name"]] = chunk.reshape(entry["shape"]).astype(np.float64).copy()
    return arrays, header["meta"]


def _bank_entries(bank: PredictorBank):
    for layer, kind in bank.keys():
        yield f"bank.{layer}.{kind}", bank.weights[(layer, kind)]


def save_checkpoint(path, model: ModelWeights, bank: PredictorBank | None = None,
                    extra_meta: dict | None = None):
    """Model weights (and optionally the predictor bank) in declared order."""
    cfg = model.config
    meta = {
        "kind": "checkpoint",
        "model": {
            "num_layers": cfg.num_layers,
            "num_patches": cfg.num_patches,
            "hidden_dim": cfg.hidden_dim,
            "train_steps": cfg.train_steps,
            "num_classes": cfg.num_classes,
            "spectral_clip": cfg.spectral_clip,
            "logit_cap": cfg.logit_cap,
        },
        "has_bank": bank is not None,
    }
    if extra_meta:
        meta.update(extra_meta)
    named = list(model.weight_matrices())
    if bank is not None:
        named.extend(_bank_entries(bank))
    save_arrays(path, named, meta)


def load_checkpoint(path):
    """Rebuild (model, bank-or-None, meta) from a checkpoint file."""
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} is not a checkpoint container")
    m = meta["model"]
    config = ModelConfig(
        num_layers=int(m["num_layers"]),
        num_patches=int(m["num_patches"]),
        hidden_dim=int(m["hidden_dim"]),
        train_steps=int(m["train_steps"]),
        num_classes=int(m["num_classes"]),
        spectral_clip=m["spectral_clip"],
        logit_cap=float(m["logit_cap"]),
    )
    blocks = []
    for i in range(config.num_layers):
        modulation = {}
        for kind in KINDS:
            prefix = f"block{i}.{kind}"
            modulation[kind] = ModulationParams(
                scale_weight=arrays[f"{prefix}.scale_weight"],
                scale_bias=arrays[f"{prefix}.scale_bias"],
                shift_weight=arrays[f"{prefix}.shift_weight"],
                shift_bias=arrays[f"{prefix}.shift_bias"],
                gate_weight=arrays[f"{prefix}.gate_weight"],
                gate_bias=arrays[f"{prefix}.gate_bias"],
            )
        blocks.append(BlockWeights(
            query=arrays[f"block{i}.query"],
            key=arrays[f"block{i}.key"],
            value=arrays[f"block{i}.value"],
            feed=arrays[f"block{i}.feed"],
            modulation=modulation,
        ))
    model = ModelWeights(config=config, class_table=arrays["class_table"],
                         blocks=blocks, head=arrays["head"])
    bank = None
    if meta.get("has_bank"):
        bank = PredictorBank(config.num_layers, config.hidden_dim, {
            (layer, kind): arrays[f"bank.{layer}.{kind}"]
            for layer in range(config.num_layers) for kind in KINDS
        })
        bank.validate()
    return model, bank, meta


def save_dataset(path, dataset: SyntheticDataset, extra_meta: dict | None = None):
    meta = {
        "kind": "dataset",
        "num_classes": int(dataset.class_means.shape[0]),
        "mean_scale": dataset.mean_scale,
        "noise_scale": dataset.noise_scale,
    }
    if extra_meta:
        meta.update(extra_meta)
    save_arrays(path, [
        ("tokens", dataset.tokens),
        ("labels", dataset.labels.astype(np.float64)),
        ("class_means", dataset.class_means),
    ], meta)


def load_dataset(path) -> SyntheticDataset:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "dataset":
        raise CheckpointError(f"{path} is not a dataset container")
    return SyntheticDataset(
        tokens=arrays["tokens"],
        labels=arrays["labels"].astype(np.int64),
        class_means=arrays["class_means"],
        mean_scale=float(meta["mean_scale"]),
        noise_scale=float(meta["noise_scale"]),
    )
