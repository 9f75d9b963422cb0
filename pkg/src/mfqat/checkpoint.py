"""Checkpoint file format: one JSON manifest line plus a binary tensor blob.

Layout:  ``MFQATCKPT1\n`` + manifest JSON (one line) + ``\n`` + blob.
The blob holds every tensor as little-endian float64 in manifest order; the
manifest records name/shape/offset per tensor and a sha256 of the blob, so a
truncated or corrupted file fails loudly. Writes are atomic (temp file +
rename) so an interrupted save never leaves a half-written checkpoint.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .autograd.optim import Optimizer
from .models import ModelGraph, build_model

MAGIC = b"MFQATCKPT1\n"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    manifest: dict
    tensors: dict[str, np.ndarray]

    @property
    def model_spec(self) -> dict:
        return self.manifest["model_spec"]

    @property
    def epoch(self) -> int:
        return int(self.manifest["epoch"])

    @property
    def history(self) -> list[dict]:
        return self.manifest.get("history", [])

    @property
    def config_text(self) -> str:
        return self.manifest.get("config_text", "")


def save_checkpoint(path: str, model: ModelGraph, optim: Optimizer | None = None,
                    epoch: int = 0, history=(), seed: int = 0,
                    config_text: str = "") -> None:
    entries = dict(model.tensor_entries())
    if optim is not None:
        entries.update(optim.state_tensors())

    blob_parts: list[bytes] = []
    tensor_meta: list[dict] = []
    offset = 0
    for name, arr in entries.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensor_meta.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blob_parts.append(raw)
        offset += len(raw)
    blob = b"".join(blob_parts)

    quant_meta = []
    for key, st in model.quant_states():
        quant_meta.append({
            "key": key,
            "format": str(st.format),
            "e0": st._e0,
            "learnable": st.learnable,
            "observed_max": st.observed_max,
        })

    manifest = {
        "version": VERSION,
        "model_spec": model.spec,
        "epoch": int(epoch),
        "history": list(history),
        "quant": quant_meta,
        "optim": None if optim is None else {
            "algorithm": optim.algorithm,
            "lr": optim.lr,
            "scalars": optim.state_scalars(),
        },
        "rng": {"seed": int(seed), "next_epoch": int(epoch)},
        "config_text": config_text,
        "tensors": tensor_meta,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    payload = MAGIC + json.dumps(manifest, sort_keys=True).encode() + b"\n" + blob

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        payload = fh.read()
    if not payload.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    body = payload[len(MAGIC):]
    nl = body.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing manifest")
    try:
        manifest = json.loads(body[:nl].decode())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: bad manifest: {exc}") from None
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {manifest.get('version')}")
    blob = body[nl + 1:]
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CheckpointError(f"{path}: blob checksum mismatch (truncated or corrupted)")
    tensors: dict[str, np.ndarray] = {}
    for meta in manifest["tensors"]:
        start, n = meta["offset"], meta["nbytes"]
        arr = np.frombuffer(blob[start : start + n], dtype="<f8").astype(np.float64)
        tensors[meta["name"]] = arr.reshape(meta["shape"])
    return Checkpoint(manifest=manifest, tensors=tensors)


def restore_model(ckpt: Checkpoint) -> ModelGraph:
    """Rebuild the model graph and load masters, buffers and quantizer states."""
    model = build_model(ckpt.model_spec, seed=0)
    model.load_tensor_entries(ckpt.tensors)
    states = dict(model.quant_states())
    for meta in ckpt.manifest.get("quant", []):
        st = states.get(meta["key"])
        if st is None:
            raise CheckpointError(f"checkpoint quantizer {meta['key']!r} not in model")
        if meta["e0"] is not None:
            st.e0 = float(meta["e0"])
        st.learnable = bool(meta["learnable"])
        st.observed_max = float(meta["observed_max"])
    return model


def restore_optimizer(ckpt: Checkpoint, optim: Optimizer) -> None:
    meta = ckpt.manifest.get("optim")
    if meta is None:
        raise CheckpointError("checkpoint has no optimizer state")
    if meta["algorithm"] != optim.algorithm:
        raise CheckpointError(
            f"optimizer mismatch: checkpoint {meta['algorithm']}, config {optim.algorithm}"
        )
    optim.load_state(ckpt.tensors, meta["scalars"])
    optim.lr = float(meta["lr"])
