"""Packed deployment export of quantized weight tensors.

Each exported tensor is quantized onto its (format, ceil(e0)) grid, encoded
to codewords, and bit-packed MSB-first within bytes, padded to a byte
boundary per tensor. The manifest names each tensor's format, integer bias
and element count, so unpack-and-decode reproduces quantize(master) exactly.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .codec import decode_bits_array
from .formats import MinifloatFormat, parse_format
from .models import ModelGraph
from .quantizer import quantize

MAGIC = b"MFQATQNT1\n"
VERSION = 1


class ExportError(RuntimeError):
    pass


def encode_values_array(values: np.ndarray, fmt: MinifloatFormat, e_b: int) -> np.ndarray:
    """Vectorised codeword encoding of exactly representable values."""
    v = np.asarray(values, dtype=np.float64).ravel()
    sign = (v < 0).astype(np.int64)
    a = np.abs(v)
    nonzero = a > 0
    codes = np.zeros(v.size, dtype=np.int64)
    if nonzero.any():
        an = a[nonzero]
        _, exp2 = np.frexp(an)
        binade = exp2 - 1
        ex = binade + e_b
        mant = np.rint(np.ldexp(an, fmt.m - binade) - (1 << fmt.m)).astype(np.int64)
        if (ex < 0).any() or (ex > fmt.exp_field_max).any() or (mant < 0).any() or (
            mant >= (1 << fmt.m)
        ).any():
            raise ExportError("value not representable; quantize before encoding")
        codes[nonzero] = (sign[nonzero] << (fmt.e + fmt.m)) | (ex << fmt.m) | mant
    return codes


def pack_codes(codes: np.ndarray, width: int) -> bytes:
    """Bit-pack codewords MSB-first, padding the tail to a byte boundary."""
    shifts = np.arange(width - 1, -1, -1)
    bits = ((codes[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return np.packbits(bits.ravel()).tobytes()


def unpack_codes(payload: bytes, count: int, width: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[: count * width]
    weights = (1 << np.arange(width - 1, -1, -1)).astype(np.int64)
    return bits.reshape(count, width).astype(np.int64) @ weights


def export_quantized(model: ModelGraph, path: str) -> dict:
    """Write the packed export file; returns its manifest."""
    entries = []
    blob_parts: list[bytes] = []
    offset = 0
    for layer in model.conv_layers():
        att = model.attachments.get(layer.name)
        if att is None:
            raise ExportError(f"layer {layer.name!r} has no quantizer attachment")
        st = att.weight_q
        if not st.is_set:
            raise ExportError(f"layer {layer.name!r} has an unset exponent bias")
        master = model.params[f"{layer.name}.w"].data
        q = quantize(master, st.format, st.e0)
        codes = encode_values_array(q, st.format, st.e_b)
        payload = pack_codes(codes, st.format.width)
        entries.append({
            "name": f"{layer.name}.w",
            "format": str(st.format),
            "e_b": st.e_b,
            "count": int(master.size),
            "shape": list(master.shape),
            "offset": offset,
            "nbytes": len(payload),
        })
        blob_parts.append(payload)
        offset += len(payload)
    blob = b"".join(blob_parts)
    manifest = {"version": VERSION, "tensors": entries, "payload_bytes": len(blob)}
    data = MAGIC + json.dumps(manifest, sort_keys=True).encode() + b"\n" + blob

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".qnt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return manifest


@dataclass
class QuantExport:
    manifest: dict
    tensors: dict[str, np.ndarray]  # decoded values, original shapes


def load_quantized(path: str) -> QuantExport:
    with open(path, "rb") as fh:
        payload = fh.read()
    if not payload.startswith(MAGIC):
        raise ExportError(f"{path}: not a quantized export file")
    body = payload[len(MAGIC):]
    nl = body.find(b"\n")
    manifest = json.loads(body[:nl].decode())
    if manifest.get("version") != VERSION:
        raise ExportError(f"{path}: unsupported version {manifest.get('version')}")
    blob = body[nl + 1:]
    tensors: dict[str, np.ndarray] = {}
    for meta in manifest["tensors"]:
        fmt = parse_format(meta["format"])
        raw = blob[meta["offset"] : meta["offset"] + meta["nbytes"]]
        codes = unpack_codes(raw, meta["count"], fmt.width)
        values = decode_bits_array(codes, fmt, int(meta["e_b"]))
        tensors[meta["name"]] = values.reshape(meta["shape"])
    return QuantExport(manifest=manifest, tensors=tensors)
