"""Self-describing checkpoint container and its binary codec.

Layout of the byte stream:

    magic b"ITLC" | version: uint32 LE | header length: uint64 LE |
    header JSON (utf-8) | tensor payload | sha256 of all preceding bytes

The header carries provenance, optimizer and strategy metadata, and a
directory of named tensors (name, dtype, shape, offset, nbytes). All
tensors are little-endian float64. Encoding is canonical (sorted names,
sorted JSON keys), so encode -> decode -> encode reproduces identical
bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import CodecError
from .nn import Params
from .optim import AdamState, SgdState
from .regularizers import Strategy, restore_strategy

MAGIC = b"ITLC"
FORMAT_VERSION = 1
_CHECKSUM_BYTES = 32
FILE_EXTENSION = ".itlc"


@dataclass(frozen=True)
class Provenance:
    """Where a checkpoint came from, for audit and resume."""

    center: int = 0       # 1-based center that produced the weights; 0 = initial
    visit: int = 0        # completed visit count in the schedule
    epoch: int = 0        # completed epochs within the producing visit
    seed: int = 0         # repeat seed of the run
    config_hash: str = ""


@dataclass(frozen=True)
class Checkpoint:
    params: Params
    optimizer: SgdState | AdamState
    strategy_meta: dict
    strategy_tensors: Params
    provenance: Provenance = Provenance()
    format_version: int = FORMAT_VERSION


def make_checkpoint(params: Params, optimizer: SgdState | AdamState,
                    strategy: Strategy,
                    provenance: Provenance = Provenance()) -> Checkpoint:
    meta, tensors = strategy.export_state()
    return Checkpoint(params=params, optimizer=optimizer, strategy_meta=meta,
                      strategy_tensors=tensors, provenance=provenance)


def restore_from(checkpoint: Checkpoint) -> tuple[Params, SgdState | AdamState,
                                                  Strategy]:
    strategy = restore_strategy(checkpoint.strategy_meta,
                                checkpoint.strategy_tensors)
    return checkpoint.params, checkpoint.optimizer, strategy


# ---------------------------------------------------------------------------
# optimizer <-> (meta, tensors)
# ---------------------------------------------------------------------------


def _optimizer_meta(state: SgdState | AdamState) -> tuple[dict, Params]:
    if isinstance(state, SgdState):
        return {"kind": "sgd", "base_lr": state.base_lr,
                "decay_base": state.decay_base,
                "decay_period_epochs": state.decay_period_epochs,
                "epoch": state.epoch, "halving": state.halving}, {}
    if isinstance(state, AdamState):
        tensors: Params = {}
        for name, value in state.m.items():
            tensors[f"m.{name}"] = value
        for name, value in state.v.items():
            tensors[f"v.{name}"] = value
        return {"kind": "adam", "t": state.t, "beta1": state.beta1,
                "beta2": state.beta2, "epsilon": state.epsilon, "lr": state.lr,
                "halving": state.halving}, tensors
    raise CodecError(f"unknown optimizer state type {type(state).__name__}")


def _optimizer_from_meta(meta: dict, tensors: Params) -> SgdState | AdamState:
    kind = meta.get("kind")
    if kind == "sgd":
        return SgdState(base_lr=meta["base_lr"], decay_base=meta["decay_base"],
                        decay_period_epochs=meta["decay_period_epochs"],
                        epoch=meta["epoch"], halving=meta["halving"])
    if kind == "adam":
        m = {k[2:]: v for k, v in tensors.items() if k.startswith("m.")}
        v = {k[2:]: v for k, v in tensors.items() if k.startswith("v.")}
        return AdamState(m=m, v=v, t=meta["t"], beta1=meta["beta1"],
                         beta2=meta["beta2"], epsilon=meta["epsilon"],
                         lr=meta["lr"], halving=meta["halving"])
    raise CodecError(f"unknown optimizer kind {kind!r}")


# ---------------------------------------------------------------------------
# codec
# ---------------------------------------------------------------------------


def _flatten_tensors(checkpoint: Checkpoint) -> dict[str, np.ndarray]:
    flat: dict[str, np.ndarray] = {}
    for name, value in checkpoint.params.items():
        flat[f"params.{name}"] = value
    _, optim_tensors = _optimizer_meta(checkpoint.optimizer)
    for name, value in optim_tensors.items():
        flat[f"optim.{name}"] = value
    for name, value in checkpoint.strategy_tensors.items():
        flat[f"strategy.{name}"] = value
    return flat


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    flat = _flatten_tensors(checkpoint)
    directory = []
    chunks = []
    offset = 0
    for name in sorted(flat):
        array = np.ascontiguousarray(flat[name], dtype=np.float64)
        raw = array.astype("<f8", copy=False).tobytes()
        directory.append({"name": name, "dtype": "<f8",
                          "shape": list(array.shape), "offset": offset,
                          "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    optim_meta, _ = _optimizer_meta(checkpoint.optimizer)
    header = {
        "provenance": {
            "center": checkpoint.provenance.center,
            "visit": checkpoint.provenance.visit,
            "epoch": checkpoint.provenance.epoch,
            "seed": checkpoint.provenance.seed,
            "config_hash": checkpoint.provenance.config_hash,
        },
        "optimizer": optim_meta,
        "strategy": checkpoint.strategy_meta,
        "tensors": directory,
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    body = (MAGIC + struct.pack("<I", checkpoint.format_version)
            + struct.pack("<Q", len(header_bytes)) + header_bytes
            + b"".join(chunks))
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 12 + _CHECKSUM_BYTES:
        raise CodecError("checkpoint stream truncated: shorter than fixed header")
    if blob[:4] != MAGIC:
        raise CodecError("not a checkpoint stream: bad magic")
    body, checksum = blob[:-_CHECKSUM_BYTES], blob[-_CHECKSUM_BYTES:]
    if hashlib.sha256(body).digest() != checksum:
        raise CodecError("checkpoint checksum mismatch: corrupted stream")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise CodecError(f"unsupported checkpoint format version {version}")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header_end = 16 + header_len
    if header_end > len(body):
        raise CodecError("checkpoint stream truncated inside header")
    try:
        header = json.loads(body[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CodecError(f"invalid checkpoint header: {exc}") from None
    payload = body[header_end:]
    flat: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CodecError(
                f"checkpoint stream truncated inside tensor {entry['name']!r}")
        array = np.frombuffer(payload[start:start + nbytes], dtype="<f8")
        flat[entry["name"]] = array.reshape(entry["shape"]).astype(
            np.float64, copy=True)
    params = {k[len("params."):]: v for k, v in flat.items()
              if k.startswith("params.")}
    optim_tensors = {k[len("optim."):]: v for k, v in flat.items()
                     if k.startswith("optim.")}
    strategy_tensors = {k[len("strategy."):]: v for k, v in flat.items()
                        if k.startswith("strategy.")}
    prov = header["provenance"]
    return Checkpoint(
        params=params,
        optimizer=_optimizer_from_meta(header["optimizer"], optim_tensors),
        strategy_meta=header["strategy"],
        strategy_tensors=strategy_tensors,
        provenance=Provenance(center=prov["center"], visit=prov["visit"],
                              epoch=prov["epoch"], seed=prov["seed"],
                              config_hash=prov["config_hash"]),
        format_version=version,
    )


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    if path.suffix != FILE_EXTENSION:
        path = path.with_suffix(FILE_EXTENSION)
    path.write_bytes(encode_checkpoint(checkpoint))
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CodecError(f"checkpoint file not found: {path}")
    return decode_checkpoint(path.read_bytes())


def with_provenance(checkpoint: Checkpoint, **fields) -> Checkpoint:
    return replace(checkpoint,
                   provenance=replace(checkpoint.provenance, **fields))
