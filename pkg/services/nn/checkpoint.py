"""
Checkpoint file:

    b"CNN1" | u32 LE descriptor length | JSON descriptor | raw <f4 blobs

The descriptor carries the architecture, band statistics, training metadata, BN step
counters and the blob list (name, kind, shape) in payload order. Blob order and shapes
must equal what the architecture implies.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import ValidationError

from errors import ArchMismatch, BadMagic, HeaderMismatch
from services.dataset.manifest import BandStats
from services.nn.model import ModelConfig, ResNetClassifier, expected_buffer_shapes, expected_parameter_shapes
from services.raster.r4b_format import canonical_json

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"CNN1"
BLOB_DTYPE = np.dtype("<f4")


@dataclass(eq=False)
class Checkpoint:
    arch: ModelConfig
    params: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]
    band_stats: BandStats
    bn_tracked: Dict[str, int] = field(default_factory=dict)
    train_meta: Dict[str, Any] = field(default_factory=dict)
    momentum: Optional[Dict[str, np.ndarray]] = None

    @classmethod
    def from_model(
        cls,
        model: ResNetClassifier,
        band_stats: BandStats,
        train_meta: Optional[Dict[str, Any]] = None,
        momentum: Optional[Dict[str, np.ndarray]] = None,
    ) -> "Checkpoint":
        state = model.state()
        return cls(
            arch=model.cfg,
            params={n: p.astype(BLOB_DTYPE) for n, p in state["params"].items()},
            buffers={n: b.astype(BLOB_DTYPE) for n, b in state["buffers"].items()},
            band_stats=band_stats,
            bn_tracked=dict(state["bn_tracked"]),
            train_meta=dict(train_meta or {}),
            momentum={n: m.astype(BLOB_DTYPE) for n, m in momentum.items()} if momentum else None,
        )

    def to_model(self, dtype=np.float32) -> ResNetClassifier:
        model = ResNetClassifier(self.arch, dtype=dtype)
        model.load_state({"params": self.params, "buffers": self.buffers, "bn_tracked": self.bn_tracked})
        return model

    @property
    def pixel_size_m(self) -> Optional[float]:
        value = self.train_meta.get("pixel_size_m")
        return None if value is None else float(value)


def _blob_list(ckpt: Checkpoint) -> List[Dict[str, Any]]:
    blobs = [{"name": n, "kind": "param", "shape": list(a.shape)} for n, a in ckpt.params.items()]
    blobs += [{"name": n, "kind": "buffer", "shape": list(a.shape)} for n, a in ckpt.buffers.items()]
    if ckpt.momentum:
        blobs += [{"name": n, "kind": "momentum", "shape": list(a.shape)} for n, a in ckpt.momentum.items()]
    return blobs


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    descriptor = {
        "arch": ckpt.arch.descriptor(),
        "band_stats": ckpt.band_stats.to_dict(),
        "bn_tracked": ckpt.bn_tracked,
        "meta": ckpt.train_meta,
        "blobs": _blob_list(ckpt),
    }
    header = canonical_json(descriptor)
    arrays = list(ckpt.params.values()) + list(ckpt.buffers.values())
    if ckpt.momentum:
        arrays += list(ckpt.momentum.values())
    payload = b"".join(np.ascontiguousarray(a, dtype=BLOB_DTYPE).tobytes() for a in arrays)
    return CKPT_MAGIC + struct.pack("<I", len(header)) + header + payload


def _check_blobs_against_arch(arch: ModelConfig, blobs: List[Dict[str, Any]]) -> None:
    expected = [(n, tuple(s), "param") for n, s in expected_parameter_shapes(arch)]
    expected += [(n, tuple(s), "buffer") for n, s in expected_buffer_shapes(arch)]
    declared = [(b["name"], tuple(b["shape"]), b["kind"]) for b in blobs if b["kind"] != "momentum"]
    if declared != expected:
        n_exp = sum(1 for _, _, k in expected if k == "param")
        n_dec = sum(1 for _, _, k in declared if k == "param")
        raise ArchMismatch(
            f"Checkpoint blobs do not match architecture {arch.descriptor()} "
            f"({n_dec} parameter blobs stored, {n_exp} expected)"
        )


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 8 or data[:4] != CKPT_MAGIC:
        raise BadMagic("Not a CNN1 checkpoint (bad magic or truncated header)")
    (hlen,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + hlen:
        raise BadMagic(f"Checkpoint truncated inside its {hlen}-byte descriptor")
    try:
        descriptor = json.loads(data[8 : 8 + hlen].decode("utf-8"))
        blobs = descriptor["blobs"]
        arch_raw = descriptor["arch"]
        band_stats = BandStats.from_dict(descriptor["band_stats"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        raise HeaderMismatch(f"Malformed checkpoint descriptor: {e}") from e
    try:
        arch = ModelConfig.model_validate(arch_raw)
    except ValidationError as e:
        raise ArchMismatch(f"Invalid architecture descriptor: {e}") from e
    _check_blobs_against_arch(arch, blobs)

    sizes = [int(np.prod(b["shape"], dtype=np.int64)) for b in blobs]
    want = 8 + hlen + sum(sizes) * BLOB_DTYPE.itemsize
    if len(data) != want:
        raise HeaderMismatch(f"Checkpoint payload is {len(data) - 8 - hlen} bytes, descriptor declares {want - 8 - hlen}")

    offset = 8 + hlen
    groups: Dict[str, Dict[str, np.ndarray]] = {"param": {}, "buffer": {}, "momentum": {}}
    for blob, size in zip(blobs, sizes):
        nbytes = size * BLOB_DTYPE.itemsize
        arr = np.frombuffer(data, dtype=BLOB_DTYPE, count=size, offset=offset).reshape(blob["shape"]).copy()
        groups[blob["kind"]][blob["name"]] = arr
        offset += nbytes
    return Checkpoint(
        arch=arch,
        params=groups["param"],
        buffers=groups["buffer"],
        band_stats=band_stats,
        bn_tracked={k: int(v) for k, v in descriptor.get("bn_tracked", {}).items()},
        train_meta=descriptor.get("meta", {}),
        momentum=groups["momentum"] or None,
    )


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(ckpt))
    logger.info("Checkpoint written to %s", path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
