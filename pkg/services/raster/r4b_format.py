"""
R4B container: magic "R4B1\\n", u32 LE header length, UTF-8 JSON header, then the
R, G, B and NIR bands back to back, each row-major, no padding.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from config import N_BANDS
from errors import BadMagic, HeaderMismatch, UnsupportedDtype
from services.raster.types import DTYPES, GeoTransform, Raster4B

logger = logging.getLogger(__name__)

R4B_MAGIC = b"R4B1\n"
_LEN = struct.Struct("<I")
_PREAMBLE = len(R4B_MAGIC) + _LEN.size

REQUIRED_KEYS = (
    "width", "height", "bands", "dtype",
    "origin_x", "origin_y", "pixel_size_x", "pixel_size_y",
    "crs", "nodata",
)


def canonical_json(obj: Any) -> bytes:
    """Byte-deterministic JSON: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _header(raster: Raster4B) -> Dict[str, Any]:
    header: Dict[str, Any] = {
        "width": raster.width,
        "height": raster.height,
        "bands": N_BANDS,
        "dtype": raster.dtype_name,
        "crs": raster.crs,
        "nodata": raster.nodata,
    }
    header.update(raster.geo.to_dict())
    return header


def encode_r4b(raster: Raster4B) -> bytes:
    """Serialize a raster to R4B bytes."""
    header = canonical_json(_header(raster))
    payload = raster.pixels.astype(DTYPES[raster.dtype_name], copy=False).tobytes(order="C")
    return R4B_MAGIC + _LEN.pack(len(header)) + header + payload


def decode_r4b(data: bytes) -> Raster4B:
    """Parse R4B bytes; raises BadMagic, HeaderMismatch or UnsupportedDtype."""
    if len(data) < _PREAMBLE or data[: len(R4B_MAGIC)] != R4B_MAGIC:
        raise BadMagic("Not an R4B file (expected magic 'R4B1\\n')")
    (header_len,) = _LEN.unpack_from(data, len(R4B_MAGIC))
    if _PREAMBLE + header_len > len(data):
        raise HeaderMismatch(f"Header length {header_len} exceeds file size {len(data)}")
    try:
        header = json.loads(data[_PREAMBLE : _PREAMBLE + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise HeaderMismatch(f"Unreadable R4B header: {e}") from e
    if not isinstance(header, dict):
        raise HeaderMismatch("R4B header is not a JSON object")
    missing = [k for k in REQUIRED_KEYS if k not in header]
    if missing:
        raise HeaderMismatch(f"R4B header missing keys: {missing}")
    if header["bands"] != N_BANDS:
        raise HeaderMismatch(f"R4B header declares {header['bands']} bands, expected {N_BANDS}")
    dtype = DTYPES.get(header["dtype"])
    if dtype is None:
        raise UnsupportedDtype(f"Unsupported R4B dtype: {header['dtype']!r}")

    try:
        width, height = int(header["width"]), int(header["height"])
        nodata = None if header["nodata"] is None else int(header["nodata"])
    except (TypeError, ValueError, OverflowError) as e:
        raise HeaderMismatch(f"Non-numeric R4B header field: {e}") from e
    geo = GeoTransform.from_dict(header)
    payload = data[_PREAMBLE + header_len :]
    expected = width * height * N_BANDS * dtype.itemsize
    if width < 1 or height < 1 or len(payload) != expected:
        raise HeaderMismatch(
            f"R4B header declares {width}x{height}x{N_BANDS} {header['dtype']} "
            f"({expected} bytes) but payload has {len(payload)} bytes"
        )
    pixels = np.frombuffer(payload, dtype=dtype).reshape(N_BANDS, height, width)
    pixels = pixels.astype(dtype.newbyteorder("="), copy=True)
    return Raster4B(
        pixels=pixels,
        geo=geo,
        nodata=nodata,
        crs=str(header["crs"]),
    )


def write_r4b(raster: Raster4B, path: Union[str, Path]) -> None:
    """Write raster to path; identical rasters produce identical bytes."""
    path = Path(path)
    path.write_bytes(encode_r4b(raster))
    logger.debug("Wrote R4B %sx%s %s to %s", raster.width, raster.height, raster.dtype_name, path)


def read_r4b(path: Union[str, Path]) -> Raster4B:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"R4B raster not found: {path}")
    return decode_r4b(path.read_bytes())
