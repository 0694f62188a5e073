"""
The MTNS tensor container and directory bundles built on it.

Layout: magic ``MTNS``, version byte, dtype byte, ndim byte, ndim little-endian
u32 extents, then the row-major little-endian payload. A bundle is a directory
holding ``header.json`` and one ``<name>.mtns`` file per named tensor.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any

import numpy as np

from shared.errors import DataError, ParameterError

logger = logging.getLogger(__name__)

MAGIC = b"MTNS"
VERSION = 1
DTYPES: dict[int, np.dtype] = {
    1: np.dtype("<f4"),
    2: np.dtype("u1"),
    3: np.dtype("<f8"),
}
HEADER_FILE = "header.json"
SUFFIX = ".mtns"


def dtype_code(dtype: np.dtype) -> int:
    little = np.dtype(dtype).newbyteorder("<")
    for code, candidate in DTYPES.items():
        if little == candidate:
            return code
    raise ParameterError(f"dtype {dtype} has no container code (float32, uint8, float64)")


def encode(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    code = dtype_code(array.dtype)
    if array.ndim > 255:
        raise ParameterError(f"too many dimensions: {array.ndim}")
    head = MAGIC + struct.pack("<BBB", VERSION, code, array.ndim)
    head += struct.pack(f"<{array.ndim}I", *array.shape)
    return head + np.ascontiguousarray(array, dtype=DTYPES[code]).tobytes()


def decode(blob: bytes) -> np.ndarray:
    """
    Parse one container.

    Raises:
        DataError: On a bad magic, version or dtype, a truncated header or a
            payload whose length does not match the extents
    """
    if len(blob) < 7 or blob[:4] != MAGIC:
        raise DataError("not an MTNS tensor (bad magic)")
    version, code, ndim = struct.unpack_from("<BBB", blob, 4)
    if version != VERSION:
        raise DataError(f"unsupported MTNS version {version}")
    if code not in DTYPES:
        raise DataError(f"unknown MTNS dtype code {code}")
    dims_end = 7 + 4 * ndim
    if len(blob) < dims_end:
        raise DataError("truncated MTNS header")
    shape = struct.unpack_from(f"<{ndim}I", blob, 7)
    dtype = DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = blob[dims_end:]
    if len(payload) != expected:
        raise DataError(f"MTNS payload is {len(payload)} bytes, extents {shape} need {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def write_tensor(path: str | Path, array: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(array))
    return path


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"tensor file not found: {path}")
    try:
        return decode(path.read_bytes())
    except DataError as e:
        raise DataError(f"{path}: {e}") from e


def save_bundle(
    directory: str | Path, header: dict[str, Any], tensors: dict[str, np.ndarray]
) -> Path:
    """Write a JSON header and named tensors (stored as float64 unless uint8)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for name, array in tensors.items():
        array = np.asarray(array)
        if array.dtype != np.uint8:
            array = array.astype(np.float64)
        write_tensor(directory / f"{name}{SUFFIX}", array)
        names.append(name)
    header = {**header, "tensors": names}
    (directory / HEADER_FILE).write_text(json.dumps(header, indent=2, sort_keys=True))
    logger.info(f"wrote bundle {directory} ({len(names)} tensors)")
    return directory


def load_bundle(directory: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    directory = Path(directory)
    header_path = directory / HEADER_FILE
    if not header_path.is_file():
        raise DataError(f"bundle header not found: {header_path}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{header_path} is not valid JSON: {e}") from e
    tensors = {name: read_tensor(directory / f"{name}{SUFFIX}") for name in header.get("tensors", [])}
    return header, tensors
