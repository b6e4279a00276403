"""FGAT tensor files, PNG images and parameter directories.

FGAT layout (little-endian)::

    b"FGAT" | u32 version (=1) | u8 dtype (0 = float32) | u8 ndim
    | ndim x u64 extents | row-major payload
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FgaError, ShapeError

MAGIC = b"FGAT"
VERSION = 1
DTYPES = {0: np.dtype("<f4")}
PARAMS_INDEX = "params.json"


class FormatError(FgaError, ValueError):
    """Malformed FGAT file or parameter manifest."""


def encode_fgat(array) -> bytes:
    arr = np.asarray(array, dtype="<f4").copy(order="C")
    if arr.ndim > 255:
        raise ShapeError("FGAT supports at most 255 dimensions")
    header = MAGIC + struct.pack("<IBB", VERSION, 0, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes()


def decode_fgat(blob: bytes) -> np.ndarray:
    """Parse FGAT bytes into a float64 array."""
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise FormatError("not an FGAT file (bad magic)")
    version, dtype, ndim = struct.unpack_from("<IBB", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported FGAT version {version}")
    if dtype not in DTYPES:
        raise FormatError(f"unsupported FGAT dtype code {dtype}")
    offset = 10
    if len(blob) < offset + 8 * ndim:
        raise FormatError("truncated FGAT header")
    shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
    offset += 8 * ndim
    dt = DTYPES[dtype]
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(blob) != offset + count * dt.itemsize:
        raise FormatError("FGAT payload size does not match its extents")
    data = np.frombuffer(blob, dtype=dt, count=count, offset=offset)
    return data.reshape(shape).astype(np.float64)


def save_fgat(path, array) -> None:
    Path(path).write_bytes(encode_fgat(array))


def load_fgat(path) -> np.ndarray:
    return decode_fgat(Path(path).read_bytes())


def load_png(path) -> np.ndarray:
    """8-bit PNG -> ``C x H x W`` float64 in [0, 1] (RGB, or 1 channel for L)."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        return arr[None]
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def save_png(path, img) -> None:
    """Save ``H x W`` or ``1|3 x H x W`` values in [0, 1] as an 8-bit PNG."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[0] == 1:
            img = img[0]
        elif img.shape[0] == 3:
            img = img.transpose(1, 2, 0)
        else:
            raise ShapeError(f"cannot save {img.shape[0]}-channel image as PNG")
    Image.fromarray(to_uint8(img)).save(path, format="PNG", optimize=False)


def load_image_or_tensor(path) -> np.ndarray:
    """Read a PNG or FGAT file, sniffing the magic bytes."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return load_fgat(path)
    return load_png(path)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _tensor_filename(name: str) -> str:
    return name.replace("/", "_") + ".fgat"


def save_params(directory, params: dict, meta: dict | None = None) -> Path:
    """Write one FGAT file per tensor plus a JSON index.

    The index maps every parameter name to its file and carries ``meta``
    (method, config) so another implementation can load the same weights.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in sorted(params):
        fname = _tensor_filename(name)
        save_fgat(directory / fname, params[name])
        files[name] = fname
    index = {"format": "fgat-params", "version": VERSION, "tensors": files}
    if meta:
        index.update(meta)
    path = directory / PARAMS_INDEX
    path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return path


def load_params(directory) -> tuple[dict, dict]:
    """Return ``(params, index)`` from a directory written by :func:`save_params`."""
    directory = Path(directory)
    index_path = directory / PARAMS_INDEX
    try:
        index = json.loads(index_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{index_path}: invalid JSON ({exc})") from exc
    if index.get("format") != "fgat-params" or "tensors" not in index:
        raise FormatError(f"{index_path} is not a parameter manifest")
    params = {name: load_fgat(directory / fname) for name, fname in index["tensors"].items()}
    return params, index
