"""RDF1 tensor files, PGM images and weight directories.

RDF1 layout: ``b"RDF1"``, u32 ndim, ndim u32 extents, then row-major float32
values, all little-endian.  Values are widened to float64 on load.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RDF1"


class FormatError(ValueError):
    pass


def write_rdf(path, array) -> None:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes(order="C"))


def read_rdf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not an RDF1 file")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    offset = 8 + 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if len(raw) - offset != 4 * count:
        raise FormatError(f"{path}: payload has {len(raw) - offset} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float64).reshape(shape)


def _pgm_tokens(raw: bytes, n: int, pos: int):
    tokens = []
    while len(tokens) < n:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(raw[start:pos]))
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Read an 8- or 16-bit PGM (P2 ASCII or P5 binary) as float64."""
    raw = Path(path).read_bytes()
    kind = raw[:2]
    if kind not in (b"P2", b"P5"):
        raise FormatError(f"{path}: unsupported PGM magic {kind!r}")
    (w, h, maxval), pos = _pgm_tokens(raw, 3, 2)
    if kind == b"P2":
        vals, _ = _pgm_tokens(raw, w * h, pos)
        return np.array(vals, dtype=np.float64).reshape(h, w)
    pos += 1  # single whitespace after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos)
    return data.astype(np.float64).reshape(h, w)


def write_pgm(path, image, maxval: int | None = None) -> None:
    """Write P5; values are rounded and clipped to [0, maxval]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-d")
    if maxval is None:
        maxval = 255 if img.max(initial=0) <= 255 else 65535
    dtype = ">u2" if maxval > 255 else "u1"
    q = np.clip(np.rint(img), 0, maxval).astype(dtype)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode()
    Path(path).write_bytes(header + q.tobytes())


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    return read_rdf(path)


def write_image(path, image) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        write_pgm(path, image)
    else:
        write_rdf(path, image)


def save_weights(directory, params: dict) -> None:
    """One RDF1 file per tensor plus ``index.json`` (name -> file, shape)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    for i, (name, value) in enumerate(params.items()):
        arr = np.asarray(getattr(value, "data", value), dtype=np.float64)
        fname = f"{i:04d}.rdf"
        write_rdf(directory / fname, arr)
        index[name] = {"file": fname, "shape": list(arr.shape)}
    (directory / "index.json").write_text(json.dumps(index, indent=2))


def load_weights(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text())
    out = {}
    for name, entry in index.items():
        arr = read_rdf(directory / entry["file"])
        if list(arr.shape) != list(entry["shape"]):
            raise FormatError(f"{name}: shape {arr.shape} does not match index {entry['shape']}")
        out[name] = arr
    return out
