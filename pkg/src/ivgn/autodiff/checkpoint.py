"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"IVGN" | version:u32 | record_count:u32 | payload_bytes:u64 | records...

    record := name_len:u32 | name:utf8 | dtype:u8 | ndim:u32 | dims:u64*ndim | raw values

dtype tags: 0 float64, 1 float32, 2 int64, 3 utf-8 bytes (ndim 1, dims = byte length).
``payload_bytes`` counts every byte after the header; the loader rejects files
whose length disagrees with it or with the sum of the record sizes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from ivgn.errors import CheckpointError

MAGIC = b"IVGN"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8")}
_TAGS = {np.dtype("float64"): 0, np.dtype("float32"): 1, np.dtype("int64"): 2}
_TEXT_TAG = 3
META_KEY = "__meta__"


def _encode_record(name: str, value) -> bytes:
    raw_name = name.encode("utf-8")
    head = struct.pack("<I", len(raw_name)) + raw_name
    if isinstance(value, (bytes, str)):
        body = value.encode("utf-8") if isinstance(value, str) else value
        return head + struct.pack("<BIQ", _TEXT_TAG, 1, len(body)) + body
    arr = np.asarray(value)
    if arr.dtype.kind in "iu":
        arr = arr.astype(np.int64)
    tag = _TAGS.get(arr.dtype)
    if tag is None:
        raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    body = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
    return head + struct.pack("<BI", tag, arr.ndim) + dims + body


def save_checkpoint(path: Union[str, Path], arrays: Dict[str, np.ndarray], meta: dict = None) -> None:
    records = [_encode_record(name, arr) for name, arr in arrays.items()]
    if meta is not None:
        records.append(_encode_record(META_KEY, json.dumps(meta, sort_keys=True)))
    payload = b"".join(records)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(records), len(payload)))
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, count, payload_len = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if len(blob) - _HEADER.size != payload_len:
        raise CheckpointError(
            f"{path}: payload is {len(blob) - _HEADER.size} bytes, header declares {payload_len}"
        )
    pos = _HEADER.size
    arrays: Dict[str, np.ndarray] = {}
    meta: dict = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            tag, ndim = struct.unpack_from("<BI", blob, pos)
            pos += 5
            dims = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            if tag == _TEXT_TAG:
                text = blob[pos : pos + dims[0]].decode("utf-8")
                pos += dims[0]
                if name == META_KEY:
                    meta = json.loads(text)
                continue
            dtype = _DTYPES.get(tag)
            if dtype is None:
                raise CheckpointError(f"{path}: record {name!r} has unknown dtype tag {tag}")
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(blob):
                raise CheckpointError(f"{path}: record {name!r} runs past end of file")
            arrays[name] = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize,
                                         offset=pos).reshape(dims).astype(dtype.newbyteorder("="))
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated record table") from exc
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes after {count} records")
    return arrays, meta
