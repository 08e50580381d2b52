"""Flat parameter archive: dotted names -> little-endian float32 arrays, plus a JSON header.

The archive is an uncompressed zip of ``.npy`` members with fixed timestamps, so
identical contents produce identical bytes. Writes go to a temp file and are
renamed into place.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import zipfile
from pathlib import Path

import numpy as np

HEADER = "__header__.json"
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def save_archive(path, arrays: dict[str, np.ndarray], header: dict) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo(HEADER, date_time=_EPOCH)
        zf.writestr(info, json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8"))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(np.asarray(arrays[name], dtype="<f4"))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_EPOCH), buf.getvalue())
    os.replace(tmp, path)


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with zipfile.ZipFile(path, "r") as zf:
            names = zf.namelist()
            if HEADER not in names:
                raise CheckpointError(f"{path}: missing header")
            header = json.loads(zf.read(HEADER).decode("utf-8"))
            arrays = {}
            for name in names:
                if name == HEADER:
                    continue
                if not name.endswith(".npy"):
                    raise CheckpointError(f"{path}: unexpected member {name!r}")
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    except (zipfile.BadZipFile, OSError, json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    return arrays, header


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
