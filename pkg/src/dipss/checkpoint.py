"""Checkpoint archives shared by the translation and embedding models.

Layout (zip, stored uncompressed):

* ``metadata.json``: ``{"format": 1, "kind": "pss"|"embed", "stage", "fold",
  "header": {...}, "arrays": [names], "sha256": hex}``
* ``arrays/<index>.npy``: one file per parameter array, in ``arrays`` order.

``sha256`` covers the header document and every array's name, dtype, shape
and raw bytes, so any change in content (or a truncated archive) is caught
on load.
"""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .embedding.training import EmbedParams
from .exceptions import CorruptCheckpoint
from .pss.training import PssParams

FORMAT_VERSION = 1


def _digest(header: dict, arrays: dict) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(header, sort_keys=True).encode())
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _split(params):
    if isinstance(params, PssParams):
        return "pss", {**params.metadata, "loss_log": params.loss_log}, params.flat()
    if isinstance(params, EmbedParams):
        return "embed", params.header(), params.flat()
    raise TypeError(f"cannot checkpoint {type(params).__name__}")


def save_checkpoint(params, path, stage: str | None = None, fold: int | None = None) -> Path:
    kind, header, arrays = _split(params)
    header = json.loads(json.dumps(header))  # normalize tuples to lists so the hash is stable on reload
    names = sorted(arrays)
    meta = {
        "format": FORMAT_VERSION,
        "kind": kind,
        "stage": stage,
        "fold": fold,
        "header": header,
        "arrays": names,
        "sha256": _digest(header, arrays),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr("metadata.json", json.dumps(meta, sort_keys=True))
        for i, name in enumerate(names):
            buf = io.BytesIO()
            np.save(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(f"arrays/{i}.npy", buf.getvalue())
    tmp.replace(path)
    return path


def read_checkpoint(path):
    """Return ``(metadata, arrays)`` after verifying the content hash."""
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("metadata.json"))
            arrays = {}
            for i, name in enumerate(meta["arrays"]):
                arrays[name] = np.load(io.BytesIO(zf.read(f"arrays/{i}.npy")), allow_pickle=False)
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError, OSError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable checkpoint ({exc})") from exc
    if _digest(meta["header"], arrays) != meta.get("sha256"):
        raise CorruptCheckpoint(f"{path}: content hash mismatch")
    return meta, arrays


def load_checkpoint(path):
    """Load a :class:`PssParams` or :class:`EmbedParams` written by :func:`save_checkpoint`."""
    meta, arrays = read_checkpoint(path)
    if meta["kind"] == "pss":
        return PssParams.from_flat(arrays, meta["header"])
    if meta["kind"] == "embed":
        return EmbedParams.from_flat(arrays, meta["header"])
    raise CorruptCheckpoint(f"{path}: unknown checkpoint kind {meta['kind']!r}")


def params_equal(a, b) -> bool:
    """Bitwise equality of two parameter containers' arrays."""
    fa, fb = a.flat(), b.flat()
    return fa.keys() == fb.keys() and all(
        fa[k].dtype == fb[k].dtype and np.array_equal(fa[k], fb[k]) for k in fa)
