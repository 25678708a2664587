"""JSON-lines embedding store: one record per case with its vector."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..exceptions import DataError, EmptyStore
from ..volume import CaseRecord, index_records
from .inference import Embedding


def save_store(embeddings, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index_records(e.record for e in embeddings)
    with path.open("w") as fh:
        for e in embeddings:
            row = e.record.to_dict()
            # float() of a float64 and json's repr-based float output round-trip exactly
            row["vector"] = [float(x) for x in e.vector]
            fh.write(json.dumps(row) + "\n")
    return path


def load_store(path, allow_empty=False) -> list:
    path = Path(path)
    out = []
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read embedding store {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            vec = np.array(row.pop("vector"), dtype=np.float64)
            out.append(Embedding(vec, CaseRecord.from_dict(row)))
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{path}:{n}: malformed store record ({exc})") from exc
    index_records(e.record for e in out)
    if not out and not allow_empty:
        raise EmptyStore(f"embedding store {path} has no records")
    return out


def store_matrix(embeddings) -> np.ndarray:
    if not embeddings:
        raise EmptyStore("no embeddings")
    return np.stack([e.vector for e in embeddings])
