"""Volume and case data model, file I/O, and slice decomposition.

Arrays are indexed (sagittal, axial, coronal) by default; coronal is the
slicing axis used by the harmonizer. The internal raw format is a
contiguous little-endian float32 payload (``<name>.vol``, C order, slowest
axis first) next to a JSON sidecar (``<name>.json``).
"""
from __future__ import annotations

import enum
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import (
    DimensionMismatch,
    DuplicateCaseId,
    MissingSlices,
    UnreadableFile,
    UnsupportedFormat,
)

logger = logging.getLogger(__name__)

DEFAULT_AXIS_ORDER = ("sagittal", "axial", "coronal")
FULL_DIMS = (160, 160, 192)
EMBED_DIMS = (80, 80, 96)


class Dataset(str, enum.Enum):
    ADNI = "ADNI"
    PPMI = "PPMI"
    SYNTH = "SYNTH"


class Vendor(str, enum.Enum):
    SI = "SI"
    GE = "GE"
    PH = "PH"
    UNKNOWN = "UNKNOWN"


class Label(str, enum.Enum):
    CN = "CN"
    AD = "AD"
    Control = "Control"
    PD = "PD"
    SYNTH_HEALTHY = "SYNTH_HEALTHY"
    SYNTH_DISEASED = "SYNTH_DISEASED"


HEALTHY_LABELS = frozenset({Label.CN, Label.Control, Label.SYNTH_HEALTHY})
DISEASE_LABELS = frozenset({Label.AD, Label.SYNTH_DISEASED})
TEST_ONLY_LABELS = frozenset({Label.PD})


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D intensity array with an optional boolean brain mask.

    Voxels are stored as float32 (display units, nominally [0, 255]) and are
    read-only once constructed.
    """

    voxels: np.ndarray
    mask: Optional[np.ndarray] = None
    axis_order: tuple = DEFAULT_AXIS_ORDER

    def __post_init__(self):
        voxels = np.asarray(self.voxels)
        if voxels.ndim != 3:
            raise DimensionMismatch(f"volume must be 3D, got shape {voxels.shape}")
        if not np.issubdtype(voxels.dtype, np.number):
            raise DimensionMismatch(f"non-numeric voxel dtype {voxels.dtype}")
        voxels = voxels.astype(np.float32, copy=False)
        if not np.all(np.isfinite(voxels)):
            raise DimensionMismatch("volume contains non-finite intensities")
        object.__setattr__(self, "voxels", _freeze(voxels))
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != voxels.shape:
                raise DimensionMismatch(
                    f"mask shape {mask.shape} != voxel shape {voxels.shape}"
                )
            object.__setattr__(self, "mask", _freeze(mask))
        order = tuple(self.axis_order)
        if sorted(order) != sorted(DEFAULT_AXIS_ORDER):
            raise DimensionMismatch(f"bad axis order {order}")
        object.__setattr__(self, "axis_order", order)

    @property
    def dims(self) -> tuple:
        return tuple(int(d) for d in self.voxels.shape)

    def brain_mask(self) -> np.ndarray:
        """Explicit mask if present, otherwise the nonzero support."""
        if self.mask is not None:
            return self.mask
        return self.voxels > 0

    def in_display_range(self) -> bool:
        return bool(self.voxels.min() >= 0.0 and self.voxels.max() <= 255.0)

    def axis_index(self, axis: str) -> int:
        try:
            return self.axis_order.index(axis)
        except ValueError:
            raise DimensionMismatch(f"unknown axis {axis!r}") from None

    def with_voxels(self, voxels: np.ndarray, keep_mask: bool = True) -> "Volume":
        return Volume(voxels, self.mask if keep_mask else None, self.axis_order)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        if self.axis_order != other.axis_order or self.dims != other.dims:
            return False
        if not np.array_equal(self.voxels, other.voxels):
            return False
        if (self.mask is None) != (other.mask is None):
            return False
        return self.mask is None or np.array_equal(self.mask, other.mask)

    __hash__ = None


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    subject_id: str = ""
    dataset: Dataset = Dataset.SYNTH
    vendor: Vendor = Vendor.UNKNOWN
    label: Label = Label.SYNTH_HEALTHY
    fold: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "dataset", Dataset(self.dataset))
        object.__setattr__(self, "vendor", Vendor(self.vendor))
        object.__setattr__(self, "label", Label(self.label))
        if not self.subject_id:
            object.__setattr__(self, "subject_id", self.case_id)
        if self.dataset is Dataset.PPMI and self.vendor is not Vendor.UNKNOWN:
            raise ValueError("PPMI cases carry no vendor information")
        if self.fold is not None:
            object.__setattr__(self, "fold", int(self.fold))

    @property
    def category(self) -> str:
        """Category key such as ``CN_SI``; PPMI labels stand alone."""
        if self.vendor is Vendor.UNKNOWN:
            return self.label.value
        return f"{self.label.value}_{self.vendor.value}"

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "subject_id": self.subject_id,
            "dataset": self.dataset.value,
            "vendor": self.vendor.value,
            "label": self.label.value,
            "fold": self.fold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseRecord":
        fold = d.get("fold")
        if fold in ("", None):
            fold = None
        return cls(
            case_id=str(d["case_id"]),
            subject_id=str(d.get("subject_id") or d["case_id"]),
            dataset=d.get("dataset") or Dataset.SYNTH,
            vendor=d.get("vendor") or Vendor.UNKNOWN,
            label=d.get("label") or Label.SYNTH_HEALTHY,
            fold=fold,
        )


def index_records(records: Iterable[CaseRecord]) -> dict:
    """Map case_id -> record, rejecting duplicates."""
    out = {}
    for r in records:
        if r.case_id in out:
            raise DuplicateCaseId(f"duplicate case_id {r.case_id!r}")
        out[r.case_id] = r
    return out


@dataclass(frozen=True, eq=False)
class SliceStack:
    slices: tuple
    axis: str
    positions: tuple
    parent_dims: tuple
    axis_order: tuple = DEFAULT_AXIS_ORDER
    mask: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self):
        return len(self.slices)

    def as_array(self) -> np.ndarray:
        return np.stack(self.slices, axis=0)


def extract_slices(v: Volume, axis: str = "coronal") -> SliceStack:
    ax = v.axis_index(axis)
    moved = np.moveaxis(v.voxels, ax, 0)
    slices = tuple(_freeze(s) for s in moved)
    return SliceStack(
        slices=slices,
        axis=axis,
        positions=tuple(range(len(slices))),
        parent_dims=v.dims,
        axis_order=v.axis_order,
        mask=v.mask,
    )


def reassemble(s: SliceStack) -> Volume:
    ax = s.axis_order.index(s.axis)
    n = s.parent_dims[ax]
    order = sorted(range(len(s.positions)), key=lambda i: s.positions[i])
    positions = [s.positions[i] for i in order]
    if positions != list(range(n)):
        missing = sorted(set(range(n)) - set(positions))
        raise MissingSlices(
            f"slice positions do not cover 0..{n - 1} exactly (missing {missing[:10]})"
        )
    stacked = np.stack([np.asarray(s.slices[i]) for i in order], axis=0)
    voxels = np.moveaxis(stacked, 0, ax)
    if voxels.shape != tuple(s.parent_dims):
        raise DimensionMismatch(f"slices reassemble to {voxels.shape}, expected {s.parent_dims}")
    return Volume(voxels, s.mask, s.axis_order)


# --- file I/O ---------------------------------------------------------------

_RAW_DTYPES = {"float32": "f4", "float64": "f8", "uint8": "u1", "int16": "i2", "uint16": "u2"}


def _detect_format(path: Path) -> str:
    name = path.name.lower()
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        return "nifti1"
    if name.endswith(".vol") or name.endswith(".json"):
        return "raw"
    raise UnsupportedFormat(f"cannot infer format of {path}")


def ingest_volume(path, format: Optional[str] = None, sidecar: Optional[dict] = None):
    """Read a volume file and its case metadata.

    ``format`` is ``"raw"`` (``.vol`` + ``.json`` sidecar) or ``"nifti1"``;
    inferred from the extension when omitted. For NIfTI files an optional
    ``sidecar`` dict (or a neighbouring ``.json``) supplies case metadata.
    Intensities are never rescaled; out-of-range values are logged.
    """
    path = Path(path)
    fmt = format or _detect_format(path)
    if fmt in ("raw", "raw+sidecar"):
        vol, meta = _read_raw(path)
    elif fmt == "nifti1":
        vol, meta = _read_nifti(path, sidecar)
    else:
        raise UnsupportedFormat(f"unsupported format {fmt!r}")

    meta.setdefault("case_id", _stem(path))
    record = CaseRecord.from_dict(meta)
    if not vol.in_display_range():
        logger.warning(
            "%s: intensities outside [0, 255] (min %.3g, max %.3g)",
            record.case_id, float(vol.voxels.min()), float(vol.voxels.max()),
        )
    return vol, record


def _stem(path: Path) -> str:
    name = path.name
    for ext in (".nii.gz", ".nii", ".vol", ".json"):
        if name.endswith(ext):
            return name[: -len(ext)]
    return path.stem


def _read_raw(path: Path):
    base = path.with_name(_stem(path))
    vol_path = base.with_suffix(".vol")
    json_path = base.with_suffix(".json")
    try:
        meta = json.loads(json_path.read_text())
        payload = vol_path.read_bytes()
    except (OSError, ValueError) as exc:
        raise UnreadableFile(f"cannot read {base}: {exc}") from exc
    try:
        dims = tuple(int(d) for d in meta["dims"])
    except (KeyError, TypeError, ValueError) as exc:
        raise UnreadableFile(f"{json_path}: sidecar lacks valid 'dims'") from exc
    if len(dims) != 3 or min(dims) <= 0:
        raise DimensionMismatch(f"{json_path}: dims must be three positive integers")
    dtype_name = meta.get("dtype", "float32")
    if dtype_name not in _RAW_DTYPES:
        raise UnsupportedFormat(f"unsupported element type {dtype_name!r}")
    endian = "<" if meta.get("byte_order", "little") == "little" else ">"
    dtype = np.dtype(endian + _RAW_DTYPES[dtype_name])
    expected = int(np.prod(dims))
    if len(payload) != expected * dtype.itemsize:
        raise DimensionMismatch(
            f"{vol_path}: payload holds {len(payload) // dtype.itemsize} elements, "
            f"sidecar dims {list(dims)} need {expected}"
        )
    voxels = np.frombuffer(payload, dtype=dtype).reshape(dims)
    axis_order = tuple(meta.get("axis_order", DEFAULT_AXIS_ORDER))
    mask = None
    mask_path = base.with_suffix(".mask")
    if mask_path.exists():
        bits = mask_path.read_bytes()
        if len(bits) != expected:
            raise DimensionMismatch(f"{mask_path}: mask holds {len(bits)} elements, need {expected}")
        mask = np.frombuffer(bits, dtype=np.uint8).reshape(dims).astype(bool)
    return Volume(voxels.astype(np.float32), mask=mask, axis_order=axis_order), dict(meta)


def _read_nifti(path: Path, sidecar: Optional[dict]):
    import nibabel as nib

    try:
        img = nib.load(str(path))
        data = np.asanyarray(img.dataobj)
    except Exception as exc:  # nibabel raises a zoo of types
        raise UnreadableFile(f"cannot read {path}: {exc}") from exc
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise DimensionMismatch(f"{path}: expected a 3D image, got {data.shape}")
    if tuple(img.header.get_data_shape()[:3]) != data.shape:
        raise DimensionMismatch(f"{path}: header dims disagree with payload")
    meta = {}
    json_path = path.with_name(_stem(path) + ".json")
    if sidecar is not None:
        meta = dict(sidecar)
    elif json_path.exists():
        meta = json.loads(json_path.read_text())
    axis_order = tuple(meta.get("axis_order", DEFAULT_AXIS_ORDER))
    return Volume(data.astype(np.float32), axis_order=axis_order), meta


def write_volume(v: Volume, path, record: Optional[CaseRecord] = None) -> Path:
    """Write ``v`` in the raw format; returns the ``.vol`` path.

    A mask, when present, goes to a ``.mask`` file of uint8 flags.
    """
    path = Path(path)
    base = path.with_name(_stem(path))
    base.parent.mkdir(parents=True, exist_ok=True)
    vol_path = base.with_suffix(".vol")
    meta = {"dims": list(v.dims), "axis_order": list(v.axis_order),
            "dtype": "float32", "byte_order": "little"}
    if record is not None:
        meta.update(record.to_dict())
    else:
        meta["case_id"] = base.name
    payload = np.ascontiguousarray(v.voxels, dtype="<f4").tobytes()
    tmp = vol_path.with_suffix(".vol.tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, vol_path)
    mask_path = base.with_suffix(".mask")
    if v.mask is not None:
        mask_path.write_bytes(np.ascontiguousarray(v.mask, dtype=np.uint8).tobytes())
    elif mask_path.exists():
        mask_path.unlink()
    base.with_suffix(".json").write_text(json.dumps(meta, indent=1))
    return vol_path


def read_volume_dir(directory) -> list:
    """All ``.vol`` / ``.nii`` / ``.nii.gz`` volumes in a directory, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise UnreadableFile(f"{directory} is not a directory")
    files = sorted(p for p in directory.iterdir()
                   if p.name.endswith((".vol", ".nii", ".nii.gz")))
    return [ingest_volume(p) for p in files]


def write_nifti(v: Volume, path) -> Path:
    import nibabel as nib

    path = Path(path)
    nib.save(nib.Nifti1Image(np.asarray(v.voxels, dtype=np.float32), np.eye(4)), str(path))
    return path


def stack_voxels(volumes: Sequence[Volume]) -> np.ndarray:
    dims = {v.dims for v in volumes}
    if len(dims) != 1:
        raise DimensionMismatch(f"volumes have mixed dims {sorted(dims)}")
    return np.stack([v.voxels for v in volumes], axis=0)


def relabel(record: CaseRecord, **changes) -> CaseRecord:
    return replace(record, **changes)

