import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dipss.exceptions import DimensionMismatch, DuplicateCaseId, MissingSlices, UnreadableFile, UnsupportedFormat
from dipss.volume import (
    CaseRecord,
    Dataset,
    Label,
    SliceStack,
    Vendor,
    Volume,
    extract_slices,
    index_records,
    ingest_volume,
    read_volume_dir,
    reassemble,
    write_nifti,
    write_volume,
)

small_dims = st.tuples(*(st.integers(1, 5),) * 3)
volumes = small_dims.flatmap(
    lambda d: arrays(np.float32, d, elements=st.floats(0, 255, width=32))).map(Volume)


def _raw(tmp_path, values, dims, **meta):
    (tmp_path / "c.vol").write_bytes(np.asarray(values, dtype="<f4").tobytes())
    (tmp_path / "c.json").write_text(json.dumps({"dims": dims, **meta}))
    return tmp_path / "c.vol"


def test_raw_ingest_layout(tmp_path):
    p = _raw(tmp_path, np.arange(64), [4, 4, 4], case_id="c", vendor="GE", label="CN", dataset="ADNI")
    v, rec = ingest_volume(p)
    assert v.voxels[0, 0, 0] == 0 and v.voxels[3, 3, 3] == 63
    assert v.voxels[0, 0, 1] == 1  # last axis varies fastest
    assert rec.category == "CN_GE"


def test_raw_size_mismatch(tmp_path):
    p = _raw(tmp_path, np.arange(60), [4, 4, 4])
    with pytest.raises(DimensionMismatch):
        ingest_volume(p)


def test_missing_and_unknown_files(tmp_path):
    with pytest.raises(UnreadableFile):
        ingest_volume(tmp_path / "nothing.vol")
    (tmp_path / "x.txt").write_text("hi")
    with pytest.raises(UnsupportedFormat):
        ingest_volume(tmp_path / "x.txt")


def test_defaults_when_metadata_missing(tmp_path):
    _, rec = ingest_volume(_raw(tmp_path, np.zeros(8), [2, 2, 2]))
    assert rec.case_id == "c"
    assert rec.dataset is Dataset.SYNTH and rec.vendor is Vendor.UNKNOWN


def test_out_of_range_is_reported_not_clamped(tmp_path, caplog):
    v, _ = ingest_volume(_raw(tmp_path, [300.0] * 8, [2, 2, 2]))
    assert v.voxels.max() == 300.0
    assert "outside" in caplog.text


@given(volumes)
def test_write_ingest_roundtrip(tmp_path_factory, v):
    d = tmp_path_factory.mktemp("rt")
    rec = CaseRecord("case", vendor="SI", label="AD", dataset="ADNI", fold=2)
    v2, rec2 = ingest_volume(write_volume(v, d / "case.vol", rec))
    assert v2 == v
    assert rec2 == rec


def test_mask_roundtrip_and_dir_listing(tmp_path, rng):
    x = rng.uniform(0, 255, (4, 6, 8)).astype(np.float32)
    m = x > 100
    write_volume(Volume(x, m), tmp_path / "b.vol", CaseRecord("b"))
    write_volume(Volume(x), tmp_path / "a.vol", CaseRecord("a"))
    cases = read_volume_dir(tmp_path)
    assert [r.case_id for _, r in cases] == ["a", "b"]
    assert cases[0][0].mask is None
    assert np.array_equal(cases[1][0].mask, m)


def test_nifti_roundtrip(tmp_path, rng):
    x = rng.uniform(0, 255, (4, 5, 6)).astype(np.float32)
    p = write_nifti(Volume(x), tmp_path / "n.nii.gz")
    v, rec = ingest_volume(p)
    assert np.array_equal(v.voxels, x)
    assert rec.case_id == "n"


def test_volume_invariants():
    with pytest.raises(DimensionMismatch):
        Volume(np.zeros((2, 2)))
    with pytest.raises(DimensionMismatch):
        Volume(np.zeros((2, 2, 2)), mask=np.zeros((2, 2, 3), bool))
    with pytest.raises(DimensionMismatch):
        Volume(np.full((2, 2, 2), np.nan))
    v = Volume(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        v.voxels[0, 0, 0] = 1


def test_case_record_rules():
    with pytest.raises(ValueError):
        CaseRecord("p", dataset="PPMI", vendor="SI", label="PD")
    assert CaseRecord("p", dataset="PPMI", label="PD").category == "PD"
    assert CaseRecord("x", vendor="SI", label=Label.CN).category == "CN_SI"
    with pytest.raises(DuplicateCaseId):
        index_records([CaseRecord("a"), CaseRecord("a")])


def test_extract_slices_counts_and_values():
    v = Volume(np.arange(8, dtype=np.float32).reshape(2, 2, 2))
    s = extract_slices(v, "coronal")
    assert len(s) == 2 and s.positions == (0, 1)
    assert np.array_equal(s.slices[1], v.voxels[:, :, 1])
    big = Volume(np.zeros((16, 16, 24)))
    assert len(extract_slices(big)) == 24
    assert extract_slices(big).slices[0].shape == (16, 16)


@given(volumes, st.sampled_from(["sagittal", "axial", "coronal"]))
def test_slices_roundtrip_every_axis(v, axis):
    assert reassemble(extract_slices(v, axis)) == v


@given(volumes, st.randoms(use_true_random=False))
def test_reassemble_canonicalizes_order(v, r):
    s = extract_slices(v)
    order = list(range(len(s)))
    r.shuffle(order)
    shuffled = SliceStack(tuple(s.slices[i] for i in order), s.axis, tuple(s.positions[i] for i in order),
                          s.parent_dims)
    assert reassemble(shuffled) == v


def test_missing_slice():
    s = extract_slices(Volume(np.zeros((2, 2, 6))))
    keep = [i for i in range(6) if i != 3]
    broken = SliceStack(tuple(s.slices[i] for i in keep), s.axis, tuple(keep), s.parent_dims)
    with pytest.raises(MissingSlices):
        reassemble(broken)
