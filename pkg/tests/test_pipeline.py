import dataclasses
import json
import zipfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dipss.checkpoint import load_checkpoint, params_equal, read_checkpoint, save_checkpoint
from dipss.embedding import EmbedTrainConfig, encode, load_store, save_store
from dipss.exceptions import CorruptCheckpoint, EmptyStore, InvalidConfig, TooFewCases
from dipss.pipeline import (
    ExperimentConfig,
    SyntheticCohort,
    audit_plan,
    config_from_dict,
    load_config,
    paired_reference,
    plan_folds,
    prepare_query,
    query_cbir,
    read_manifest,
    run_experiment,
    synthetic_cases,
)
from dipss.phantom import STOCK_PROFILES, render_case
from dipss.pss import PssTrainConfig
from dipss.volume import CaseRecord, write_volume

ANCHORS = ("SYNTH_HEALTHY_SI", "SYNTH_DISEASED_SI")


def tiny_config(**changes):
    cfg = ExperimentConfig(
        synthetic=SyntheticCohort(counts={"synthA": 10, "synthB": 10}, dims=(16, 16, 24), seed=3),
        n_folds=2,
        anchors=ANCHORS,
        pss=PssTrainConfig(n_iterations=4, base_channels=4, n_residual_blocks=1, disc_channels=4, batch_size=2),
        embed=EmbedTrainConfig(epochs=2, channels=(4, 8), batch_size=4),
        cluster_knn=3,
        seed=5,
    )
    return dataclasses.replace(cfg, **changes)


def _rec(cid, label="CN", subject=None, vendor="SI", dataset="ADNI"):
    return CaseRecord(cid, subject or cid, dataset, vendor, label)


# ---------------------------------------------------------------- fold plans

def test_plan_ten_cases_five_folds():
    recs = [_rec(f"c{i}") for i in range(10)]
    plan = plan_folds(recs, 5, seed=0)
    for k in range(5):
        assert len(plan.test_ids(k)) == 2 and len(plan.train_ids(k)) == 8
    assert audit_plan(plan, recs) == []


def test_plan_pd_is_test_only():
    recs = [_rec(f"cn{i}") for i in range(6)] + [_rec(f"ad{i}", "AD") for i in range(5)]
    recs += [_rec(f"pd{i}", "PD", vendor="UNKNOWN", dataset="PPMI") for i in range(3)]
    plan = plan_folds(recs, 5, seed=1)
    pd = {f"pd{i}" for i in range(3)}
    for k in range(5):
        assert pd <= set(plan.test_ids(k)) and not pd & set(plan.train_ids(k))
    assert audit_plan(plan, recs) == []


@settings(max_examples=25)
@given(st.lists(st.integers(1, 3), min_size=6, max_size=14), st.integers(2, 5), st.integers(0, 99))
def test_plan_is_subject_level_partition(visits, k, seed):
    recs = []
    for s, n in enumerate(visits):
        label = "AD" if s % 2 else "CN"
        recs += [_rec(f"s{s}v{v}", label, subject=f"s{s}") for v in range(n)]
    cats = {"CN": sum(n for s, n in enumerate(visits) if s % 2 == 0), "AD": sum(n for s, n in enumerate(visits) if s % 2)}
    if min(cats.values()) < k:
        with pytest.raises(TooFewCases):
            plan_folds(recs, k, seed)
        return
    plan = plan_folds(recs, k, seed)
    tests = [set(plan.test_ids(j)) for j in range(k)]
    assert set().union(*tests) == {r.case_id for r in recs}
    assert sum(map(len, tests)) == len(recs)
    assert audit_plan(plan, recs) == []


def test_audit_detects_leak():
    recs = [_rec(f"c{i}") for i in range(10)]
    plan = plan_folds(recs, 5)
    plan.train[0].append(plan.test[0][0])
    assert audit_plan(plan, recs)


def test_too_few_cases():
    with pytest.raises(TooFewCases):
        plan_folds([_rec(f"c{i}") for i in range(4)], 5)


# ---------------------------------------------------------------- configs

def test_config_validation(tmp_path, monkeypatch):
    with pytest.raises(InvalidConfig):
        ExperimentConfig(n_folds=1, synthetic=SyntheticCohort())
    with pytest.raises(InvalidConfig):
        ExperimentConfig()
    with pytest.raises(InvalidConfig):
        config_from_dict({"synthetic": {}, "pss": {"n_iterations": 3, "bogus": 1}})
    p = tmp_path / "c.yaml"
    p.write_text("synthetic: {counts: {synthA: 4}}\nembed: {channels: [4, 8]}\nmanifests: [m.csv]\n")
    cfg = load_config(p)
    assert cfg.embed.channels == (4, 8) and cfg.manifests == [str(tmp_path / "m.csv")]
    monkeypatch.setenv("DIPSS_DATA_ROOT", "/data/root")
    assert load_config(p).manifests == ["/data/root/m.csv"]
    p.write_text("- just\n- a list\n")
    with pytest.raises(InvalidConfig):
        load_config(p)


def test_baseline_and_pss_differ_only_in_stage_two():
    a, b = tiny_config(use_pss=False), tiny_config(use_pss=True)
    da, db = a.to_dict(), b.to_dict()
    assert {k for k in da if da[k] != db[k]} == {"use_pss"}
    assert a.stage_hash("data") == b.stage_hash("data")
    assert a.stage_hash("pss") != b.stage_hash("pss")


def test_manifest_reading(tmp_path):
    v, r = render_case(1, STOCK_PROFILES["synthA"], dims=(8, 8, 12), case_id="m1")
    write_volume(v, tmp_path / "vols" / "m1.vol", r)
    (tmp_path / "man.csv").write_text("path,label,case_id\nvols/m1.vol,SYNTH_DISEASED,renamed\n")
    [(vol, rec)] = read_manifest(tmp_path / "man.csv")
    assert np.array_equal(vol.voxels, v.voxels.astype(np.float32)) and rec.case_id == "renamed" and rec.label.value == "SYNTH_DISEASED"


def test_paired_reference_reuses_anatomy():
    cohort = SyntheticCohort(counts={"synthA": 4, "synthB": 4}, dims=(12, 12, 16), seed=2)
    cases = {r.case_id: v for v, r in synthetic_cases(cohort)}
    assert paired_reference("synthB-003", cohort) == cases["synthB-003"]
    a = paired_reference("synthA-001", cohort)
    assert a.brain_mask().sum() == cases["synthA-001"].brain_mask().sum()


# ---------------------------------------------------------------- checkpoints

@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    bundle = run_experiment(tiny_config(output_root=str(root)))
    return root, bundle


def test_checkpoint_round_trip(experiment, tmp_path):
    root, _ = experiment
    for name in ("pss.ckpt", "embed.ckpt"):
        p = load_checkpoint(root / "fold_0" / name)
        out = save_checkpoint(p, tmp_path / name, stage="x", fold=0)
        q = load_checkpoint(out)
        assert params_equal(p, q)
        meta, _ = read_checkpoint(out)
        assert meta["stage"] == "x" and meta["fold"] == 0
    assert load_checkpoint(root / "fold_0" / "pss.ckpt").metadata["stage_hash"]


def test_checkpoint_corruption(experiment, tmp_path):
    root, _ = experiment
    raw = (root / "fold_1" / "embed.ckpt").read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "trunc.ckpt")
    # same archive with one array altered fails the content hash
    src = zipfile.ZipFile(root / "fold_1" / "embed.ckpt")
    with zipfile.ZipFile(tmp_path / "edit.ckpt", "w") as zf:
        for item in src.namelist():
            data = src.read(item)
            if item == "arrays/0.npy":
                data = data[:-1] + bytes([data[-1] ^ 1])
            zf.writestr(item, data)
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "edit.ckpt")


# ---------------------------------------------------------------- experiment

def test_experiment_bundle_is_consistent(experiment):
    root, b = experiment
    n_cases = 20
    assert sum(map(sum, b.diagnostic.confusion)) == n_cases
    assert b.leakage == [] and b.harmonization is not None
    for f in b.folds:
        test = set(b.plan.test_ids(f.fold))
        assert not test & set(f.pss_case_ids) and not test & set(f.embed_case_ids)
        assert {e.case_id for e in f.embeddings} == test
    assert b.distance.centroid_distance(*ANCHORS) == pytest.approx(1.0)
    assert json.loads((root / "report.json").read_text())["diagnostic"]["confusion"] == [list(r) for r in b.diagnostic.confusion]


def test_experiment_bitwise_reproducible(experiment):
    _, first = experiment
    second = run_experiment(tiny_config())
    assert json.dumps(second.to_dict(), default=str) == json.dumps(first.to_dict() | {"config": second.config}, default=str)
    for f, g in zip(first.folds, second.folds):
        for e, h in zip(f.embeddings, g.embeddings):
            assert np.array_equal(e.vector, h.vector)


def test_resume_uses_checkpoints(experiment):
    root, first = experiment
    seen = []
    again = run_experiment(tiny_config(output_root=str(root)), progress=lambda k, s: seen.append((k, s)))
    assert again.to_dict() == first.to_dict()
    assert seen == [(0, "pss"), (0, "embed"), (1, "pss"), (1, "embed")]


# ---------------------------------------------------------------- CBIR

def test_cbir_queries(experiment, tmp_path):
    root, _ = experiment
    params = load_checkpoint(root / "fold_0" / "embed.ckpt")
    store = load_store(root / "fold_0" / "embeddings.jsonl")
    cohort = tiny_config().synthetic
    cases = {r.case_id: v for v, r in synthetic_cases(cohort)}
    target = next(e for e in store if e.case_id.startswith("synthB"))
    hits = query_cbir(cases[target.case_id], store, params, k=3, pss=load_checkpoint(root / "fold_0" / "pss.ckpt"))
    assert hits[0].case_id == target.case_id and hits[0].distance < 1e-4
    everything = query_cbir(cases[target.case_id], root / "fold_0" / "embeddings.jsonl", params, k=100)
    assert len(everything) == len(store)
    d = [h.distance for h in everything]
    assert d == sorted(d) and [h.rank for h in everything] == list(range(1, len(store) + 1))
    with pytest.raises(EmptyStore):
        query_cbir(cases[target.case_id], [], params)


def test_store_round_trip_bitwise(experiment, tmp_path):
    root, _ = experiment
    store = load_store(root / "fold_1" / "embeddings.jsonl")
    save_store(store, tmp_path / "s.jsonl")
    again = load_store(tmp_path / "s.jsonl")
    assert all(np.array_equal(a.vector, b.vector) and a.record == b.record for a, b in zip(store, again))


def test_prepare_query_halves_when_needed(experiment):
    root, _ = experiment
    params = load_checkpoint(root / "fold_0" / "embed.ckpt")
    v, _ = render_case(9, STOCK_PROFILES["synthB"], dims=(16, 16, 24))
    q = prepare_query(v, params)
    assert q.dims == params.input_dims
    assert encode(q, params).shape == (params.embedding_dim,)
