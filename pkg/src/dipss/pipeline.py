"""Cross-validated experiment orchestration, fold planning and CBIR queries."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .checkpoint import load_checkpoint, save_checkpoint
from .embedding import EmbedParams, EmbedTrainConfig, Embedding, encode, encode_many, load_store, save_store
from .embedding.training import metric_class, train_embedding
from .evaluation import (
    HarmonizationReport,
    aggregate_folds,
    intensity_change_cdf,
    masked_image_metrics,
    align_clusters,
    clustering_scores,
    distance_report,
    spectral_cluster_full,
)
from .exceptions import DataError, DipssError, EmptyStore, InvalidConfig, TooFewCases
from .phantom import STOCK_PROFILES, render_case
from .preprocess import NormalizationConfig, downsample_half, normalize_intensity
from .pss import PssParams, PssTrainConfig, apply_pss, train_pss, volume_slices
from .volume import TEST_ONLY_LABELS, CaseRecord, Vendor, Volume, index_records, ingest_volume, relabel

logger = logging.getLogger(__name__)

DATA_ROOT_ENV = "DIPSS_DATA_ROOT"


# ---------------------------------------------------------------- configuration

@dataclass
class SyntheticCohort:
    """Phantom cohort used instead of manifests: counts per scanner profile."""

    counts: dict = field(default_factory=lambda: {"synthA": 60, "synthB": 60, "synthC": 30})
    diseased_fraction: float = 0.5
    dims: tuple = (32, 32, 48)
    subject_variation: float = 0.5
    severity: float = 1.0
    seed: int = 0


@dataclass
class ExperimentConfig:
    manifests: list = field(default_factory=list)
    synthetic: SyntheticCohort | None = None
    n_folds: int = 5
    use_pss: bool = True
    reference_vendor: str = "SI"  # domain X
    source_vendor: str = "GE"  # domain Y
    anchors: tuple = ("CN_SI", "AD_SI")
    healthy_groups: dict = field(default_factory=dict)
    embed_half_size: bool = True
    axis: str = "coronal"
    pss: PssTrainConfig = field(default_factory=PssTrainConfig)
    embed: EmbedTrainConfig = field(default_factory=EmbedTrainConfig)
    normalization: NormalizationConfig = field(default_factory=NormalizationConfig)
    seed: int = 0
    cluster_knn: int = 10
    output_root: str | None = None

    def __post_init__(self):
        if self.n_folds < 2:
            raise InvalidConfig("n_folds must be >= 2")
        self.anchors = tuple(self.anchors)
        if not self.manifests and self.synthetic is None:
            raise InvalidConfig("config needs manifests or a synthetic cohort")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def stage_hash(self, stage: str) -> str:
        """Hash of every setting a stage depends on (used to validate resumes)."""
        d = self.to_dict()
        keep = {"data": [d["manifests"], d["synthetic"], d["normalization"], d["n_folds"], d["seed"]]}
        if stage in ("pss", "embed", "eval"):
            keep["pss"] = [d["use_pss"], d["pss"], d["reference_vendor"], d["source_vendor"], d["axis"]]
        if stage in ("embed", "eval"):
            keep["embed"] = [d["embed"], d["embed_half_size"]]
        if stage == "eval":
            keep["eval"] = [d["anchors"], d["cluster_knn"], d["healthy_groups"]]
        return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]


_SECTIONS = {"pss": PssTrainConfig, "embed": EmbedTrainConfig, "normalization": NormalizationConfig,
             "synthetic": SyntheticCohort}


def _build(cls, data, where):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise InvalidConfig(f"unknown keys in {where}: {sorted(unknown)}")
    for k in ("channels", "dims", "gamma_bounds", "anchors"):
        if k in data and isinstance(data[k], list):
            data[k] = tuple(data[k])
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"{where}: {exc}") from exc


def config_from_dict(d: dict, base_dir: Path | None = None) -> ExperimentConfig:
    d = dict(d or {})
    for key, cls in _SECTIONS.items():
        if d.get(key) is not None:
            d[key] = _build(cls, dict(d[key]), key)
    if base_dir is not None:
        d["manifests"] = [str(resolve_path(m, base_dir)) for m in d.get("manifests", [])]
    return _build(ExperimentConfig, d, "config")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfig(f"config {path} must be a mapping")
    return config_from_dict(data, path.parent)


def resolve_path(p, base_dir: Path) -> Path:
    """Relative paths resolve against $DIPSS_DATA_ROOT if set, else ``base_dir``."""
    p = Path(p)
    if p.is_absolute():
        return p
    root = os.environ.get(DATA_ROOT_ENV)
    return Path(root) / p if root else Path(base_dir) / p


# ---------------------------------------------------------------- data loading

def synthetic_cases(cohort: SyntheticCohort) -> list:
    """Render the phantom cohort: ``(Volume, CaseRecord)`` pairs.

    Each case's phantom seed is recoverable from :func:`phantom_seed` so the
    same anatomy can be re-rendered under another profile.
    """
    out = []
    for p_index, (name, n) in enumerate(sorted(cohort.counts.items())):
        profile = STOCK_PROFILES[name]
        n_dis = int(round(n * cohort.diseased_fraction))
        for i in range(n):
            seed = phantom_seed(cohort.seed, p_index, i)
            severity = cohort.severity if i >= n - n_dis else 0.0
            out.append(render_case(seed, profile, cohort.subject_variation, severity, tuple(cohort.dims),
                                   case_id=f"{name}-{i:03d}"))
    return out


def phantom_seed(cohort_seed: int, profile_index: int, i: int) -> int:
    return cohort_seed * 1_000_003 + profile_index * 10_007 + i


def read_manifest(path) -> list:
    """Manifest: CSV or JSON-lines with a ``path`` column plus record fields."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if path.suffix in (".jsonl", ".json"):
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    else:
        rows = list(csv.DictReader(text.splitlines()))
    out = []
    for row in rows:
        if "path" not in row:
            raise DataError(f"{path}: manifest rows need a 'path' field")
        vol_path = resolve_path(row.pop("path"), path.parent)
        vol, rec = ingest_volume(vol_path)
        overrides = {k: val for k, val in row.items() if val not in ("", None)}
        if overrides:
            rec = CaseRecord.from_dict({**rec.to_dict(), **overrides})
        out.append((vol, rec))
    return out


def load_cases(cfg: ExperimentConfig) -> list:
    cases = []
    if cfg.synthetic is not None:
        cases += synthetic_cases(cfg.synthetic)
    for m in cfg.manifests:
        cases += read_manifest(m)
    index_records(r for _, r in cases)
    return cases


# ---------------------------------------------------------------- folds

@dataclass
class FoldPlan:
    n_folds: int
    test: list  # per fold: list of case_ids
    train: list
    categories: dict  # case_id -> category

    def test_ids(self, k):
        return list(self.test[k])

    def train_ids(self, k):
        return list(self.train[k])

    def by_category(self, k, split="test") -> dict:
        out = {}
        for cid in (self.test if split == "test" else self.train)[k]:
            out.setdefault(self.categories[cid], []).append(cid)
        return out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def plan_folds(records, n_folds: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified, subject-level K-fold split.

    Subjects are shuffled within each category and dealt round-robin across
    folds, continuing the deal across categories so fold sizes stay even.
    Test-only labels (PD) go to every fold's test list and no train list.
    """
    records = list(records)
    index_records(records)
    rng = np.random.default_rng(seed)
    subjects, subject_cat = {}, {}
    test_only = []
    for r in records:
        if r.label in TEST_ONLY_LABELS:
            test_only.append(r.case_id)
            continue
        subjects.setdefault(r.subject_id, []).append(r.case_id)
        subject_cat.setdefault(r.subject_id, r.category)
    by_cat = {}
    for s, cat in subject_cat.items():
        by_cat.setdefault(cat, []).append(s)
    fold_of = {}
    offset = 0
    for cat in sorted(by_cat):
        subs = sorted(by_cat[cat])
        n_cases = sum(len(subjects[s]) for s in subs)
        if n_cases < n_folds:
            raise TooFewCases(f"category {cat} has {n_cases} cases, need >= {n_folds}")
        for j, i in enumerate(rng.permutation(len(subs))):
            fold_of[subs[i]] = (offset + j) % n_folds
        offset += len(subs)
    test = [[] for _ in range(n_folds)]
    for r in records:
        if r.label not in TEST_ONLY_LABELS:
            test[fold_of[r.subject_id]].append(r.case_id)
    for k in range(n_folds):
        test[k] += test_only
    trainable = [r.case_id for r in records if r.label not in TEST_ONLY_LABELS]
    train = [[c for c in trainable if c not in set(test[k])] for k in range(n_folds)]
    return FoldPlan(n_folds, test, train, {r.case_id: r.category for r in records})


def audit_plan(plan: FoldPlan, records) -> list:
    """Violations of the partition rules (empty list when the plan is sound)."""
    recs = index_records(records)
    problems = []
    test_only = {c for c, r in recs.items() if r.label in TEST_ONLY_LABELS}
    seen = []
    for k in range(plan.n_folds):
        tr, te = set(plan.train[k]), set(plan.test[k])
        if tr & te:
            problems.append(f"fold {k}: train/test overlap {sorted(tr & te)[:3]}")
        if tr & test_only:
            problems.append(f"fold {k}: test-only cases in training")
        if not test_only <= te:
            problems.append(f"fold {k}: test-only cases missing from test list")
        if {recs[c].subject_id for c in tr} & {recs[c].subject_id for c in te - test_only}:
            problems.append(f"fold {k}: subject shared between train and test")
        seen += [c for c in te if c not in test_only]
    trainable = set(recs) - test_only
    if sorted(seen) != sorted(trainable):
        problems.append("test lists do not partition the trainable cases")
    return problems


# ---------------------------------------------------------------- experiment

@dataclass
class FoldResult:
    fold: int
    embeddings: list
    pss_case_ids: list
    embed_case_ids: list
    confusion: list
    pd_row: list | None
    cluster: dict
    stats: dict
    image_changes: list = field(default_factory=list)  # (category, ImageMetrics, CdfTable) per test case


@dataclass
class ReportBundle:
    config: dict
    plan: FoldPlan
    folds: list
    distance: object
    diagnostic: object
    cluster: dict
    harmonization: object | None
    leakage: list

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "distance": self.distance.to_dict(),
            "diagnostic": self.diagnostic.to_dict(),
            "cluster": self.cluster,
            "harmonization": None if self.harmonization is None else self.harmonization.to_dict(),
            "leakage": self.leakage,
            "folds": [{"fold": f.fold, "confusion": f.confusion, "pd_row": f.pd_row, "cluster": f.cluster}
                      for f in self.folds],
        }


def preprocess_cases(cases, cfg: NormalizationConfig) -> list:
    return [(normalize_intensity(v, cfg)[0], r) for v, r in cases]


def _fold_seed(base: int, fold: int, stage: int) -> int:
    return int(base) * 7919 + fold * 101 + stage


class _Stages:
    """Per-fold stage runner with optional checkpoint directory."""

    def __init__(self, cfg: ExperimentConfig, fold: int):
        self.cfg = cfg
        self.fold = fold
        self.dir = None if cfg.output_root is None else Path(cfg.output_root) / f"fold_{fold}"

    def _path(self, name):
        return None if self.dir is None else self.dir / name

    def cached(self, name, stage):
        p = self._path(name)
        if p is None or not p.exists():
            return None
        try:
            params = load_checkpoint(p)
        except DipssError:
            logger.warning("ignoring unreadable checkpoint %s", p)
            return None
        meta = params.metadata
        if meta.get("stage_hash") != self.cfg.stage_hash(stage):
            logger.info("config changed since %s was written; recomputing", p)
            return None
        return params

    def save(self, params, name, stage):
        params.metadata["stage_hash"] = self.cfg.stage_hash(stage)
        params.metadata["fold"] = self.fold
        p = self._path(name)
        if p is not None:
            save_checkpoint(params, p, stage=stage, fold=self.fold)


def _stage_error(exc, fold, stage):
    exc.args = (f"fold {fold}, stage {stage}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
    return exc


def run_fold(cfg: ExperimentConfig, plan: FoldPlan, k: int, cases: list, progress=None) -> FoldResult:
    """Stages (2)-(5) for one fold; ``cases`` are already preprocessed."""
    st = _Stages(cfg, k)
    recs = {r.case_id: r for _, r in cases}
    vols = {r.case_id: v for v, r in cases}
    train_ids, test_ids = plan.train_ids(k), plan.test_ids(k)
    ref, src = Vendor(cfg.reference_vendor), Vendor(cfg.source_vendor)

    pss_ids, changes = [], []
    if cfg.use_pss:
        stage = "pss"
        try:
            x_ids = [c for c in train_ids if recs[c].vendor is ref and metric_class(recs[c].label) == 0]
            y_ids = [c for c in train_ids if recs[c].vendor is src and metric_class(recs[c].label) == 0]
            pss_ids = sorted(x_ids + y_ids)
            params = st.cached("pss.ckpt", stage)
            if params is None:
                pcfg = dataclasses.replace(cfg.pss, seed=_fold_seed(cfg.seed, k, 1))
                params = train_pss(volume_slices([vols[c] for c in x_ids], cfg.axis),
                                   volume_slices([vols[c] for c in y_ids], cfg.axis), pcfg)
                params.metadata["trained_case_ids"] = pss_ids
                st.save(params, "pss.ckpt", stage)
            if progress:
                progress(k, "pss")
            gen = params.generator("gen_YtoX")
            vr = params.metadata["architecture"]["value_range"]
            converted = {c: apply_pss(v, gen, cfg.axis, mask_background=True, value_range=vr) for c, v in vols.items()}
            changes = [(recs[c].category, masked_image_metrics(vols[c], converted[c]),
                        intensity_change_cdf(vols[c], converted[c])) for c in test_ids]
            vols = converted
        except DipssError as exc:
            raise _stage_error(exc, k, stage)

    if cfg.embed_half_size:
        vols = {c: downsample_half(v) for c, v in vols.items()}

    stage = "embed"
    try:
        params = st.cached("embed.ckpt", stage)
        if params is None:
            ecfg = dataclasses.replace(cfg.embed, seed=_fold_seed(cfg.seed, k, 2))
            params = train_embedding([(vols[c], recs[c]) for c in train_ids], ecfg)
            st.save(params, "embed.ckpt", stage)
        if progress:
            progress(k, "embed")
        vecs = encode_many([vols[c] for c in test_ids], params)
        embeddings = [Embedding(vec, relabel(recs[c], fold=k)) for vec, c in zip(vecs, test_ids)]
        if st.dir is not None:
            save_store(embeddings, st.dir / "embeddings.jsonl")
    except DipssError as exc:
        raise _stage_error(exc, k, stage)

    stage = "eval"
    try:
        z = np.stack([e.vector for e in embeddings])
        cats = [e.category for e in embeddings]
        res = spectral_cluster_full(z, 2, cfg.cluster_knn, _fold_seed(cfg.seed, k, 3))
        classes = [metric_class(e.record.label) for e in embeddings]
        conf = np.zeros((2, 2), dtype=int)
        pd = np.zeros(2, dtype=int)
        has_pd = False
        for c, lab in zip(classes, res.labels):
            if c is None:
                pd[lab] += 1
                has_pd = True
            else:
                conf[c, lab] += 1
        scored = [i for i, c in enumerate(classes) if c is not None]
        report = clustering_scores([classes[i] for i in scored], res.labels[scored], z[scored])
        cluster = {k_: v for k_, v in report.to_dict().items() if k_ != "assignments"}
        cluster["disconnected"] = res.disconnected
    except DipssError as exc:
        raise _stage_error(exc, k, stage)
    return FoldResult(k, embeddings, pss_ids, list(params.metadata.get("trained_case_ids", [])),
                      conf.tolist(), pd.tolist() if has_pd else None, cluster, {"categories": cats}, changes)


def run_experiment(cfg: ExperimentConfig, cases=None, progress=None) -> ReportBundle:
    """Five-fold (configurable) protocol: preprocess, optional per-fold PSS,
    embedder training, test-split embedding, evaluation, fold aggregation."""
    raw = load_cases(cfg) if cases is None else list(cases)
    records = [r for _, r in raw]
    plan = plan_folds(records, cfg.n_folds, cfg.seed)
    try:
        pre = preprocess_cases(raw, cfg.normalization)
    except DipssError as exc:
        raise _stage_error(exc, "-", "preprocess")
    if cfg.output_root is not None:
        root = Path(cfg.output_root)
        root.mkdir(parents=True, exist_ok=True)
        (root / "plan.json").write_text(json.dumps(plan.to_dict()))
        (root / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))

    folds = [run_fold(cfg, plan, k, pre, progress) for k in range(cfg.n_folds)]

    leakage = []
    for f in folds:
        test = set(plan.test_ids(f.fold))
        for name, ids in (("pss", f.pss_case_ids), ("embed", f.embed_case_ids)):
            bad = sorted(test & set(ids))
            if bad:
                leakage.append(f"fold {f.fold}: {name} trained on test cases {bad[:5]}")
    if leakage:
        raise DataError("; ".join(leakage))

    dist = distance_report(
        [(np.stack([e.vector for e in f.embeddings]), [e.category for e in f.embeddings]) for f in folds],
        cfg.anchors, cfg.healthy_groups or None)
    pd_rows = [f.pd_row for f in folds if f.pd_row is not None]
    if pd_rows and len(pd_rows) != len(folds):
        pd_rows = []
    if pd_rows:
        aligned, pd_aligned = align_clusters([f.confusion for f in folds], pd_rows)
    else:
        aligned, pd_aligned = align_clusters([f.confusion for f in folds]), None
    diag = aggregate_folds(aligned, pd_aligned, cfg.n_folds)
    keys = [k for k in folds[0].cluster if k != "disconnected"]
    cluster = {}
    for k in keys:
        vals = [f.cluster[k] for f in folds if f.cluster[k] is not None]
        cluster[k] = float(np.mean(vals)) if vals else None
    cluster["disconnected_folds"] = [f.fold for f in folds if f.cluster["disconnected"]]

    changes = [c for f in folds for c in f.image_changes]
    harm = HarmonizationReport.from_measurements(changes) if changes else None
    bundle = ReportBundle(cfg.to_dict(), plan, folds, dist, diag, cluster, harm, leakage)
    if cfg.output_root is not None:
        (Path(cfg.output_root) / "report.json").write_text(json.dumps(bundle.to_dict(), indent=1, default=str))
    return bundle


# ---------------------------------------------------------------- CBIR

@dataclass(frozen=True)
class QueryHit:
    rank: int
    case_id: str
    distance: float
    record: CaseRecord


def prepare_query(v: Volume, params: EmbedParams, pss: PssParams | None = None,
                  normalization: NormalizationConfig | None = NormalizationConfig(), axis="coronal") -> Volume:
    """Same preprocessing as the stored cases: normalize, optional PSS, and
    half-size reduction when the embedder expects it."""
    if normalization is not None:
        v = normalize_intensity(v, normalization)[0]
    if pss is not None:
        v = apply_pss(v, pss, axis, mask_background=True)
    if v.dims != params.input_dims and tuple(d // 2 for d in v.dims) == params.input_dims:
        v = downsample_half(v)
    return v


def query_cbir(query: Volume, store, params: EmbedParams, k: int = 5, pss: PssParams | None = None,
               normalization: NormalizationConfig | None = NormalizationConfig(), axis="coronal") -> list:
    """The ``k`` store entries nearest (Euclidean) to the query's embedding."""
    if isinstance(store, (str, Path)):
        store = load_store(store)
    if not store:
        raise EmptyStore("embedding store is empty")
    q = encode(prepare_query(query, params, pss, normalization, axis), params)
    mat = np.stack([e.vector for e in store])
    d = np.linalg.norm(mat - q, axis=1)
    order = np.argsort(d, kind="stable")[:k]
    return [QueryHit(i + 1, store[j].case_id, float(d[j]), store[j].record) for i, j in enumerate(order)]


def paired_reference(case_id: str, cohort: SyntheticCohort, profile: str = "synthB") -> Volume:
    """Re-render a synthetic case's phantom under another scanner profile."""
    name, idx = case_id.rsplit("-", 1)
    names = sorted(cohort.counts)
    p_index, i = names.index(name), int(idx)
    n = cohort.counts[name]
    n_dis = int(round(n * cohort.diseased_fraction))
    severity = cohort.severity if i >= n - n_dis else 0.0
    v, _ = render_case(phantom_seed(cohort.seed, p_index, i), STOCK_PROFILES[profile],
                       cohort.subject_variation, severity, tuple(cohort.dims), case_id=case_id)
    return v


__all__ = [
    "DATA_ROOT_ENV",
    "ExperimentConfig",
    "FoldPlan",
    "FoldResult",
    "QueryHit",
    "ReportBundle",
    "SyntheticCohort",
    "audit_plan",
    "config_from_dict",
    "load_cases",
    "load_config",
    "paired_reference",
    "plan_folds",
    "prepare_query",
    "query_cbir",
    "run_experiment",
    "synthetic_cases",
]
