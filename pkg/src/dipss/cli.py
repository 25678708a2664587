"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import pipeline
from .checkpoint import load_checkpoint, save_checkpoint
from .embedding import EmbedParams, embed_all, load_store, save_store, train_embedding
from .evaluation import (
    HarmonizationReport,
    clustering_scores,
    distance_report,
    project_2d,
    spectral_cluster_full,
)
from .embedding.training import metric_class
from .exceptions import DataError, DipssError, InvalidConfig
from .phantom import STOCK_PROFILES, render_case
from .preprocess import downsample_half, normalize_intensity
from .pss import PssParams, apply_pss, train_pss, volume_slices
from .volume import CaseRecord, read_volume_dir, write_volume

logger = logging.getLogger("dipss")

MANIFEST_FIELDS = ("case_id", "subject_id", "dataset", "vendor", "label", "fold", "path")


def _cases(manifest=None, in_dir=None) -> list:
    if manifest:
        return pipeline.read_manifest(Path(manifest))
    if in_dir:
        return read_volume_dir(pipeline.resolve_path(in_dir, Path.cwd()))
    raise click.UsageError("give --manifest or --in-dir")


def _config(path) -> pipeline.ExperimentConfig | None:
    return None if path is None else pipeline.load_config(path)


def _section(cfg_path, name, default):
    if cfg_path is None:
        return default
    data = yaml.safe_load(Path(cfg_path).read_text()) or {}
    if name not in data:
        return default
    return pipeline._build(type(default), dict(data[name]), name)


def _write_cases(cases, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        w.writeheader()
        for v, rec in cases:
            p = write_volume(v, out_dir / f"{rec.case_id}.vol", rec)
            row = rec.to_dict()
            w.writerow({**{k: row[k] for k in MANIFEST_FIELDS[:-1]}, "path": p.name})
    return manifest


@click.group()
@click.option("-v", "--verbose", count=True, help="More log output (-vv for debug).")
def main(verbose):
    """Scanner harmonization and disease-oriented embedding of brain volumes."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--profile", type=click.Choice(sorted(STOCK_PROFILES)), required=True)
@click.option("--n-healthy", type=int, default=5, show_default=True)
@click.option("--n-diseased", type=int, default=5, show_default=True)
@click.option("--severity", type=float, default=1.0, show_default=True)
@click.option("--subject-variation", type=float, default=0.5, show_default=True)
@click.option("--dims", type=int, nargs=3, default=(32, 32, 48), show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def synth(out_dir, profile, n_healthy, n_diseased, severity, subject_variation, dims, seed):
    """Render phantom volumes under a scanner profile."""
    if n_healthy < 0 or n_diseased < 0 or n_healthy + n_diseased == 0:
        raise click.UsageError("need a positive number of cases")
    cases = []
    for i in range(n_healthy + n_diseased):
        sev = severity if i >= n_healthy else 0.0
        cases.append(render_case(seed * 100_003 + i, STOCK_PROFILES[profile], subject_variation, sev,
                                 tuple(dims), case_id=f"{profile}-{seed}-{i:03d}"))
    click.echo(_write_cases(cases, out_dir))


@main.command()
@click.option("--manifest", type=click.Path(dir_okay=False))
@click.option("--in-dir", type=click.Path(file_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--mu", type=float, default=18.0, show_default=True, help="Target mean over nonzero voxels.")
@click.option("--eps", type=float, default=1.0, show_default=True, help="Accepted deviation from --mu.")
@click.option("--half", is_flag=True, help="Also halve each dimension (2x2x2 means).")
def preprocess(manifest, in_dir, out_dir, mu, eps, half):
    """Intensity normalization (and optional half-size reduction).

    Prints one line per case: case_id, applied gamma, resulting mean.
    """
    norm = pipeline.NormalizationConfig(target_mean=mu, margin=eps)
    out = []
    for v, rec in _cases(manifest, in_dir):
        v, gamma = normalize_intensity(v, norm)
        nz = v.voxels[v.voxels > 0]
        click.echo(f"{rec.case_id}\t{gamma:.6f}\t{float(nz.mean()) if nz.size else 0.0:.4f}", err=True)
        out.append((downsample_half(v) if half else v, rec))
    click.echo(_write_cases(out, out_dir))


@main.command("train-pss")
@click.option("--x-manifest", required=True, type=click.Path(dir_okay=False), help="Reference-scanner cases.")
@click.option("--y-manifest", required=True, type=click.Path(dir_okay=False), help="Source-scanner cases.")
@click.option("--config", "cfg_path", type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--axis", default="coronal", show_default=True)
def train_pss_cmd(x_manifest, y_manifest, cfg_path, out, axis):
    """Train the translation model on healthy cases of two scanners."""
    cfg = _section(cfg_path, "pss", pipeline.PssTrainConfig())
    pools = []
    for m in (x_manifest, y_manifest):
        cases = _cases(manifest=m)
        healthy = [(v, r) for v, r in cases if metric_class(r.label) == 0]
        if len(healthy) < len(cases):
            logger.warning("%s: dropped %d non-healthy cases", m, len(cases) - len(healthy))
        if not healthy:
            raise DataError(f"{m}: no healthy cases to train on")
        pools.append(healthy)
    params = train_pss(volume_slices([v for v, _ in pools[0]], axis),
                       volume_slices([v for v, _ in pools[1]], axis), cfg)
    params.metadata["trained_case_ids"] = sorted(r.case_id for p in pools for _, r in p)
    params.metadata["axis"] = axis
    click.echo(save_checkpoint(params, out, stage="pss"))


@main.command("apply-pss")
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--in-dir", required=True, type=click.Path(file_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def apply_pss_cmd(checkpoint, in_dir, out_dir):
    """Harmonize every volume in a directory toward the reference scanner."""
    params = _load(checkpoint, PssParams)
    axis = params.metadata.get("axis", "coronal")
    out = [(apply_pss(v, params, axis, mask_background=True), r) for v, r in _cases(in_dir=in_dir)]
    click.echo(_write_cases(out, out_dir))


@main.command("train-embed")
@click.option("--manifest", required=True, type=click.Path(dir_okay=False))
@click.option("--config", "cfg_path", type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def train_embed_cmd(manifest, cfg_path, out):
    """Train the embedding network (PD cases are skipped)."""
    cfg = _section(cfg_path, "embed", pipeline.EmbedTrainConfig())
    params = train_embedding(_cases(manifest=manifest), cfg)
    click.echo(save_checkpoint(params, out, stage="embed"))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--manifest", type=click.Path(dir_okay=False))
@click.option("--in-dir", type=click.Path(file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def embed(checkpoint, manifest, in_dir, out):
    """Write one embedding per case to a JSON-lines store."""
    params = _load(checkpoint, EmbedParams)
    result = embed_all(_cases(manifest, in_dir), params)
    for cid, why in result.skipped:
        click.echo(f"skipped {cid}: {why}", err=True)
    click.echo(save_store(result.embeddings, out))


@main.command()
@click.option("--embeddings", type=click.Path(dir_okay=False, exists=True))
@click.option("--baseline", type=click.Path(file_okay=False), help="Volumes before harmonization.")
@click.option("--pss", "pss_dir", type=click.Path(file_okay=False), help="The same volumes after harmonization.")
@click.option("--report-dir", required=True, type=click.Path(file_okay=False))
@click.option("--anchors", nargs=2, default=("CN_SI", "AD_SI"), show_default=True)
@click.option("--knn", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def evaluate(embeddings, baseline, pss_dir, report_dir, anchors, knn, seed):
    """Distance, clustering and image-change reports plus 2D projections."""
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)
    if embeddings is None and not (baseline and pss_dir):
        raise click.UsageError("give --embeddings and/or --baseline with --pss")
    if embeddings:
        store = load_store(embeddings)
        folds = {}
        for e in store:
            folds.setdefault(e.fold, []).append(e)
        dist = distance_report([(np.stack([e.vector for e in es]), [e.category for e in es])
                                for _, es in sorted(folds.items(), key=lambda kv: str(kv[0]))], tuple(anchors))
        _dump(out / "distance.json", dist.to_dict())
        _distance_tables(dist.to_dict(), out)
        z = np.stack([e.vector for e in store])
        res = spectral_cluster_full(z, 2, knn, seed)
        scored = [i for i, e in enumerate(store) if metric_class(e.record.label) is not None]
        truth = [metric_class(store[i].record.label) for i in scored]
        rep = clustering_scores(truth, res.labels[scored], z[scored])
        _dump(out / "cluster.json", {**rep.to_dict(), "case_ids": [e.case_id for e in store],
                                     "disconnected": res.disconnected})
        pts = project_2d(z, seed)
        with (out / "projection.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case_id", "category", "x", "y"])
            for e, (x, y) in zip(store, pts):
                w.writerow([e.case_id, e.category, repr(float(x)), repr(float(y))])
    if baseline and pss_dir:
        before = {r.case_id: (v, r) for v, r in _cases(in_dir=baseline)}
        after = {r.case_id: v for v, r in _cases(in_dir=pss_dir)}
        missing = sorted(set(before) - set(after))
        if missing:
            raise DataError(f"no harmonized volume for {missing[:5]}")
        harm = HarmonizationReport.from_pairs((r.category, v, after[c]) for c, (v, r) in sorted(before.items()))
        _dump(out / "harmonization.json", harm.to_dict())
        _harmonization_tables(harm.to_dict(), out)
    click.echo(out)


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--store", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--volume", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--k", type=int, default=5, show_default=True)
@click.option("--pss-checkpoint", type=click.Path(dir_okay=False, exists=True))
@click.option("--no-normalize", is_flag=True, help="Skip intensity normalization of the query.")
def query(checkpoint, store, volume, k, pss_checkpoint, no_normalize):
    """Rank stored cases by embedding distance to a query volume."""
    params = _load(checkpoint, EmbedParams)
    pss = _load(pss_checkpoint, PssParams) if pss_checkpoint else None
    v, _ = pipeline.ingest_volume(volume)
    norm = None if no_normalize else pipeline.NormalizationConfig()
    hits = pipeline.query_cbir(v, load_store(store), params, k, pss, norm)
    for h in hits:
        click.echo(json.dumps({"rank": h.rank, "case_id": h.case_id, "distance": h.distance,
                               **{f: val for f, val in h.record.to_dict().items() if f != "case_id"}}))


@main.command()
@click.option("--config", "cfg_path", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--out", "output_root", type=click.Path(file_okay=False), help="Overrides output_root.")
def run(cfg_path, output_root):
    """Full cross-validated experiment from a YAML config."""
    cfg = _config(cfg_path)
    if output_root:
        cfg.output_root = output_root
    if cfg.output_root is None:
        raise InvalidConfig("config needs output_root (or pass --out)")
    bundle = pipeline.run_experiment(cfg, progress=lambda k, s: logger.info("fold %d: %s done", k, s))
    write_tables(bundle.to_dict(), Path(cfg.output_root))
    click.echo(Path(cfg.output_root) / "report.json")


@main.command()
@click.option("--report-dir", required=True, type=click.Path(file_okay=False, exists=True))
def report(report_dir):
    """Render CSV tables from a run's report.json."""
    d = Path(report_dir)
    try:
        bundle = json.loads((d / "report.json").read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {d / 'report.json'}: {exc}") from exc
    for p in write_tables(bundle, d):
        click.echo(p)


# ---------------------------------------------------------------- helpers

def _load(path, kind):
    params = load_checkpoint(path)
    if not isinstance(params, kind):
        raise DataError(f"{path} holds {type(params).__name__}, expected {kind.__name__}")
    return params


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, default=str))


def _csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _distance_tables(dist: dict, out: Path) -> list:
    sd = _csv(out / "category_sd.csv", ["category", "sd"], dist["sd"].items())
    rows = []
    for key, v in dist["pairs"].items():
        a, b = key.split("|")
        rows += [[a, b, v["mean"], v["sd_ab"]], [b, a, v["mean"], v["sd_ba"]]]
    return [sd, _csv(out / "cross_category.csv", ["from", "to", "mean", "sd"], rows)]


def _harmonization_tables(harm: dict, out: Path) -> list:
    rows = [[c, *m["psnr"], *m["rmse"], *m["ssim"]] for c, m in harm["metrics"].items()]
    written = [_csv(out / "image_changes.csv",
                    ["category", "psnr_mean", "psnr_sd", "rmse_mean", "rmse_sd", "ssim_mean", "ssim_sd"], rows)]
    cats = list(harm.get("cdf", {}))
    if cats:
        t = harm["cdf"][cats[0]]["thresholds"]
        rows = [[ti, *(harm["cdf"][c]["fractions"][i] for c in cats)] for i, ti in enumerate(t)]
        written.append(_csv(out / "change_cdf.csv", ["threshold", *cats], rows))
    return written


def write_tables(bundle: dict, out: Path) -> list:
    """CSV renderings of a report bundle dict; returns the written paths."""
    out.mkdir(parents=True, exist_ok=True)
    written = _distance_tables(bundle["distance"], out)
    written.append(_csv(out / "cluster_scores.csv", ["score", "value"], bundle["cluster"].items()))
    rows = []
    for name in ("excluding_pd", "including_pd"):
        m = bundle["diagnostic"].get(name)
        if m:
            rows.append([name, *m["precision"], *m["recall"], *m["f1"], m["accuracy"], m["macro_f1"],
                         m["pd_specificity"]])
    written.append(_csv(out / "diagnostic.csv",
                        ["variant", "precision_0", "precision_1", "recall_0", "recall_1", "f1_0", "f1_1",
                         "accuracy", "macro_f1", "pd_specificity"], rows))
    if bundle.get("harmonization"):
        written += _harmonization_tables(bundle["harmonization"], out)
    return written


def cli(argv=None) -> int:
    """Entry point mapping exceptions to exit codes."""
    try:
        main.main(args=argv, prog_name="dipss", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except DipssError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


def entry():
    sys.exit(cli())


if __name__ == "__main__":
    entry()
