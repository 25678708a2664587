"""Confusion-matrix alignment, fold aggregation and diagnostic percentages.

Rows are true classes (0 healthy / non-AD, 1 AD), columns cluster ids. PD
cases form a separate row (cases in the non-AD cluster, cases in the AD
cluster) that joins the non-AD class in the with-PD variant.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from itertools import permutations

import numpy as np

from ..exceptions import EmptyConfusion, FoldCountMismatch


def _counts(c) -> np.ndarray:
    c = np.asarray(c)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"confusion must be square, got shape {c.shape}")
    if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
        raise ValueError("confusion counts must be nonnegative integers")
    return c.astype(np.int64)


def best_permutation(c) -> tuple:
    """Column order maximizing the trace (first such order in lexicographic order)."""
    c = _counts(c)
    k = len(c)
    return max(permutations(range(k)), key=lambda p: sum(c[i, p[i]] for i in range(k)))


def align_clusters(confusions, pd_rows=None):
    """Permute each fold's columns to maximize its trace.

    PD rows, if given, receive their fold's permutation. Returns aligned
    confusions, or ``(confusions, pd_rows)`` when PD rows are passed.
    """
    out, pds = [], []
    for i, c in enumerate(confusions):
        c = _counts(c)
        perm = list(best_permutation(c))
        out.append(c[:, perm])
        if pd_rows is not None:
            pds.append(np.asarray(pd_rows[i], dtype=np.int64)[perm])
    return out if pd_rows is None else (out, pds)


def half_up(x: Fraction) -> int:
    return int((x + Fraction(1, 2)).__floor__())


@dataclass(frozen=True)
class ClassMetrics:
    confusion: tuple
    precision: tuple
    recall: tuple
    f1: tuple
    accuracy: float
    macro_f1: float
    pd_specificity: float | None = None

    def to_dict(self):
        return asdict(self)


def _pct(num, den) -> float:
    return 100.0 * num / den if den else 0.0


def diagnostic_metrics(confusion, include_pd: bool = False, pd_row=None) -> ClassMetrics:
    """Per-class precision/recall/F1, accuracy and macro-F1 in percent.

    With ``include_pd`` the PD row is added to the non-AD row first and the
    PD specificity (PD cases in the non-AD cluster / all PD) is reported.
    """
    c = _counts(confusion)
    if c.sum() == 0:
        raise EmptyConfusion("confusion matrix has no cases")
    pd_spec = None
    if include_pd:
        if pd_row is None:
            raise ValueError("include_pd requires pd_row")
        pd = np.asarray(pd_row, dtype=np.int64).reshape(-1)
        if pd.sum() == 0:
            raise EmptyConfusion("PD row has no cases")
        c = c.copy()
        c[0] += pd
        pd_spec = _pct(pd[0], pd.sum())
    k = len(c)
    prec = tuple(_pct(c[i, i], c[:, i].sum()) for i in range(k))
    rec = tuple(_pct(c[i, i], c[i].sum()) for i in range(k))
    f1 = tuple(2 * p * r / (p + r) if p + r else 0.0 for p, r in zip(prec, rec))
    return ClassMetrics(
        confusion=tuple(tuple(int(v) for v in row) for row in c),
        precision=prec,
        recall=rec,
        f1=f1,
        accuracy=_pct(np.trace(c), c.sum()),
        macro_f1=float(np.mean(f1)),
        pd_specificity=pd_spec,
    )


@dataclass(frozen=True)
class DiagnosticReport:
    confusion: tuple
    pd_row: tuple | None
    excluding_pd: ClassMetrics
    including_pd: ClassMetrics | None

    def to_dict(self):
        return {
            "confusion": self.confusion,
            "pd_row": self.pd_row,
            "excluding_pd": self.excluding_pd.to_dict(),
            "including_pd": None if self.including_pd is None else self.including_pd.to_dict(),
        }


def diagnostic_report(confusion, pd_row=None) -> DiagnosticReport:
    c = _counts(confusion)
    pd = None if pd_row is None else tuple(int(v) for v in np.asarray(pd_row).reshape(-1))
    return DiagnosticReport(
        confusion=tuple(tuple(int(v) for v in row) for row in c),
        pd_row=pd,
        excluding_pd=diagnostic_metrics(c),
        including_pd=None if pd is None else diagnostic_metrics(c, True, pd),
    )


def aggregate_folds(confusions, pd_confusions=None, n_folds: int = 5) -> DiagnosticReport:
    """Sum aligned per-fold confusions; PD rows (every PD case is scored in
    every fold) are summed, divided by ``n_folds`` and rounded half-up."""
    confusions = [_counts(c) for c in confusions]
    if len(confusions) != n_folds:
        raise FoldCountMismatch(f"expected {n_folds} fold confusions, got {len(confusions)}")
    total = np.sum(confusions, axis=0)
    pd = None
    if pd_confusions:
        if len(pd_confusions) != n_folds:
            raise FoldCountMismatch(f"expected {n_folds} PD rows, got {len(pd_confusions)}")
        sums = np.sum([np.asarray(r, dtype=np.int64).reshape(-1) for r in pd_confusions], axis=0)
        pd = [half_up(Fraction(int(s), n_folds)) for s in sums]
    return diagnostic_report(total, pd)
