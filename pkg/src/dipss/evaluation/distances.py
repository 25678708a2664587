"""Embedding-distribution statistics with per-fold anchor normalization."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ..exceptions import EmptyCategory, MissingAnchorCategory, TooFewMembers, ZeroAnchorDistance

DEFAULT_ANCHORS = ("CN_SI", "AD_SI")


def _matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def centroid(members) -> np.ndarray:
    m = _matrix(members)
    if len(m) == 0:
        raise EmptyCategory("category has no members")
    return m.mean(axis=0)


def anchor_distance(vectors, categories, anchors=DEFAULT_ANCHORS) -> float:
    vectors = _matrix(vectors)
    categories = np.asarray(categories)
    cents = []
    for a in anchors:
        sel = categories == a
        if not sel.any():
            raise MissingAnchorCategory(f"no {a} embedding in this fold")
        cents.append(vectors[sel].mean(axis=0))
    return float(np.linalg.norm(cents[0] - cents[1]))


def normalize_fold(vectors, categories, anchors=DEFAULT_ANCHORS):
    """Divide a fold's embeddings by its anchor-centroid distance.

    Returns ``(scaled, scale)``; afterwards the anchor distance is 1.
    """
    scale = anchor_distance(vectors, categories, anchors)
    if not scale > 0:
        raise ZeroAnchorDistance(f"{anchors[0]} and {anchors[1]} centroids coincide")
    return _matrix(vectors) / scale, scale


def category_sd(members) -> float:
    """Root mean squared distance of the members to their centroid."""
    m = _matrix(members)
    if len(m) < 2:
        raise TooFewMembers(f"need >= 2 members, got {len(m)}")
    return float(np.sqrt(np.mean(np.sum((m - m.mean(axis=0)) ** 2, axis=1))))


def cross_category_stats(from_members, to_centroid):
    """Mean and SD of distances from each member to another category's centroid."""
    m = _matrix(from_members)
    if len(m) == 0:
        raise EmptyCategory("from-category has no members")
    c = np.asarray(to_centroid, dtype=np.float64).reshape(-1)
    if c.size == 0:
        raise EmptyCategory("to-category centroid is empty")
    d = np.linalg.norm(m - c, axis=1)
    return float(d.mean()), float(d.std())


@dataclass
class DistanceReport:
    """Fold-averaged, anchor-normalized distribution statistics.

    ``sd[c]``: category dispersion. ``pairs[(a, b)]``: centroid distance plus
    the SD of member-to-other-centroid distances in each direction.
    """

    sd: dict = field(default_factory=dict)
    pairs: dict = field(default_factory=dict)
    scales: list = field(default_factory=list)
    per_fold: list = field(default_factory=list)

    def centroid_distance(self, a, b) -> float:
        key = (a, b) if (a, b) in self.pairs else (b, a)
        return self.pairs[key]["mean"]

    def to_dict(self):
        return {
            "sd": self.sd,
            "pairs": {f"{a}|{b}": v for (a, b), v in self.pairs.items()},
            "scales": self.scales,
        }


def fold_statistics(vectors, categories, anchors=DEFAULT_ANCHORS, groups=None) -> dict:
    """Normalized statistics of one fold: {'scale', 'sd', 'pairs'}.

    ``groups`` maps extra names to lists of categories whose union also gets
    an SD entry (e.g. all healthy categories across vendors).
    """
    z, scale = normalize_fold(vectors, categories, anchors)
    categories = np.asarray(categories)
    cats = sorted(set(categories.tolist()))
    extra, groups = groups, {c: z[categories == c] for c in cats}
    cents = {c: g.mean(axis=0) for c, g in groups.items()}
    sd = {c: category_sd(g) for c, g in groups.items() if len(g) >= 2}
    for name, members in (extra or {}).items():
        union = z[np.isin(categories, list(members))]
        if len(union) >= 2:
            sd[name] = category_sd(union)
    pairs = {}
    for a, b in combinations(cats, 2):
        pairs[(a, b)] = {
            "mean": float(np.linalg.norm(cents[a] - cents[b])),
            "sd_ab": cross_category_stats(groups[a], cents[b])[1],
            "sd_ba": cross_category_stats(groups[b], cents[a])[1],
        }
    return {"scale": scale, "sd": sd, "pairs": pairs}


def distance_report(folds, anchors=DEFAULT_ANCHORS, groups=None) -> DistanceReport:
    """Average per-fold statistics; ``folds`` yields (vectors, categories).

    Every fold lives in its own embedding space, so each statistic is computed
    within a fold after normalization and then averaged over folds.
    """
    stats = [fold_statistics(v, c, anchors, groups) for v, c in folds]
    rep = DistanceReport(scales=[s["scale"] for s in stats], per_fold=stats)
    for c in sorted({k for s in stats for k in s["sd"]}):
        rep.sd[c] = float(np.mean([s["sd"][c] for s in stats if c in s["sd"]]))
    for key in sorted({k for s in stats for k in s["pairs"]}):
        rows = [s["pairs"][key] for s in stats if key in s["pairs"]]
        rep.pairs[key] = {f: float(np.mean([r[f] for r in rows])) for f in ("mean", "sd_ab", "sd_ba")}
    return rep

