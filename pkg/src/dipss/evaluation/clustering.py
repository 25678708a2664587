"""Spectral clustering of embeddings and the six clustering scores."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import gammaln
from sklearn.metrics import silhouette_score
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.cluster import KMeans
from sklearn.neighbors import NearestNeighbors

from ..exceptions import DimensionMismatch, DisconnectedGraph, SingleCluster, TooFewPoints


def knn_affinity(x: np.ndarray, knn: int = 10):
    """Symmetric Gaussian affinity on the kNN graph.

    An edge joins i and j when either is among the other's ``knn`` nearest
    neighbours. Weights are exp(-d^2 / (2 sigma^2)) with sigma the median
    kNN distance (the smallest positive distance if that median is 0).
    """
    n = len(x)
    nn = NearestNeighbors(n_neighbors=knn + 1).fit(x)
    dist, idx = nn.kneighbors(x)
    # drop each point's self match; with duplicates the self index may not come first
    rows, cols, ds = [], [], []
    for i in range(n):
        others = [(d, j) for d, j in zip(dist[i], idx[i]) if j != i][:knn]
        for d, j in others:
            rows.append(i)
            cols.append(j)
            ds.append(d)
    ds = np.asarray(ds)
    sigma = float(np.median(ds))
    if sigma <= 0:
        pos = ds[ds > 0]
        sigma = float(pos.min()) if pos.size else 1.0
    w = np.zeros((n, n))
    w[rows, cols] = np.exp(-(ds ** 2) / (2 * sigma ** 2))
    return np.maximum(w, w.T), sigma


def spectral_embedding(w: np.ndarray, k: int) -> np.ndarray:
    """Rows of the k smallest eigenvectors of I - D^-1/2 W D^-1/2, unit-normalized."""
    deg = w.sum(axis=1)
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    lap = np.eye(len(w)) - inv[:, None] * w * inv[None, :]
    _, vecs = np.linalg.eigh(lap)
    u = vecs[:, :k]
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return u / norms


@dataclass
class SpectralResult:
    labels: np.ndarray
    sigma: float
    n_components: int

    @property
    def disconnected(self) -> bool:
        return self.n_components > 1


def spectral_cluster_full(embeddings, k: int = 2, knn: int = 10, seed: int = 0) -> SpectralResult:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch(f"expected (n, d) embeddings, got {x.shape}")
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(x) <= knn:
        raise TooFewPoints(f"need more than knn={knn} points, got {len(x)}")
    w, sigma = knn_affinity(x, knn)
    n_comp, _ = connected_components(csr_matrix(w > 0), directed=False)
    if n_comp > 1:
        warnings.warn(f"kNN graph has {n_comp} connected components", DisconnectedGraph, stacklevel=2)
    u = spectral_embedding(w, k)
    labels = KMeans(n_clusters=k, n_init=10, random_state=seed).fit_predict(u)
    return SpectralResult(labels.astype(int), sigma, int(n_comp))


def spectral_cluster(embeddings, k: int = 2, knn: int = 10, seed: int = 0) -> np.ndarray:
    """k-way labels from normalized-Laplacian spectral clustering."""
    return spectral_cluster_full(embeddings, k, knn, seed).labels


class SpectralClusterer(ClusterMixin, BaseEstimator):
    def __init__(self, n_clusters=2, n_neighbors=10, random_state=0):
        self.n_clusters = n_clusters
        self.n_neighbors = n_neighbors
        self.random_state = random_state

    def fit(self, X, y=None):
        res = spectral_cluster_full(X, self.n_clusters, self.n_neighbors, int(self.random_state or 0))
        self.labels_ = res.labels
        self.sigma_ = res.sigma
        self.n_components_ = res.n_components
        return self


@dataclass
class ClusterReport:
    silhouette: float | None
    homogeneity: float
    completeness: float
    v_measure: float
    ari: float
    ami: float
    assignments: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _contingency(t, p) -> np.ndarray:
    _, ti = np.unique(t, return_inverse=True)
    _, pi = np.unique(p, return_inverse=True)
    c = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(c, (ti, pi), 1)
    return c


def _entropy(counts: np.ndarray, n: int) -> float:
    q = counts[counts > 0] / n
    return float(-(q * np.log(q)).sum())


def _expected_mi(a: np.ndarray, b: np.ndarray, n: int) -> float:
    """E[MI] under the hypergeometric model with fixed marginals."""
    emi = 0.0
    lg_n = gammaln(n + 1)
    for ai in a:
        for bj in b:
            k = np.arange(max(1, ai + bj - n), min(ai, bj) + 1)
            if k.size == 0:
                continue
            log_w = (gammaln(ai + 1) + gammaln(bj + 1) + gammaln(n - ai + 1) + gammaln(n - bj + 1) - lg_n
                     - gammaln(k + 1) - gammaln(ai - k + 1) - gammaln(bj - k + 1) - gammaln(n - ai - bj + k + 1))
            emi += float((k / n * np.log(n * k / (ai * bj)) * np.exp(log_w)).sum())
    return emi


def contingency_scores(true_labels, pred_labels) -> dict:
    """Homogeneity, completeness, V-measure, ARI and AMI (arithmetic mean
    normalization) from one contingency table.

    Degenerate cases: homogeneity (completeness) is 1 when the true
    (predicted) labelling has a single class, V is 0 when both are 0, and
    ARI / AMI are 1 when their denominators vanish, which happens only for
    identical partitions.
    """
    c = _contingency(true_labels, pred_labels)
    n = int(c.sum())
    a, b = c.sum(axis=1), c.sum(axis=0)
    hc, hk = _entropy(a, n), _entropy(b, n)
    nz = c[c > 0]
    ia, ib = np.nonzero(c)
    mi = float((nz / n * (np.log(nz) + np.log(n) - np.log(a[ia]) - np.log(b[ib]))).sum())
    mi = min(max(mi, 0.0), hc, hk)  # rounding can push MI past either entropy
    h = mi / hc if hc else 1.0
    comp = mi / hk if hk else 1.0
    v = 2 * h * comp / (h + comp) if h + comp else 0.0

    pairs = lambda x: int((x * (x - 1) // 2).sum())  # noqa: E731
    index, sa, sb = pairs(nz), pairs(a), pairs(b)
    total = n * (n - 1) // 2
    # exact integer form of (index - E) / (max - E)
    num = 2 * index * total - 2 * sa * sb
    den = (sa + sb) * total - 2 * sa * sb
    ari = num / den if den else 1.0

    emi = _expected_mi(a, b, n)
    den_ami = (hc + hk) / 2 - emi
    ami = (mi - emi) / den_ami if abs(den_ami) > 1e-12 else 1.0
    return {"homogeneity": h, "completeness": comp, "v_measure": v, "ari": ari, "ami": ami}


def clustering_scores(true_labels, pred_labels, embeddings=None) -> ClusterReport:
    """Silhouette (on ``embeddings`` with the predicted labels) plus the
    contingency scores of :func:`contingency_scores`.

    Silhouette is ``None`` when it is undefined (one predicted cluster, or
    as many clusters as points).
    """
    t, p = np.asarray(true_labels), np.asarray(pred_labels)
    if t.shape != p.shape or t.ndim != 1:
        raise DimensionMismatch(f"label arrays differ: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise ValueError("no labels to score")
    sil = None
    if embeddings is not None:
        try:
            sil = silhouette(embeddings, p)
        except SingleCluster:
            sil = None
    return ClusterReport(silhouette=sil, **contingency_scores(t, p), assignments=p.tolist())


def silhouette(embeddings, labels) -> float:
    x = np.asarray(embeddings, dtype=np.float64)
    n_lab = len(np.unique(labels))
    if n_lab < 2 or n_lab >= len(x):
        raise SingleCluster(f"silhouette needs 2..n-1 clusters, got {n_lab}")
    return float(silhouette_score(x, labels))
