"""2D projection of embeddings for external plotting."""
from __future__ import annotations

import numpy as np
from sklearn.manifold import TSNE

from ..exceptions import TooFewPoints


def project_2d(embeddings, seed: int = 0) -> np.ndarray:
    """Exact t-SNE with perplexity min(30, n/4); deterministic per seed."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or len(x) < 5:
        raise TooFewPoints(f"need at least 5 points, got {len(x) if x.ndim else 0}")
    perplexity = min(30.0, len(x) / 4.0)
    tsne = TSNE(n_components=2, perplexity=perplexity, method="exact", init="pca", random_state=seed)
    return tsne.fit_transform(x)
