"""Independent reference computations used by the tests."""
import math
from collections import Counter
from fractions import Fraction

import numpy as np


def labelings(n):
    """All set partitions of n points as restricted growth strings."""
    out = []

    def rec(prefix, top):
        if len(prefix) == n:
            out.append(tuple(prefix))
            return
        for v in range(top + 2):
            rec(prefix + [v], max(top, v))

    if n:
        rec([0], 0)
    return out


def _entropy(counts, n):
    return -sum(c / n * math.log(c / n) for c in counts if c)


def contingency_scores(t, p):
    n = len(t)
    a, b = Counter(t), Counter(p)
    nij = Counter(zip(t, p))
    hc, hk = _entropy(a.values(), n), _entropy(b.values(), n)
    mi = sum(c / n * math.log(n * c / (a[i] * b[j])) for (i, j), c in nij.items())
    h = 1.0 if hc == 0 else mi / hc
    c = 1.0 if hk == 0 else mi / hk
    v = 0.0 if h + c == 0 else 2 * h * c / (h + c)

    pairs = lambda m: Fraction(m * (m - 1), 2)
    index = sum(pairs(x) for x in nij.values())
    sa, sb = sum(pairs(x) for x in a.values()), sum(pairs(x) for x in b.values())
    expected = sa * sb / pairs(n) if n > 1 else Fraction(0)
    top = (sa + sb) / 2
    ari = 1.0 if top == expected else float((index - expected) / (top - expected))

    emi = 0.0
    for ai in a.values():
        for bj in b.values():
            for k in range(max(1, ai + bj - n), min(ai, bj) + 1):
                log_w = (math.lgamma(ai + 1) + math.lgamma(bj + 1) + math.lgamma(n - ai + 1)
                         + math.lgamma(n - bj + 1) - math.lgamma(n + 1) - math.lgamma(k + 1)
                         - math.lgamma(ai - k + 1) - math.lgamma(bj - k + 1) - math.lgamma(n - ai - bj + k + 1))
                emi += k / n * math.log(n * k / (ai * bj)) * math.exp(log_w)
    den = (hc + hk) / 2 - emi
    ami = 1.0 if abs(den) < 1e-12 else (mi - emi) / den
    return {"homogeneity": h, "completeness": c, "v_measure": v, "ari": ari, "ami": ami}


def gaussian_window(radius=5, sigma=1.5):
    r = np.arange(-radius, radius + 1)
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim_at(a, b, i, j, data_range=255.0, radius=5, sigma=1.5):
    """SSIM of the window centred at (i, j), summed explicitly (no borders)."""
    w = gaussian_window(radius, sigma)
    pa = a[i - radius:i + radius + 1, j - radius:j + radius + 1]
    pb = b[i - radius:i + radius + 1, j - radius:j + radius + 1]
    mu_a, mu_b = (w * pa).sum(), (w * pb).sum()
    va = (w * (pa - mu_a) ** 2).sum()
    vb = (w * (pb - mu_b) ** 2).sum()
    cov = (w * (pa - mu_a) * (pb - mu_b)).sum()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    return (2 * mu_a * mu_b + c1) * (2 * cov + c2) / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2))


def fraction_metrics(conf, pd_row=None):
    """Percentages recomputed with exact fractions."""
    c = [list(map(int, r)) for r in conf]
    if pd_row is not None:
        c[0] = [c[0][0] + pd_row[0], c[0][1] + pd_row[1]]
    pct = lambda x, y: Fraction(100) * x / y
    prec = [pct(c[k][k], c[0][k] + c[1][k]) for k in (0, 1)]
    rec = [pct(c[k][k], sum(c[k])) for k in (0, 1)]
    f1 = [2 * p * r / (p + r) for p, r in zip(prec, rec)]
    out = {"precision": prec, "recall": rec, "f1": f1,
           "accuracy": pct(c[0][0] + c[1][1], sum(map(sum, c))), "macro_f1": (f1[0] + f1[1]) / 2}
    if pd_row is not None:
        out["pd_specificity"] = pct(pd_row[0], sum(pd_row))
    return {k: [float(x) for x in v] if isinstance(v, list) else float(v) for k, v in out.items()}
