"""Independent reference computations used by the tests.

Each oracle is written from the textbook definition with plain loops and
shares no code with the package.
"""

import math
from fractions import Fraction

import numpy as np


def km_table(time, event):
    """Step-by-step product-limit tabulation: list of (t, n_at_risk, d, S)."""
    rows = []
    s = 1.0
    for t in sorted({t for t, e in zip(time, event) if e}):
        n = sum(1 for u in time if u >= t)
        d = sum(1 for u, e in zip(time, event) if e and u == t)
        s *= 1.0 - d / n
        rows.append((t, n, d, s))
    return rows


def logrank_2x2(time, event, group):
    """Two-group log-rank chi-square accumulated one 2x2 table at a time."""
    o_minus_e = 0.0
    var = 0.0
    for t in sorted({t for t, e in zip(time, event) if e}):
        n1 = sum(1 for u, g in zip(time, group) if u >= t and g == 1)
        n = sum(1 for u in time if u >= t)
        d1 = sum(1 for u, e, g in zip(time, event, group) if e and u == t and g == 1)
        d = sum(1 for u, e in zip(time, event) if e and u == t)
        o_minus_e += d1 - d * n1 / n
        if n > 1:
            var += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1)
    return o_minus_e ** 2 / var


def c_index_pairs(risk, time, event):
    """Harrell's C by enumerating every ordered pair, as an exact Fraction."""
    num = Fraction(0)
    den = 0
    n = len(risk)
    for i in range(n):
        for j in range(n):
            if event[i] and time[i] < time[j]:
                den += 1
                if risk[i] > risk[j]:
                    num += 1
                elif risk[i] == risk[j]:
                    num += Fraction(1, 2)
    return num / den


def midranks(x):
    order = sorted(range(len(x)), key=lambda i: x[i])
    r = [0.0] * len(x)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and x[order[j + 1]] == x[order[i]]:
            j += 1
        for k in range(i, j + 1):
            r[order[k]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return r


def pearson(x, y):
    mx, my = sum(x) / len(x), sum(y) / len(y)
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def angle_deg(a, b):
    c = float(np.clip(np.dot(unit(a), unit(b)), -1.0, 1.0))
    return math.degrees(math.acos(c))


def two_stain_image(h, e, side=256, seed=0):
    """RGB image mixed from known stain OD vectors ``h`` and ``e``.

    Pixels are 30% pure hematoxylin, 30% pure eosin, 30% mixed and 10%
    background, with concentrations in [0.3, 0.8] perturbed by N(0, 0.01^2)
    mixing noise.
    """
    rng = np.random.default_rng(seed)
    n = side * side
    kind = rng.choice(4, size=n, p=[0.3, 0.3, 0.3, 0.1])
    ch = 0.3 + 0.5 * rng.random(n)
    ce = 0.3 + 0.5 * rng.random(n)
    ch[(kind == 1) | (kind == 3)] = 0.0
    ce[(kind == 0) | (kind == 3)] = 0.0
    ch = np.clip(ch + 0.01 * rng.standard_normal(n), 0.0, None)
    ce = np.clip(ce + 0.01 * rng.standard_normal(n), 0.0, None)
    od = np.outer(ch, unit(h)) + np.outer(ce, unit(e))
    rgb = np.clip(np.rint(256.0 * 10.0 ** (-od) - 1.0), 0, 255).astype(np.uint8)
    return rgb.reshape(side, side, 3)


def tile_origins(width, height, size=224):
    return [(c * size, r * size) for r in range(height // size) for c in range(width // size)]
