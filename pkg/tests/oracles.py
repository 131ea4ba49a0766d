"""Reference implementations written independently of the package.

Plain loops and textbook formulas only; nothing here imports ``windplace``.
Running this module regenerates ``data/frozen_oracles.json``.
"""

import json
import math
import random
from pathlib import Path

FROZEN_PATH = Path(__file__).parent / "data" / "frozen_oracles.json"


def bilinear(c00, c10, c01, c11, a, b):
    """Corner values at (lat0, lon0), (lat1, lon0), (lat0, lon1), (lat1, lon1)."""
    return (1 - a) * (1 - b) * c00 + a * (1 - b) * c10 + (1 - a) * b * c01 + a * b * c11


def pinball(pred, y, taus):
    total = 0.0
    for q, t in zip(pred, taus):
        e = y - q
        total += t * e if e > 0 else (t - 1) * e
    return total / len(taus)


def quantile_type7(values, tau):
    xs = sorted(values)
    h = (len(xs) - 1) * tau
    lo = math.floor(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def cvar_trapezoid(Q, taus, beta, tol=1e-9):
    acc = 0.0
    for o in range(len(taus) - 1):
        if taus[o + 1] <= beta + tol:
            acc += 0.5 * (Q[o] + Q[o + 1]) * (taus[o + 1] - taus[o])
    return acc / beta


def relu_net_quantiles(weights, biases, x, y_min, y_range):
    """Forward pass with ReLU on every layer and cumulative outputs."""
    a = list(x)
    for W, b in zip(weights, biases):
        a = [max(0.0, sum(w * v for w, v in zip(row, a)) + bj) for row, bj in zip(W, b)]
    out, acc = [], y_min
    for inc in a:
        acc += y_range * inc
        out.append(acc)
    return out


def disparity(qa, qb, taus):
    d = [a - b for a, b in zip(qa, qb)]
    nz = [k for k, v in enumerate(d) if v != 0]
    g = 0.0
    for i, j in zip(nz, nz[1:]):
        if (d[i] > 0) != (d[j] > 0):
            g += 0.5 * abs(d[i] - d[j]) * (taus[j] - taus[i])
    return g


def dominates(qa, qb):
    return all(a >= b for a, b in zip(qa, qb)) and any(a > b for a, b in zip(qa, qb))


def dominant_set(profiles):
    n = len(profiles)
    return [a for a in range(n)
            if n > 1 and all(dominates(profiles[a], profiles[b]) for b in range(n) if b != a)]


def equirect_km(a, b, ref_lat):
    dx = 111.32 * math.cos(math.radians(ref_lat)) * (a[1] - b[1])
    dy = 110.57 * (a[0] - b[0])
    return math.sqrt(dx * dx + dy * dy)


def tangent_cut_km(a, b, ref_lat, K=16):
    dx = 111.32 * math.cos(math.radians(ref_lat)) * (a[1] - b[1])
    dy = 110.57 * (a[0] - b[0])
    return max(0.0, max(math.cos(2 * math.pi * k / K) * dx + math.sin(2 * math.pi * k / K) * dy
                        for k in range(K)))


def ladder55():
    return [0.05, 0.1, 0.2, 0.3, 0.4, 0.5] + [round(0.5 + 0.01 * k, 2) for k in range(1, 50)]


def _seeded_cases():
    rng = random.Random(20240601)
    taus = ladder55()
    Q = sorted(rng.uniform(0, 80) for _ in taus)
    values = [rng.gauss(10, 4) for _ in range(257)]
    W1 = [[rng.uniform(-1, 1) for _ in range(6)] for _ in range(3)]
    b1 = [rng.uniform(-0.2, 0.2) for _ in range(3)]
    W2 = [[rng.uniform(-1, 1) for _ in range(3)] for _ in range(4)]
    b2 = [rng.uniform(0, 0.1) for _ in range(4)]
    x = [rng.uniform(0, 1) for _ in range(6)]
    qa = sorted(rng.uniform(0, 40) for _ in taus)
    qb = sorted(rng.uniform(0, 40) for _ in taus)
    return {
        "cvar_ladder": {
            "Q": Q,
            "values": {str(b): cvar_trapezoid(Q, taus, b) for b in (0.2, 0.5, 0.57, 0.97, 1.0)},
        },
        "quantiles_gauss": {
            "data": values,
            "taus": [0.05, 0.25, 0.5, 0.9, 0.99],
            "values": [quantile_type7(values, t) for t in (0.05, 0.25, 0.5, 0.9, 0.99)],
        },
        "tiny_net": {
            "weights": [W1, W2], "biases": [b1, b2], "x": x, "y_min": -0.5, "y_range": 12.0,
            "quantiles": relu_net_quantiles([W1, W2], [b1, b2], x, -0.5, 12.0),
        },
        "disparity_pair": {"qa": qa, "qb": qb, "value": disparity(qa, qb, taus)},
    }


def freeze():
    doc = {
        "hand": {
            "cell_center_1234": bilinear(1.0, 2.0, 3.0, 4.0, 0.5, 0.5),
            "pinball_tau05_eps2": pinball([0.0], 2.0, [0.5]),
            "median_1_to_100": quantile_type7(list(range(1, 101)), 0.5),
            "cvar_two_level": cvar_trapezoid([2.0, 6.0], [0.25, 0.75], 0.75),
            "disparity_one_interval": disparity([1.0, -1.0], [0.0, 0.0], [0.3, 0.4]),
            "one_degree_lat_km": equirect_km((44.0, -6.0), (43.0, -6.0), 43.5),
        },
        "seeded": _seeded_cases(),
    }
    FROZEN_PATH.parent.mkdir(exist_ok=True)
    FROZEN_PATH.write_text(json.dumps(doc, indent=1))
    return doc


def load_frozen():
    return json.loads(FROZEN_PATH.read_text())


if __name__ == "__main__":
    freeze()
