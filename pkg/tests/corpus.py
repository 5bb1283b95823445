"""Seeded random scales and potentials shared by the property and acceptance tests."""

import numpy as np

from tsspec import from_functions, validate


def random_scale(rng, max_segments=2, max_points=4, gaps=(0.3, 3.0), lengths=(0.5, 3.0)):
    while True:
        n_seg = int(rng.integers(0, max_segments + 1))
        n_pts = int(rng.integers(0, max_points + 1))
        if n_seg > 0 or n_pts >= 3:
            break
    kinds = ["s"] * n_seg + ["p"] * n_pts
    rng.shuffle(kinds)
    blocks = []
    x = 0.0
    for kind in kinds:
        length = float(rng.uniform(*lengths)) if kind == "s" else 0.0
        blocks.append((x, x + length))
        x += length + float(rng.uniform(*gaps))
    return validate(blocks)


def random_potential(rng, ts, grid=129, amplitude=2.0):
    """A few low Fourier modes on every segment, uniform values at points."""
    fns = []
    for _ in range(ts.n_segments):
        c = rng.uniform(-amplitude, amplitude, 3)
        w = rng.uniform(0.2, 2.0, 2)
        fns.append(lambda x, c=c, w=w: c[0] + c[1] * np.cos(w[0] * x) + c[2] * np.sin(w[1] * x))
    pts = {l: float(rng.uniform(-amplitude, amplitude)) for l in ts.core_points()}
    return from_functions(ts, fns, pts, grid=grid)


def corpus(seed, size, **kw):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(size):
        ts = random_scale(rng, **kw)
        out.append((ts, random_potential(rng, ts)))
    return out
