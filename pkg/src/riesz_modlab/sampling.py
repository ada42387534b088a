"""Deterministic configuration samplers for experiments.

Three families: iid draws from a band-limited density, jittered lattices
(near-minimizers), and two-cluster adversarial configurations.  Every sampler
is keyed by (seed, trial) through the counter-based generator.
"""

import numpy as np

from .errors import InvalidSpecError
from .rng import generator, STREAM_CONFIG


def iid_from_density(mu, n, seed, trial=0):
    """n iid samples from mu: inverse CDF in 1-D, rejection in higher d."""
    geom = mu.geometry
    rng = generator(seed, STREAM_CONFIG, counter=trial)
    if geom.d == 1:
        grid = 8192
        x = (np.arange(grid) + 0.5) * geom.L / grid
        dens = np.maximum(mu.eval_at(x[:, None]), 0.0)
        cdf = np.cumsum(dens)
        cdf = cdf / cdf[-1]
        u = rng.uniform(size=n)
        return geom.L * (np.searchsorted(cdf, u) + 0.5)[:, None] / grid \
            + rng.uniform(-0.5, 0.5, size=(n, 1)) * geom.L / grid
    out = np.empty((n, geom.d))
    have = 0
    bound = mu.linf * 1.0001
    while have < n:
        cand = rng.uniform(0, geom.L, size=(4 * (n - have), geom.d))
        accept = rng.uniform(0, bound, size=len(cand)) < mu.eval_at(cand)
        take = cand[accept][: n - have]
        out[have:have + len(take)] = take
        have += len(take)
    return out


def jittered_lattice(n, geometry, seed, trial=0, amplitude=0.3):
    """Cubic lattice with iid jitter of `amplitude` lattice spacings."""
    d, L = geometry.d, geometry.L
    side = round(n ** (1.0 / d))
    if side**d != n:
        raise InvalidSpecError(f"N={n} is not a perfect {d}-th power")
    axes = [(np.arange(side) + 0.5) * L / side] * d
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    rng = generator(seed, STREAM_CONFIG, counter=trial)
    pts = pts + amplitude * (L / side) * rng.uniform(-1, 1, size=pts.shape)
    return geometry.wrap(pts)


def two_clusters(n, geometry, seed, trial=0, radius=0.06):
    """Adversarial family: two tight clusters holding half the points each."""
    d, L = geometry.d, geometry.L
    rng = generator(seed, STREAM_CONFIG, counter=trial)
    centers = np.array([[0.3] * d, [0.7] * d]) * L
    pts = np.empty((n, d))
    half = n // 2
    pts[:half] = centers[0] + radius * L * rng.uniform(-1, 1, size=(half, d))
    pts[half:] = centers[1] + radius * L * rng.uniform(-1, 1, size=(n - half, d))
    return geometry.wrap(pts)


SAMPLERS = {
    "iid": lambda mu, n, seed, trial: iid_from_density(mu, n, seed, trial),
    "jittered": lambda mu, n, seed, trial: jittered_lattice(n, mu.geometry, seed, trial),
    "cluster": lambda mu, n, seed, trial: two_clusters(n, mu.geometry, seed, trial),
}
