"""First-order interacting particle flows, deterministic and stochastic.

dx_i = (1/N) sum_{j != i} M grad g(x_i - x_j) dt - V(x_i) dt + sqrt(2/beta) dW_i

with a repulsivity constraint M xi . xi <= 0.  Deterministic runs use RK4,
noisy runs Euler-Maruyama (Ito) with counter-based per-step Wiener blocks, so
trajectories are bit-reproducible for a given seed.  Collisions abort: the
flows keep initially separated particles separated, and silent regularization
would corrupt the energy diagnostics.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import CollisionError, InvalidSpecError
from .rng import normal_increments

COLLISION_THRESHOLD = 1e-10


def check_repulsive(M, tol=1e-12):
    """True iff the symmetric part of M is negative semidefinite."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise InvalidSpecError("M must be square")
    sym = 0.5 * (M + M.T)
    return bool(np.max(np.linalg.eigvalsh(sym)) <= tol)


@dataclass
class FlowSpec:
    """Flow matrix, external field, temperature, and stepping policy."""

    M: np.ndarray
    V: object = None  # None, callable (points, t) -> field, or .eval_at(points)
    beta: float = np.inf
    dt: float = 1e-3
    t_end: float = 1.0
    integrator: str = "auto"

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        if not check_repulsive(self.M):
            raise InvalidSpecError("flow matrix must satisfy M xi . xi <= 0")
        if self.beta <= 0:
            raise InvalidSpecError("inverse temperature must be positive")
        if self.integrator == "auto":
            self.integrator = "rk4" if np.isinf(self.beta) else "euler_maruyama"
        if np.isinf(self.beta) and self.integrator == "euler_maruyama":
            # zero-noise EM is permitted but RK4 is the deterministic default
            pass
        if not np.isinf(self.beta) and self.integrator == "rk4":
            raise InvalidSpecError("noisy flows integrate with euler_maruyama")

    def external_field(self, points, t):
        if self.V is None:
            return 0.0
        if hasattr(self.V, "eval_at"):
            return self.V.eval_at(points)
        return self.V(points, t)


@dataclass
class Trajectory:
    """Saved snapshots with per-snapshot diagnostics."""

    times: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    min_dists: list = field(default_factory=list)

    def append(self, t, x, energy, min_dist):
        self.times.append(float(t))
        self.positions.append(np.array(x))
        self.energies.append(float(energy))
        self.min_dists.append(float(min_dist))

    def as_arrays(self):
        return (
            np.asarray(self.times),
            np.stack(self.positions),
            np.asarray(self.energies),
            np.asarray(self.min_dists),
        )


def _min_distance(points, geometry=None):
    if len(points) < 2:
        return np.inf
    if geometry is not None:
        tree = cKDTree(geometry.wrap(points), boxsize=geometry.L)
    else:
        tree = cKDTree(points)
    dist, _ = tree.query(tree.data, k=2)
    return float(np.min(dist[:, 1]))


def interaction_force(points, spec, kernel=None, interactions=True):
    """G_i = (1/N) sum_{j != i} grad g(x_i - x_j), before the flow matrix."""
    n = len(points)
    if not interactions or n < 2:
        return np.zeros_like(points)
    if kernel is not None:
        return kernel.pair_forces(points) / n
    diff = points[:, None, :] - points[None, :, :]
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(r, np.inf)
    w = spec.g_radial_deriv(r) / r
    w[~np.isfinite(w)] = 0.0
    return np.einsum("ij,ijk->ik", w, diff) / n


def force(points, spec, flow, kernel=None, t=0.0, interactions=True):
    """Velocity field of the particle system at time t."""
    G = interaction_force(points, spec, kernel, interactions)
    out = G @ flow.M.T
    ext = flow.external_field(points, t)
    return out - ext


def pair_energy(points, spec, kernel=None):
    """H_N = (1/2N^2) sum_{i != j} g(x_i - x_j)."""
    n = len(points)
    if n < 2:
        return 0.0
    if kernel is not None:
        return kernel.pair_energy(points)
    diff = points[:, None, :] - points[None, :, :]
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    off = ~np.eye(n, dtype=bool)
    return float(np.sum(spec.g_radial(r[off]))) / (2.0 * n * n)


def stiffness_limit(points, spec, flow, geometry=None):
    """Largest dt that resolves the stiffest pair: 0.1 N d_min^{s+2} / |M|."""
    dmin = _min_distance(points, geometry)
    if not np.isfinite(dmin):
        return np.inf
    mnorm = max(np.linalg.norm(flow.M, 2), 1e-30)
    scale = max(spec.zeta.scale if spec.zeta.is_power else 1.0, 1.0)
    return 0.1 * len(points) * dmin ** (spec.s + 2.0) / (mnorm * scale)


def simulate(config0, spec, flow, save_times, kernel=None, seed=0, interactions=True,
             check_stiffness=True):
    """Integrate the flow, saving diagnostics at the requested times.

    RK4 when beta = inf, Euler-Maruyama otherwise (per-step Wiener blocks
    keyed by (seed, step)).  Raises CollisionError if the minimum pairwise
    distance falls below 1e-10; the diagnostic carries the abort state.
    """
    geometry = config0.geometry
    x = np.array(config0.points, dtype=float)
    n = len(x)
    dt = flow.dt
    if check_stiffness and interactions:
        limit = stiffness_limit(x, spec, flow, geometry)
        if dt > limit:
            raise InvalidSpecError(
                f"dt={dt:.3e} exceeds the stiffness budget {limit:.3e}"
            )
    save_steps = sorted({int(round(t / dt)) for t in save_times})
    n_steps = max(save_steps) if save_steps else int(round(flow.t_end / dt))
    traj = Trajectory()

    def record(step):
        t = step * dt
        dmin = _min_distance(x, geometry)
        if interactions and dmin < COLLISION_THRESHOLD:
            raise CollisionError(
                "particle collision detected",
                diagnostic={"t": t, "min_dist": dmin},
            )
        energy = pair_energy(x, spec, kernel) if interactions else 0.0
        traj.append(t, x, energy, dmin)

    if 0 in save_steps:
        record(0)
    noise_amp = 0.0 if np.isinf(flow.beta) else np.sqrt(2.0 * dt / flow.beta)
    for step in range(1, n_steps + 1):
        t = (step - 1) * dt
        if flow.integrator == "rk4":
            k1 = force(x, spec, flow, kernel, t, interactions)
            k2 = force(x + 0.5 * dt * k1, spec, flow, kernel, t + 0.5 * dt, interactions)
            k3 = force(x + 0.5 * dt * k2, spec, flow, kernel, t + 0.5 * dt, interactions)
            k4 = force(x + dt * k3, spec, flow, kernel, t + dt, interactions)
            x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            drift = force(x, spec, flow, kernel, t, interactions)
            incr = normal_increments(seed, step, x.shape)
            x = x + dt * drift + noise_amp * incr
        if geometry is not None:
            x = geometry.wrap(x)
        if step in save_steps:
            record(step)
        elif interactions and _min_distance(x, geometry) < COLLISION_THRESHOLD:
            record(step)  # raises with diagnostic
    return traj
