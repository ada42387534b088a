"""Pseudo-spectral solver for the mean-field evolution on the torus.

d mu/dt = div((V - M grad g * mu) mu) + (1/beta) Laplacian mu

The advecting velocity is computed by exact symbol calculus on the grid
spectrum, the quadratic term is dealiased with the 2/3 rule, time stepping is
integrating-factor RK4 (diffusion handled exactly), and the zero mode is
untouched by the divergence terms, so mass is conserved to roundoff.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels as kmod
from .bands import CenteredBand, centered_modes
from .energy import TorusDensity, microscale, modulated_energy, Configuration
from .errors import CFLViolationError, InvalidSpecError, NegativityError
from .spectral import GridField, MultiplierSpec, apply_multiplier, linf_grad, lp_norm


@dataclass
class DensityState:
    """Grid spectrum of mu^t (series coefficients in numpy FFT layout)."""

    coeffs: np.ndarray
    geometry: object
    t: float = 0.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        n = self.coeffs.shape[0]
        if self.coeffs.ndim != self.geometry.d or any(s != n for s in self.coeffs.shape):
            raise InvalidSpecError("state spectrum must be an n^d cube")

    @property
    def n(self):
        return self.coeffs.shape[0]

    @property
    def mass(self):
        return float(np.real(self.coeffs[(0,) * self.geometry.d])) \
            * self.geometry.L**self.geometry.d

    def grid_values(self):
        return np.real(np.fft.ifftn(self.coeffs)) * self.n**self.geometry.d

    @property
    def linf(self):
        return float(np.max(self.grid_values()))

    @property
    def l1(self):
        vals = self.grid_values()
        return float(np.mean(np.abs(vals)) * self.geometry.L**self.geometry.d)

    @classmethod
    def from_density(cls, mu, n, t=0.0):
        """Embed a band-limited density into an n^d spectral grid."""
        coeffs, modes = mu.mode_table()
        spec = np.zeros((n,) * mu.geometry.d, dtype=complex)
        spec[tuple(np.mod(modes, n).T)] = coeffs
        return cls(spec, mu.geometry, t)

    def to_density(self, band=None, check=False):
        """Centered-cube density view (band defaults to the dealiased cutoff)."""
        n, d = self.n, self.geometry.d
        K = band if band is not None else n // 3
        modes = centered_modes(K, d)
        side = 2 * K + 1
        cube = np.zeros((side,) * d, dtype=complex)
        cube[tuple((modes + K).T)] = self.coeffs[tuple(np.mod(modes, n).T)]
        return TorusDensity(self.geometry, cube, check=check)


class MeanFieldSolver:
    """Precomputed symbols for one (spec, geometry, grid, flow) combination."""

    def __init__(self, spec, geometry, n, flow, negativity_tol=-1e-6):
        if spec.d != geometry.d:
            raise InvalidSpecError("spec and geometry dimensions differ")
        self.spec = spec
        self.geometry = geometry
        self.n = int(n)
        self.flow = flow
        self.negativity_tol = float(negativity_tol)
        d, L = spec.d, geometry.L
        one = np.fft.fftfreq(self.n, d=1.0 / self.n)
        self.modes = np.stack(np.meshgrid(*([one] * d), indexing="ij"))
        self.k2 = np.sum((self.modes / L) ** 2, axis=0)
        kn = np.sqrt(np.sum(self.modes**2, axis=0))
        ghat = np.zeros_like(kn)
        nz = kn > 0
        cft = kmod.riesz_fourier_constant(d, spec.s) * spec.zeta.scale
        ghat[nz] = cft * (2 * np.pi * kn[nz] / L) ** (spec.s - d) / L**d
        self.ghat = ghat
        kinf = np.max(np.abs(self.modes), axis=0)
        self.dealias = kinf <= self.n // 3
        self.diff_sym = -4.0 * np.pi**2 * self.k2 / flow.beta \
            if not np.isinf(flow.beta) else np.zeros_like(self.k2)
        # linearization of div(mu M grad g * mu) around the conserved mean:
        # a fractional damping ~ -|k|^{2+s-d} that is too stiff for explicit
        # RK4 at fine grids, so it rides in the integrating factor
        kMk = np.zeros_like(self.k2)
        for aa in range(d):
            for bb in range(d):
                kMk += flow.M[aa, bb] * self.modes[aa] * self.modes[bb]
        self.lin_interaction = (2.0 * np.pi / L) ** 2 * kMk * self.ghat
        self.lin_interaction[~self.dealias] = 0.0
        self.lin_sym = self.diff_sym + self.lin_interaction

    # -- velocity -------------------------------------------------------------

    def velocity_spectrum(self, coeffs):
        """uhat = -M (2 pi i k/L) ghat L^d muhat + Vhat, one array per axis."""
        d, L = self.spec.d, self.geometry.L
        base = [
            (2j * np.pi / L) * self.modes[b] * self.ghat * L**d * coeffs
            for b in range(d)
        ]
        M = self.flow.M
        out = [
            -sum(M[a, b] * base[b] for b in range(d)) for a in range(d)
        ]
        if self.flow.V is not None:
            Vg = self._external_grid()
            for a in range(d):
                out[a] = out[a] + np.fft.fftn(Vg[a]) / self.n**d
        return out

    def _external_grid(self):
        from .spectral import grid_points

        pts = grid_points(self.geometry, self.n)
        flat = pts.reshape(self.spec.d, -1).T
        vals = self.flow.external_field(flat, 0.0)
        return np.asarray(vals).T.reshape((self.spec.d,) + (self.n,) * self.spec.d)

    def velocity_grid(self, state):
        """u^t on the grid: -M grad g * mu + V."""
        spec_u = self.velocity_spectrum(state.coeffs)
        nd = self.n**self.spec.d
        return np.stack([np.real(np.fft.ifftn(c)) * nd for c in spec_u])

    # -- stepping ---------------------------------------------------------------

    def _nonlinear(self, coeffs):
        """Spectrum of div(u mu) minus its mean-linearized part, dealiased."""
        d, L = self.spec.d, self.geometry.L
        nd = self.n**d
        mu_grid = np.real(np.fft.ifftn(coeffs)) * nd
        u_spec = self.velocity_spectrum(coeffs)
        out = np.zeros_like(coeffs)
        for a in range(d):
            u_grid = np.real(np.fft.ifftn(u_spec[a])) * nd
            prod_hat = np.fft.fftn(u_grid * mu_grid) / nd
            out += (2j * np.pi / L) * self.modes[a] * prod_hat
        out[~self.dealias] = 0.0
        return out - self.lin_interaction * coeffs

    def cfl_limit(self, state, dt):
        u = self.velocity_grid(state)
        umax = float(np.max(np.sqrt(np.sum(u * u, axis=0))))
        return dt * umax * self.n / self.geometry.L

    def step(self, state, dt):
        """One integrating-factor RK4 step; raises on CFL or negativity."""
        cfl = self.cfl_limit(state, dt)
        if cfl > 0.5:
            raise CFLViolationError(f"CFL number {cfl:.3f} exceeds 0.5")
        E = np.exp(self.lin_sym * dt)
        E2 = np.exp(self.lin_sym * dt / 2.0)
        v = state.coeffs
        k1 = self._nonlinear(v)
        k2 = self._nonlinear(E2 * (v + 0.5 * dt * k1))
        k3 = self._nonlinear(E2 * v + 0.5 * dt * k2)
        k4 = self._nonlinear(E * v + dt * E2 * k3)
        new = E * v + (dt / 6.0) * (E * k1 + 2.0 * E2 * (k2 + k3) + k4)
        out = DensityState(new, self.geometry, state.t + dt)
        gmin = float(np.min(out.grid_values()))
        if gmin < self.negativity_tol:
            raise NegativityError(f"density reached {gmin:.2e} at t={out.t:.4f}")
        return out

    def run(self, state0, dt, save_times):
        """March to max(save_times), returning the saved states in order."""
        saves = sorted({int(round(t / dt)) for t in save_times})
        out = []
        state = state0
        if 0 in saves:
            out.append(state)
        for step_idx in range(1, max(saves) + 1 if saves else 0):
            state = self.step(state, dt)
            if step_idx in saves:
                out.append(state)
        return out


def pde_step(state, solver, dt):
    """Single mean-field PDE step (module-level convenience)."""
    return solver.step(state, dt)


def velocity_field(state, solver):
    """u^t = -M grad g * mu^t + V on the solver grid."""
    return solver.velocity_grid(state)


def velocity_transport_norm(state, solver, a):
    """||grad u||_inf + |||grad|^{a/2} u||_{L^{2d/(a-2)}} 1_{a>2} of u^t."""
    d = solver.spec.d
    u = solver.velocity_grid(state)
    field = GridField(u, solver.geometry)
    total = linf_grad(field)
    if a > 2:
        frac = apply_multiplier(field, MultiplierSpec("homogeneous", a / 2.0))
        total += lp_norm(frac, 2.0 * d / (a - 2.0))
    return float(total)


def regularity_functional(states, solver, a):
    """N(u^T) = int_0^T (||grad u^t||_inf + fractional term) dt by trapezoid."""
    times = np.array([s.t for s in states])
    norms = np.array([velocity_transport_norm(s, solver, a) for s in states])
    return float(np.trapezoid(norms, times))


def cumulative_regularity(states, solver, a):
    """N(u^t) at every save time (running trapezoid)."""
    times = np.array([s.t for s in states])
    norms = np.array([velocity_transport_norm(s, solver, a) for s in states])
    out = np.zeros_like(times)
    for i in range(1, len(times)):
        out[i] = out[i - 1] + 0.5 * (norms[i] + norms[i - 1]) * (times[i] - times[i - 1])
    return out


def linfty_monotonicity_check(states, tol=1e-8):
    """True iff the grid max of mu^t is nonincreasing across saves (V = 0 runs)."""
    maxima = np.array([s.linf for s in states])
    return bool(np.all(np.diff(maxima) <= tol))


def gronwall_series(traj, states, spec, kernel, beta=np.inf, a=None, solver=None):
    """Per-save ingredients of the mean-field stability bound.

    Returns arrays (t, F_N, additive, Nu): the modulated energy, the additive
    term with unit coefficient (log term + ||mu|| lambda^{d-s}, plus the noise
    correction lambda^{d-s-2}/beta when beta < inf), and the cumulative
    velocity regularity.
    """
    if len(traj.times) != len(states):
        raise InvalidSpecError("trajectory and density saves are mismatched")
    if any(abs(ts - s.t) > 1e-9 for ts, s in zip(traj.times, states)):
        raise InvalidSpecError("trajectory and density save times differ")
    a = a if a is not None else spec.a
    geom = kernel.geometry
    n_particles = traj.positions[0].shape[0]
    fn = []
    additive = []
    for x, state in zip(traj.positions, states):
        mu_t = state.to_density()
        config = Configuration(x, geom)
        br = modulated_energy(config, mu_t, kernel)
        lam = br.lam
        extra = mu_t.linf * lam ** (spec.d - spec.s)
        if spec.s == 0:
            extra += -np.log(lam) / (2.0 * n_particles)
        if not np.isinf(beta):
            extra += mu_t.linf * lam ** (spec.d - spec.s - 2.0) / beta
        fn.append(br.F_N)
        additive.append(extra)
    Nu = cumulative_regularity(states, solver, a)
    return np.asarray(traj.times), np.asarray(fn), np.asarray(additive), Nu


def fit_gronwall_constant(fn, additive, Nu, c_max=1e9):
    """Smallest C with F_t + C add_t <= C e^{C Nu_t} (F_0 + C sup add) for all t.

    The same constant multiplies the additive terms on both sides, as in the
    stability statement; admissibility is monotone once the initial budget
    turns positive, so a doubling scan plus bisection finds the threshold.
    """
    fn = np.asarray(fn)
    additive = np.asarray(additive)
    Nu = np.asarray(Nu)
    run_sup = np.maximum.accumulate(additive)

    def ok(C):
        bracket = fn[0] + C * run_sup
        if np.any(bracket <= 0):
            return False
        return np.all(C * np.exp(C * Nu) * bracket >= fn + C * additive - 1e-15)

    hi = 1.0
    while not ok(hi):
        hi *= 2.0
        if hi > c_max:
            raise InvalidSpecError("no admissible constant below the cap")
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def gronwall_check(traj, states, spec, kernel, solver, a=None, beta=np.inf):
    """Fit the single constant of the mean-field stability bound on one run."""
    t, fn, additive, Nu = gronwall_series(traj, states, spec, kernel, beta=beta,
                                          a=a, solver=solver)
    C = fit_gronwall_constant(fn, additive, Nu)
    return {"C": C, "times": t, "F_N": fn, "additive": additive, "Nu": Nu}


def vfield_norm_lemma_check(f, spec, a, p, M=None):
    """Velocity-field norms of v = M grad g * f against their envelopes.

    Returns {'lhs_grad', 'rhs_grad', 'lhs_frac', 'rhs_frac'}; the fractional
    branch needs d >= 3 and exponents p > d/(d-s-2).  Constants are unit;
    callers calibrate the admissible ratio once.
    """
    d, s = spec.d, spec.s
    if s >= d - 2:
        raise InvalidSpecError("velocity-field lemma lives in the thin-kernel range s < d-2")
    if p <= d / (d - s - 2.0):
        raise InvalidSpecError(f"need p > d/(d-s-2) = {d / (d - s - 2.0):.3f}")
    geom = f.geometry
    M = np.eye(d) if M is None else np.atleast_2d(np.asarray(M, dtype=float))
    L = geom.L
    coeffs, modes = f.mode_table()
    kn = np.linalg.norm(modes, axis=1)
    ghat = np.zeros(len(modes))
    nz = kn > 0
    cft = kmod.riesz_fourier_constant(d, s) * spec.zeta.scale
    ghat[nz] = cft * (2 * np.pi * kn[nz] / L) ** (s - d) / L**d

    n = max(48, 6 * (2 * f.K + 1))
    comps = []
    for a_axis in range(d):
        w = sum(
            M[a_axis, b] * (2j * np.pi / L) * modes[:, b] for b in range(d)
        ) * ghat * L**d
        comps.append(f.eval_grid(n, weights=w))
    v = GridField(np.stack(comps), geom)

    lhs_grad = linf_grad(v)
    mnorm = np.linalg.norm(M, 2)
    th1 = (p * (d - s - 2.0) - d) / (d * (p - 1.0)) if np.isfinite(p) else (d - s - 2.0) / d
    th2 = p * (s + 2.0) / (d * (p - 1.0)) if np.isfinite(p) else (s + 2.0) / d
    rhs_grad = mnorm * f.lp(1.0) ** th1 * f.lp(p) ** th2

    if d < 3:
        return {"lhs_grad": lhs_grad, "rhs_grad": rhs_grad,
                "lhs_frac": None, "rhs_frac": None}
    frac = apply_multiplier(v, MultiplierSpec("homogeneous", a / 2.0))
    lhs_frac = lp_norm(frac, 2.0 * d / (a - 2.0))
    if s <= d - 1.0 - a / 2.0:
        rhs_frac = f.lp(d / (d - 2.0 - s))
    else:
        alpha = 0.5 * (a / 2.0 + 1.0 + s - d + s + 2.0)  # inside [a/2+1+s-d, s+2)
        frac_f = GridField(f.eval_grid(n), geom)
        frac_f = apply_multiplier(frac_f, MultiplierSpec("homogeneous", alpha))
        rhs_frac = lp_norm(frac_f, d / (alpha + d - 2.0 - s))
    return {"lhs_grad": lhs_grad, "rhs_grad": rhs_grad,
            "lhs_frac": lhs_frac, "rhs_frac": rhs_frac}
