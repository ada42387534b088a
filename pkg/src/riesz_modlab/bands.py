"""Band-limited fields on the torus stored as centered coefficient cubes.

A field f(x) = sum_{|k|_inf <= K} fhat(k) e^{2 pi i k.x / L} is held as a
complex array of shape (2K+1,)^d indexed by k + K per axis.  Everything the
package integrates against such fields is a finite exact Fourier sum.
"""

import numpy as np

from .errors import InvalidSpecError


def centered_modes(K, d):
    rng = np.arange(-K, K + 1)
    grids = np.meshgrid(*([rng] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


class CenteredBand:
    """Scalar band-limited field; Hermitian cube means real values."""

    def __init__(self, geometry, coeffs, require_real=True):
        self.geometry = geometry
        coeffs = np.asarray(coeffs, dtype=complex)
        d = geometry.d
        side = coeffs.shape[0]
        if coeffs.ndim != d or any(s != side for s in coeffs.shape) or side % 2 == 0:
            raise InvalidSpecError("coefficient cube must be (2K+1)^d")
        self.K = (side - 1) // 2
        self.coeffs = coeffs
        self._modes = centered_modes(self.K, d)
        self._flat = coeffs.reshape(-1)
        if require_real:
            flipped = np.conj(coeffs[(slice(None, None, -1),) * d])
            if not np.allclose(flipped, coeffs, atol=1e-12):
                raise InvalidSpecError("coefficients must be Hermitian (real field)")

    @property
    def zero_mode(self):
        return complex(self.coeffs[(self.K,) * self.geometry.d])

    def mode_table(self):
        """(coefficients, integer modes) as flat arrays in a fixed order."""
        return self._flat, self._modes

    def eval_at(self, points, weights=None):
        """Field values at arbitrary points by direct mode summation (exact).

        `weights` multiplies each coefficient, evaluating the convolution
        with the kernel whose symbol the weights encode."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        phases = 2 * np.pi * (points @ self._modes.T) / self.geometry.L
        coeff = self._flat if weights is None else self._flat * weights
        return np.real(np.exp(1j * phases) @ coeff)

    def eval_grid(self, n, weights=None):
        """Values on the uniform n^d grid via zero-padded inverse FFT."""
        d = self.geometry.d
        if n < 2 * self.K + 1:
            raise InvalidSpecError("grid too coarse for the band")
        coeff = self._flat if weights is None else self._flat * weights
        spec = np.zeros((n,) * d, dtype=complex)
        idx = np.mod(self._modes, n)
        spec[tuple(idx.T)] = coeff
        return np.real(np.fft.ifftn(spec) * n**d)

    def lp(self, p, n=None):
        """L^p norm by grid quadrature (grid max at p = inf)."""
        n = n or max(128, 8 * (2 * self.K + 1))
        vals = self.eval_grid(n)
        if np.isinf(p):
            return float(np.max(np.abs(vals)))
        L = self.geometry.L
        return float((np.mean(np.abs(vals) ** p) * L**self.geometry.d) ** (1.0 / p))

    def dilate(self, factor):
        """Field x -> f(factor x) for integer factor (mode k -> factor k)."""
        if int(factor) != factor or factor < 1:
            raise InvalidSpecError("dilation factor must be a positive integer")
        K2 = self.K * int(factor)
        side = 2 * K2 + 1
        cube = np.zeros((side,) * self.geometry.d, dtype=complex)
        idx = self._modes * int(factor) + K2
        cube[tuple(idx.T)] = self._flat
        return CenteredBand(self.geometry, cube, require_real=False)


class VectorBand:
    """Vector-valued band-limited field: one coefficient cube per component."""

    def __init__(self, geometry, cubes, require_real=True):
        if len(cubes) != geometry.d:
            raise InvalidSpecError("need one component cube per dimension")
        self.geometry = geometry
        self.components = [CenteredBand(geometry, c, require_real) for c in cubes]
        self.K = max(c.K for c in self.components)

    def eval_at(self, points):
        return np.stack([c.eval_at(points) for c in self.components], axis=-1)

    def to_grid_field(self, n):
        from .spectral import GridField

        vals = np.stack([c.eval_grid(n) for c in self.components])
        return GridField(vals, self.geometry)

    def dilate(self, factor):
        return VectorBand(
            self.geometry,
            [c.dilate(factor).coeffs for c in self.components],
            require_real=False,
        )


def band_product(a, b, out_K=None):
    """Exact coefficient cube of the pointwise product of two scalar bands."""
    if a.geometry is not b.geometry and a.geometry != b.geometry:
        raise InvalidSpecError("bands live on different geometries")
    d = a.geometry.d
    K = a.K + b.K if out_K is None else out_K
    n = 2 * (a.K + b.K) + 2
    vals = a.eval_grid(n) * b.eval_grid(n)
    spec = np.fft.fftn(vals) / n**d
    side = 2 * K + 1
    cube = np.zeros((side,) * d, dtype=complex)
    modes = centered_modes(K, d)
    cube[tuple((modes + K).T)] = spec[tuple(np.mod(modes, n).T)]
    return CenteredBand(a.geometry, cube, require_real=False)
