"""riesz-modlab: truncated Riesz kernels, modulated energies, commutator
functionals, and first-order mean-field dynamics on desk-scale problems.

Conventions used throughout:

* whole-space Fourier transform  fhat(xi) = int f(x) exp(-2 pi i x.xi) dx;
* torus [0, L)^d with series     f(x) = sum_k fhat(k) exp(2 pi i k.x / L),
  so a probability density has fhat(0) = 1/L^d;
* "integral" coefficients of a measure nu are nuhat(k) = int e^{-2pi i k.x/L} dnu.
"""

__version__ = "0.1.0"
