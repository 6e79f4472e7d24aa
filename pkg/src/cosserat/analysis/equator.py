"""Energy of the equator map x -> (0, x/|x|) into S^3 on a punctured ball."""

import numpy as np

from ..fields import GridSpec, build_grid, grad, sample
from .errors import AnalysisError


def equator_closed_form(p, extent=1.0, puncture_radius=0.0):
    """int_{r0 < |x| < L} (2/|x|^2)^{p/2} dx = 2^{p/2} 4 pi (L^{3-p} - r0^{3-p}) / (3 - p)."""
    if not 2 <= p < 3:
        raise AnalysisError(f"p must lie in [2, 3), got {p}")
    return 2.0 ** (p / 2) * 4.0 * np.pi * (extent ** (3 - p) - puncture_radius ** (3 - p)) / (3.0 - p)


def equator_energy(p, n=65, puncture_cells=3.0, extent=1.0):
    """
    Quadrature of |Du|^p for u = (0, x/|x|) on a ball grid punctured at
    ``puncture_cells`` grid spacings, with Du from the grid's differences.

    Returns
    -------
    numeric, closed_form : float
    """
    if not 2 <= p < 3:
        raise AnalysisError(f"p must lie in [2, 3) for a finite energy, got {p}")
    spec = GridSpec(n=n, extent=extent, shape="ball", puncture_radius=puncture_cells * 2.0 * extent / (n - 1))
    grid = build_grid(spec)
    Du = grad(sample("equator_quat", grid), grid)
    dens = np.einsum("nak,nak->n", Du, Du) ** (p / 2)
    return grid.integrate(dens), equator_closed_form(p, extent, spec.puncture_radius)
