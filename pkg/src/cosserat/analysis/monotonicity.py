"""
Scaled ball energies, the radial defect Q and radial comparison fields.

All ball integrals count a node iff its distance to the center is at most
the radius, weighted by the grid quadrature weight.
"""

from dataclasses import dataclass

import numpy as np

from .. import algebra as alg
from ..algebra import MaterialParams, apply_p, cover, transpose
from ..energy import NO_LOADS, energy_densities
from ..fields import GridState, grad
from .errors import AnalysisError


def singular_profile_constant(p):
    """r^{p-3} int_{B_r} |DR|^p for R = 2 x^ (x) x^ - I, with |DR|^2 = 16/|x|^2."""
    return 4.0 * np.pi * 16.0 ** (p / 2) / (3.0 - p)


@dataclass
class MonotonicityReport:
    radii: np.ndarray
    phi_profile: np.ndarray
    q_min: float
    deficit: np.ndarray
    curvature_profile: np.ndarray
    p: float

    def relative_variation(self, which="phi_profile"):
        v = np.asarray(getattr(self, which))
        return float((v.max() - v.min()) / abs(v.mean()))


def _max_radius(grid, center):
    spec = grid.spec
    if spec.shape == "ball":
        return spec.extent - float(np.linalg.norm(center))
    return spec.extent - float(np.abs(center).max())


def defect_q(state: GridState, c: MaterialParams, center=(0.0, 0.0, 0.0)):
    """
    Q = |P(R^t Dphi)|^2 - |P(R^t Dphi (I - x^ x^t))|^2 at every node, with
    x^ the unit vector from ``center``; zero at the center node.
    """
    x = state.grid.x - np.asarray(center, dtype=float)
    rho = np.linalg.norm(x, axis=1)
    xh = np.zeros_like(x)
    away = rho > 1e-12
    xh[away] = x[away] / rho[away, None]
    R = cover(state.quat)
    G = transpose(R) @ grad(state.phi, state.grid)
    Gt = G - np.einsum("nij,nj,nk->nik", G, xh, xh)
    PG, PGt = apply_p(G, c), apply_p(Gt, c)
    return alg.inner(PG, PG) - alg.inner(PGt, PGt)


def monotonicity_profile(state: GridState, center, radii, c: MaterialParams, p=None) -> MonotonicityReport:
    """
    Scaled energies Phi(r) = r^{p-3} int_{B_r} (|P(R^t Dphi)|^2 + |DR|^p),
    the minimum of Q and the annular deficits
    int_{r_i < |x| <= r_{i+1}} |x|^{p-3} (|DR|^{p-2} |d_rad R|^2 + Q).

    The center node itself, where the radial direction is undefined, is
    left out of every integral.
    """
    p = c.p if p is None else float(p)
    grid = state.grid
    center = np.asarray(center, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or len(radii) == 0 or np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise AnalysisError("radii must be a non-empty increasing list of positive numbers")
    rmax = _max_radius(grid, center)
    if radii[-1] > rmax + 1e-12:
        raise AnalysisError(f"radius {radii[-1]} exceeds the domain around {center} (max {rmax:.6g})")

    x = grid.x - center
    rho = np.linalg.norm(x, axis=1)
    away = rho > 1e-12
    xh = np.zeros_like(x)
    xh[away] = x[away] / rho[away, None]
    w = grid.weights * away

    R = cover(state.quat)
    PG = apply_p(transpose(R) @ grad(state.phi, grid), c)
    trans = alg.inner(PG, PG)
    DR = grad(R, grid)
    dr2 = np.einsum("nijk,nijk->n", DR, DR)
    curv = dr2 ** (p / 2)
    Q = defect_q(state, c, center)
    d_rad = np.einsum("nijk,nk->nij", DR, xh)
    radial = dr2 ** ((p - 2) / 2) * alg.inner(d_rad, d_rad)

    phi_profile, curvature_profile = [], []
    for r in radii:
        inside = rho <= r
        phi_profile.append(r ** (p - 3) * np.dot(w * inside, trans + curv))
        curvature_profile.append(r ** (p - 3) * np.dot(w * inside, curv))
    scale = np.where(away, rho, 1.0) ** (p - 3)
    deficit = []
    for a, b in zip(radii[:-1], radii[1:]):
        shell = (rho > a) & (rho <= b)
        deficit.append(np.dot(w * shell, scale * (radial + Q)))
    return MonotonicityReport(radii=radii, phi_profile=np.array(phi_profile),
                              q_min=float(Q[away].min()), deficit=np.array(deficit),
                              curvature_profile=np.array(curvature_profile), p=p)


def _trilinear(grid, field_full, active, y):
    """Trilinear weights and corner values at points y (M, 3); raises outside the active set."""
    h, L, n = grid.h, grid.spec.extent, grid.n
    s = (y + L) / h
    base = np.floor(s).astype(np.int64)
    base = np.clip(base, 0, n - 2)
    frac = s - base
    if np.any(frac < -1e-9) or np.any(frac > 1 + 1e-9):
        raise AnalysisError("interpolation point outside the grid")
    corners, weights = [], []
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                i, j, k = base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz
                wt = ((frac[:, 0] if dx else 1 - frac[:, 0])
                      * (frac[:, 1] if dy else 1 - frac[:, 1])
                      * (frac[:, 2] if dz else 1 - frac[:, 2]))
                needed = wt > 1e-12
                if np.any(needed & ~active[i, j, k]):
                    raise AnalysisError("interpolation outside the active region")
                corners.append(field_full[i, j, k])
                weights.append(wt)
    return np.stack(corners, axis=1), np.stack(weights, axis=1)


def _blend_quats(q, w):
    # align signs with the heaviest corner before averaging, then renormalize
    ref = q[np.arange(len(q)), np.argmax(w, axis=1)]
    sign = np.sign(np.einsum("mca,ma->mc", q, ref))
    sign[sign == 0] = 1.0
    avg = np.einsum("mc,mca->ma", w * sign, q)
    norm = np.linalg.norm(avg, axis=1, keepdims=True)
    if np.any(norm < 1e-12):
        raise AnalysisError("quaternion interpolation degenerated to zero")
    return avg / norm


def radial_comparison(state: GridState, t, center=(0.0, 0.0, 0.0)) -> GridState:
    """
    Replace the fields inside B_t(center) by their values at the radial
    projection onto the sphere of radius t, i.e. phi_t(x) = phi(center +
    t x^). Values on the sphere are interpolated trilinearly, quaternions
    renormalized. A node sitting exactly at the center takes the average
    of the six axis points of the sphere.
    """
    grid = state.grid
    center = np.asarray(center, dtype=float)
    if not 0 < t <= _max_radius(grid, center) + 1e-12:
        raise AnalysisError(f"t = {t} must be positive and within the domain")
    x = grid.x - center
    rho = np.linalg.norm(x, axis=1)
    inner = np.where(rho < t)[0]
    out = state.copy()
    if len(inner) == 0:
        return out
    act = grid.active
    phi_full = grid.to_full(state.phi)
    q_full = grid.to_full(state.quat)

    at_center = rho[inner] <= 1e-12
    off = inner[~at_center]
    if len(off):
        y = center + t * x[off] / rho[off, None]
        cp, wp = _trilinear(grid, phi_full, act, y)
        cq, wq = _trilinear(grid, q_full, act, y)
        out.phi[off] = np.einsum("mc,mca->ma", wp, cp)
        out.quat[off] = _blend_quats(cq, wq)
    if at_center.any():
        axes = np.concatenate([np.eye(3), -np.eye(3)])
        y = center + t * axes
        cp, wp = _trilinear(grid, phi_full, act, y)
        cq, wq = _trilinear(grid, q_full, act, y)
        phis = np.einsum("mc,mca->ma", wp, cp)
        quats = _blend_quats(cq, wq)
        quats *= np.sign(quats @ quats[0])[:, None]
        mean_q = quats.mean(axis=0)
        for i in inner[at_center]:
            out.phi[i] = phis.mean(axis=0)
            out.quat[i] = mean_q / np.linalg.norm(mean_q)
    # Dirichlet nodes keep their data
    fixed = state.dirichlet
    out.phi[fixed] = state.phi[fixed]
    out.quat[fixed] = state.quat[fixed]
    return GridState(grid, out.phi, out.quat, state.dirichlet.copy())


def ball_energy(state: GridState, c: MaterialParams, r, center=(0.0, 0.0, 0.0), loads=NO_LOADS):
    """Discrete energy restricted to the nodes with |x - center| <= r."""
    rho = np.linalg.norm(state.grid.x - np.asarray(center, dtype=float), axis=1)
    dens = sum(energy_densities(state, c, loads))
    return float(np.dot(state.grid.weights * (rho <= r), dens))
