"""
Discrete Cosserat energy, its exact gradient and Euler-Lagrange residuals.

The discrete functional is

    E = sum_n w_n ( |P(R^t Dphi - I)|^2 + |DR|^p + phi . f + R : M )

with node weights w_n from the grid and Dphi, DR from the grid's
difference operators. ``gradient`` differentiates exactly this sum.
"""

from dataclasses import dataclass, field

import numpy as np

from . import algebra as alg
from .algebra import MaterialParams, apply_p, apply_p2, cover, transpose
from .fields import Grid, GridState, divergence, divergence_adjoint, grad


class EnergyError(ValueError):
    pass


@dataclass
class LoadSpec:
    """
    Body force f and moment M.

    Each may be None (zero), an array on the active nodes ((N, 3) for f,
    (N, 3, 3) for M), a constant of the per-node shape, or a callable
    taking node coordinates (N, 3).
    """

    f: object = None
    M: object = None

    def resolve(self, grid: Grid):
        return (_resolve(self.f, grid, (3,), "f"), _resolve(self.M, grid, (3, 3), "M"))

    @property
    def is_zero(self):
        return self.f is None and self.M is None


def _resolve(value, grid, shape, name):
    N = grid.size
    if value is None:
        return None
    if callable(value):
        value = value(grid.x)
    arr = np.asarray(value, dtype=float)
    if arr.shape == shape:
        arr = np.broadcast_to(arr, (N,) + shape)
    if arr.shape != (N,) + shape:
        raise EnergyError(f"load {name} has shape {arr.shape}, expected {(N,) + shape}")
    if not np.all(np.isfinite(arr)):
        raise EnergyError(f"load {name} has non-finite entries")
    return arr


NO_LOADS = LoadSpec()


@dataclass
class EnergyBreakdown:
    translational: float
    curvature: float
    force: float
    moment: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.translational + self.curvature + self.force + self.moment

    def as_dict(self):
        return {"translational": self.translational, "curvature": self.curvature,
                "force": self.force, "moment": self.moment, "total": self.total}


@dataclass
class _Kinematics:
    R: np.ndarray
    F: np.ndarray
    A: np.ndarray
    DR: np.ndarray
    dr2: np.ndarray


def _kinematics(state: GridState):
    grid = state.grid
    R = cover(state.quat)
    F = grad(state.phi, grid)
    A = transpose(R) @ F - np.eye(3)
    DR = grad(R, grid)
    dr2 = np.einsum("nijk,nijk->n", DR, DR)
    return _Kinematics(R, F, A, DR, dr2)


def energy_densities(state: GridState, c: MaterialParams, loads: LoadSpec = NO_LOADS):
    """Per-node densities (translational, curvature, force, moment)."""
    kin = _kinematics(state)
    PA = apply_p(kin.A, c)
    trans = np.einsum("nij,nij->n", PA, PA)
    curv = kin.dr2 ** (c.p / 2)
    f, M = loads.resolve(state.grid)
    force = np.zeros(state.grid.size) if f is None else np.einsum("na,na->n", state.phi, f)
    moment = np.zeros(state.grid.size) if M is None else np.einsum("nij,nij->n", kin.R, M)
    return trans, curv, force, moment


def total_energy(state: GridState, c: MaterialParams, loads: LoadSpec = NO_LOADS) -> EnergyBreakdown:
    w = state.grid.weights
    parts = [float(np.dot(w, d)) for d in energy_densities(state, c, loads)]
    return EnergyBreakdown(*parts)


def gradient(state: GridState, c: MaterialParams, loads: LoadSpec = NO_LOADS):
    """
    Exact gradient of ``total_energy`` with respect to the node values.

    Returns
    -------
    g_phi : ndarray (N, 3)
    g_rot : ndarray (N, 4)
        Tangent to S^3 at each node quaternion.

    Both vanish on Dirichlet nodes.
    """
    if c.p < 2:
        raise EnergyError("p must be >= 2 for a differentiable curvature term")
    grid = state.grid
    w = grid.weights
    kin = _kinematics(state)
    S = apply_p2(kin.A, c)
    # d/dF of w |P(R^t F - I)|^2 is 2 w R P^2(A); d/dR is 2 w F P^2(A)^t
    g_phi = divergence_adjoint(2.0 * w[:, None, None] * (kin.R @ S), grid)
    dE_dR = 2.0 * w[:, None, None] * (kin.F @ transpose(S))
    scale = c.p * kin.dr2 ** ((c.p - 2) / 2)
    dE_dR = dE_dR + divergence_adjoint((w * scale)[:, None, None, None] * kin.DR, grid)
    f, M = loads.resolve(grid)
    if f is not None:
        g_phi = g_phi + w[:, None] * f
    if M is not None:
        dE_dR = dE_dR + w[:, None, None] * M
    g_rot = alg.pullback_to_quat(state.quat, dE_dR)
    g_phi[state.dirichlet] = 0.0
    g_rot[state.dirichlet] = 0.0
    return g_phi, g_rot


@dataclass
class Residuals:
    res_phi: np.ndarray
    res_rot: np.ndarray
    valid: np.ndarray

    @property
    def skipped(self):
        return int((~self.valid).sum())

    def norms(self, mask=None, weights=None):
        m = self.valid if mask is None else self.valid & mask
        rp = np.linalg.norm(self.res_phi[m], axis=-1)
        rr = alg.frob(self.res_rot[m])
        out = {"max_phi": float(rp.max(initial=0.0)), "max_rot": float(rr.max(initial=0.0))}
        if weights is not None:
            wm = weights[m]
            out["l2_phi"] = float(np.sqrt(np.dot(wm, rp ** 2)))
            out["l2_rot"] = float(np.sqrt(np.dot(wm, rr ** 2)))
        return out


def el_residuals(state: GridState, c: MaterialParams, loads: LoadSpec = NO_LOADS) -> Residuals:
    """
    Euler-Lagrange residuals

        res_phi = div(R P^2(R^t Dphi - I)) - f
        res_rot = proj_{T_R SO(3)} ( div(|DR|^{p-2} DR)
                                     - (2/p) Dphi P^2(Dphi^t R - I) - M/p )

    Only nodes with complete nested central stencils are valid; the rest
    are zeroed and counted in ``skipped``.
    """
    grid = state.grid
    p = c.p
    kin = _kinematics(state)
    f, M = loads.resolve(grid)
    stress = kin.R @ apply_p2(kin.A, c)
    res_phi = divergence(stress, grid)
    if f is not None:
        res_phi = res_phi - f
    flux = (kin.dr2 ** ((p - 2) / 2))[:, None, None, None] * kin.DR
    B = transpose(kin.F) @ kin.R - np.eye(3)
    normal = divergence(flux, grid) - (2.0 / p) * (kin.F @ apply_p2(B, c))
    if M is not None:
        normal = normal - M / p
    res_rot = alg.tangent_project(kin.R, normal)
    valid = grid.interior.copy()
    res_phi[~valid] = 0.0
    res_rot[~valid] = 0.0
    return Residuals(res_phi, res_rot, valid)


# ---------------------------------------------------------------------------
# growth and convexity probes for the p = 2 integrand


def integrand_w(y2, z1, z2, c: MaterialParams):
    """
    W(y, z) = mu_e |dev sym y2^t z1|^2 + mu_c |skew y2^t z1|^2
              + mu_0 (tr y2^t z1 - 3)^2 + |z2|^2
    for batches y2 (..., 3, 3), z1 (..., 3, 3), z2 (..., 3, 3, 3).
    """
    G = transpose(y2) @ z1
    dev, skw, tr = alg.decompose(G, c.deviator)
    return (c.mu_e * alg.inner(dev, dev) + c.mu_c * alg.inner(skw, skw)
            + c.mu_0 * (tr - 3.0) ** 2 + np.einsum("...ijk,...ijk->...", z2, z2))


def default_growth_constant(c: MaterialParams):
    return max(c.mu_c, c.mu_e, c.mu_0, 1.0)


@dataclass
class GrowthReport:
    samples: int
    constant: float
    lower_violations: int
    upper_violations: int
    convexity_violations: int
    worst_lower_margin: float
    worst_upper_margin: float
    worst_convexity_margin: float

    @property
    def ok(self):
        return self.lower_violations == self.upper_violations == self.convexity_violations == 0


def check_growth_convexity(c: MaterialParams, sample_count=10_000, rng=None, constant=None,
                           offset=18.0, scale_range=(0.1, 10.0)):
    """
    Random probe of c^{-1}|z|^2 - 18 <= W(y, z) <= c|z|^2 + 18 and of
    midpoint convexity of W in z.

    z entries are Gaussian with a per-sample scale drawn log-uniformly
    from ``scale_range``. Margins are reported as (bound side) minus
    (other side), so negative means violated.
    """
    if c.p != 2:
        raise EnergyError("the growth probe is stated for p = 2")
    rng = np.random.default_rng(rng)
    k = default_growth_constant(c) if constant is None else float(constant)
    m = int(sample_count)
    y2 = cover(alg.random_unit_quat(rng, m))
    lo, hi = np.log10(scale_range[0]), np.log10(scale_range[1])
    s = 10.0 ** rng.uniform(lo, hi, size=m)
    z1 = s[:, None, None] * rng.standard_normal((m, 3, 3))
    z2 = s[:, None, None, None] * rng.standard_normal((m, 3, 3, 3))
    z1b = s[:, None, None] * rng.standard_normal((m, 3, 3))
    z2b = s[:, None, None, None] * rng.standard_normal((m, 3, 3, 3))

    W = integrand_w(y2, z1, z2, c)
    z_sq = alg.inner(z1, z1) + np.einsum("nijk,nijk->n", z2, z2)
    lower = W - (z_sq / k - offset)
    upper = (k * z_sq + offset) - W
    Wb = integrand_w(y2, z1b, z2b, c)
    Wm = integrand_w(y2, 0.5 * (z1 + z1b), 0.5 * (z2 + z2b), c)
    conv = 0.5 * (W + Wb) - Wm
    conv_tol = 1e-12 * (1.0 + np.abs(W) + np.abs(Wb))
    return GrowthReport(
        samples=m, constant=k,
        lower_violations=int((lower < 0).sum()),
        upper_violations=int((upper < 0).sum()),
        convexity_violations=int((conv < -conv_tol).sum()),
        worst_lower_margin=float(lower.min()),
        worst_upper_margin=float(upper.min()),
        worst_convexity_margin=float(conv.min()),
    )


# ---------------------------------------------------------------------------
# finite-difference oracle


def _perturbed(state, nodes, coord, delta):
    s = state.copy()
    if coord < 3:
        s.phi[nodes, coord] += delta
    else:
        q = s.quat[nodes].copy()
        q[:, coord - 3] += delta
        s.quat[nodes] = q / np.linalg.norm(q, axis=1, keepdims=True)
    return s


def fd_gradient(state: GridState, c: MaterialParams, loads: LoadSpec = NO_LOADS, step=1e-5):
    """
    Central finite differences of the discrete energy at every free node.

    Quaternion coordinates are perturbed and renormalized, so the result is
    the tangential gradient on S^3. Nodes whose index differs by a multiple
    of 3 on every axis never share a difference stencil, so each of the 27
    residue classes is perturbed at once and the energy change is summed
    over each perturbed node's stencil neighborhood.
    """
    grid = state.grid
    w = grid.weights
    ijk = np.argwhere(grid.active)
    color = (ijk % 3) @ np.array([9, 3, 1])
    free = ~state.dirichlet
    nb = grid.neighbors
    g = np.zeros((grid.size, 7))
    for col in range(27):
        nodes = np.where((color == col) & free)[0]
        if len(nodes) == 0:
            continue
        hood = np.concatenate([nodes[:, None], nb[nodes]], axis=1)
        present = hood >= 0
        safe = np.where(present, hood, 0)
        for coord in range(7):
            e = []
            for sign in (1.0, -1.0):
                dens = sum(energy_densities(_perturbed(state, nodes, coord, sign * step), c, loads))
                e.append(np.sum(np.where(present, (w * dens)[safe], 0.0), axis=1))
            g[nodes, coord] = (e[0] - e[1]) / (2 * step)
    return g[:, :3], g[:, 3:]


def fd_gradient_bruteforce(state: GridState, c: MaterialParams, loads: LoadSpec = NO_LOADS, step=1e-5):
    """Node-by-node central differences of ``total_energy``; slow, for small grids."""
    g = np.zeros((state.grid.size, 7))
    for i in np.where(~state.dirichlet)[0]:
        for coord in range(7):
            ep = total_energy(_perturbed(state, [i], coord, step), c, loads).total
            em = total_energy(_perturbed(state, [i], coord, -step), c, loads).total
            g[i, coord] = (ep - em) / (2 * step)
    return g[:, :3], g[:, 3:]


def gradient_mismatch(state: GridState, c: MaterialParams, loads: LoadSpec = NO_LOADS, step=1e-5):
    """Relative l2 distance between the analytic and finite-difference gradients."""
    gp, gr = gradient(state, c, loads)
    fp, fr = fd_gradient(state, c, loads, step)
    num = np.sqrt(np.sum((gp - fp) ** 2) + np.sum((gr - fr) ** 2))
    den = np.sqrt(np.sum(fp ** 2) + np.sum(fr ** 2))
    return float(num / den) if den > 0 else float(num)
