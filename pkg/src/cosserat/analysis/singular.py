"""
Closed forms of the explicit singular pair

    phi(x) = 4/3 x log|x|,    R(x) = 2 x^ (x) x^ - I,

and a grid-refinement check that it solves the Euler-Lagrange system away
from the origin.
"""

from dataclasses import dataclass, field

import numpy as np

from .. import algebra as alg
from ..algebra import MaterialParams
from ..energy import el_residuals
from ..fields import GridSpec, GridState, build_grid
from .errors import AnalysisError

MIN_RADIUS = 1e-8


@dataclass
class SingularBundle:
    x: np.ndarray
    p: float
    phi: np.ndarray
    rot: np.ndarray
    d_phi: np.ndarray
    lap_phi: np.ndarray
    div_rot: np.ndarray
    d_rot: np.ndarray
    div_stress_closed_form: np.ndarray


def singular_bundle(x, p=2.0) -> SingularBundle:
    """
    Evaluate the singular pair and its derivatives at a point x != 0.

    ``d_rot[i, j, k]`` is d R_ij / d x_k. ``div_stress_closed_form`` is
    (2/|x|)^p (I - 3 x^ (x) x^), the divergence of |DR|^{p-2} DR under a
    tensor norm with |DR|^2 = 4/|x|^2; see ``curvature_divergence`` for the
    value under the Frobenius norm used by the solver.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (3,):
        raise AnalysisError("x must be a single point in R^3")
    r = float(np.linalg.norm(x))
    if r <= MIN_RADIUS:
        raise AnalysisError(f"|x| = {r:.3e} is too close to the singularity")
    if not 2 <= p <= 3:
        raise AnalysisError(f"p must lie in [2, 3], got {p}")
    I = np.eye(3)
    xh = x / r
    xx = np.outer(xh, xh)
    d_rot = (2.0 * (np.einsum("ik,j->ijk", I, x) + np.einsum("i,jk->ijk", x, I)) / r ** 2
             - 4.0 * np.einsum("i,j,k->ijk", x, x, x) / r ** 4)
    return SingularBundle(
        x=x, p=float(p),
        phi=4.0 / 3.0 * x * np.log(r),
        rot=2.0 * xx - I,
        d_phi=4.0 / 3.0 * (np.log(r) * I + xx),
        lap_phi=4.0 * x / r ** 2,
        div_rot=4.0 * x / r ** 2,
        d_rot=d_rot,
        div_stress_closed_form=(2.0 / r) ** p * (I - 3.0 * xx),
    )


def curvature_divergence(x, p):
    """div(|DR|^{p-2} DR) for the singular rotation with the Frobenius norm: 2^{2p-2}/|x|^p (I - 3 x^ (x) x^)."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)[..., None, None]
    xh = x / r[..., 0]
    return 2.0 ** (2 * p - 2) / r ** p * (np.eye(3) - 3.0 * np.einsum("...i,...j->...ij", xh, xh))


def orthogonality_defect(count=1000, rng=None):
    """
    Largest entry of proj_{T_R SO(3)}(a I + b x (x) x) over random points x
    in the unit ball and random scalars a, b; zero in exact arithmetic.
    """
    rng = np.random.default_rng(rng)
    x = rng.uniform(-1.0, 1.0, size=(count, 3))
    x = x[np.linalg.norm(x, axis=1) > 1e-3]
    xh = x / np.linalg.norm(x, axis=1, keepdims=True)
    R = 2.0 * np.einsum("ni,nj->nij", xh, xh) - np.eye(3)
    a, b = rng.standard_normal((2, len(x)))
    N = a[:, None, None] * np.eye(3) + b[:, None, None] * np.einsum("ni,nj->nij", x, x)
    return float(np.abs(alg.tangent_project(R, N)).max())


def singular_state(spec: GridSpec) -> GridState:
    grid = build_grid(spec)
    return GridState.from_tags(grid, "singular_phi", "singular_rot")


@dataclass
class SingularReport:
    p: float
    sizes: tuple
    norms: list
    common_norms: list
    orders: dict
    orthogonality: float
    deviator: str
    skipped: list = field(default_factory=list)

    @property
    def ok(self):
        return min(self.orders.values()) >= 1.0 and self.orthogonality <= 1e-12


def _common_points(coarse, fine):
    """Coarse-grid residual-valid nodes and their indices on the fine grid."""
    mask = coarse.grid.interior.copy()
    pts = coarse.grid.x[mask]
    g = fine.grid
    ijk = np.rint((pts + g.spec.extent) / g.h).astype(np.int64)
    idx = g.index[ijk[:, 0], ijk[:, 1], ijk[:, 2]]
    keep = idx >= 0
    keep[keep] &= g.interior[idx[keep]]
    return np.where(mask)[0][keep], idx[keep]


def verify_singular(p=2.0, sizes=(17, 33), c: MaterialParams = None, puncture_cells=3.0,
                    shape="ball", rng=None) -> SingularReport:
    """
    Sample the singular pair on successively refined punctured grids and
    measure how fast the Euler-Lagrange residuals shrink.

    Norms are compared at the nodes of the coarsest grid that are residual
    points on every level, so each level is measured on the same set of
    points. With the default constants (all weights 1, ``deviator =
    "literal"``) P is the identity, which is the setting where the pair
    solves the system.
    """
    if not 2 <= p < 3:
        raise AnalysisError(f"p must lie in [2, 3), got {p}")
    if len(sizes) < 2:
        raise AnalysisError("need at least two grid sizes")
    if c is None:
        c = MaterialParams(p=p, deviator="literal")
    elif c.p != p:
        raise AnalysisError("material exponent disagrees with p")
    states, residuals, norms, skipped = [], [], [], []
    for n in sizes:
        spec = GridSpec(n=n, shape=shape, puncture_radius=puncture_cells * 2.0 / (n - 1))
        st = singular_state(spec)
        res = el_residuals(st, c)
        states.append(st)
        residuals.append(res)
        norms.append(res.norms(weights=st.grid.weights))
        skipped.append(res.skipped)

    coarse = states[0]
    base = coarse.grid.interior.copy()
    maps = [np.arange(coarse.grid.size)]
    for st in states[1:]:
        ci, fi = _common_points(coarse, st)
        keep = np.isin(np.arange(coarse.grid.size), ci)
        base &= keep
        full = np.full(coarse.grid.size, -1)
        full[ci] = fi
        maps.append(full)
    pts = np.where(base)[0]
    w = coarse.grid.weights[pts]
    common = []
    for res, m in zip(residuals, maps):
        idx = m[pts]
        rp = np.linalg.norm(res.res_phi[idx], axis=-1)
        rr = alg.frob(res.res_rot[idx])
        common.append({"max_phi": float(rp.max()), "max_rot": float(rr.max()),
                       "l2_phi": float(np.sqrt(np.dot(w, rp ** 2))),
                       "l2_rot": float(np.sqrt(np.dot(w, rr ** 2)))})

    orders = {}
    for key in ("max_phi", "max_rot", "l2_phi", "l2_rot"):
        a, b = common[-2][key], common[-1][key]
        ratio = (sizes[-1] - 1) / (sizes[-2] - 1)
        if a < 1e-12 and b < 1e-12:
            # exact at round-off on both levels; no rate to measure
            orders[key] = np.inf
        else:
            orders[key] = float(np.log(a / max(b, 1e-300)) / np.log(ratio))
    return SingularReport(p=p, sizes=tuple(sizes), norms=norms, common_norms=common,
                          orders=orders, orthogonality=orthogonality_defect(rng=rng),
                          deviator=c.deviator, skipped=skipped)
