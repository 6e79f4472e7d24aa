"""
Uniform 3-D grids, per-node fields and finite-difference operators.

Fields live on the active nodes only: a vector field is an (N, 3) array, a
quaternion field (N, 4), with N the number of active nodes. Derivative
arrays put the derivative direction last, so ``gradient_vector(phi)[n, a, k]``
is d phi_a / d x_k at node n.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .algebra import AlgebraError, check_unit, cover

SHAPES = ("cube", "ball")
QUAT_FILE_TOL = 1e-6


class GridError(ValueError):
    """Invalid grid configuration or stencil failure."""


class StateFileError(ValueError):
    """Malformed or inconsistent state file."""


@dataclass(frozen=True)
class GridSpec:
    n: int
    extent: float = 1.0
    shape: str = "cube"
    puncture_radius: float = 0.0
    trim: bool = True

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 5 or self.n % 2 == 0:
            raise GridError(f"n must be odd and >= 5, got {self.n}")
        if not self.extent > 0:
            raise GridError("extent must be positive")
        if self.shape not in SHAPES:
            raise GridError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if not 0 <= self.puncture_radius < self.extent:
            raise GridError("puncture radius must lie in [0, extent)")

    @property
    def h(self):
        return 2.0 * self.extent / (self.n - 1)

    def to_dict(self):
        return {"n": int(self.n), "extent": float(self.extent), "shape": self.shape,
                "puncture_radius": float(self.puncture_radius), "trim": bool(self.trim)}


def _axis_neighbors(mask, axis):
    """Masks of nodes whose lower / upper neighbor along axis is present."""
    lo = np.zeros_like(mask)
    hi = np.zeros_like(mask)
    sl_a = [slice(None)] * 3
    sl_b = [slice(None)] * 3
    sl_a[axis] = slice(1, None)
    sl_b[axis] = slice(None, -1)
    lo[tuple(sl_a)] = mask[tuple(sl_b)]
    hi[tuple(sl_b)] = mask[tuple(sl_a)]
    return lo & mask, hi & mask


class Grid:
    """
    Geometry of a (possibly ball-shaped, possibly punctured) uniform grid.

    Nodes sit at x(i, j, k) = (-L + i h, -L + j h, -L + k h). A node is
    inside when it lies in the domain shape and outside the puncture. With
    ``spec.trim`` set, inside nodes lacking both neighbors along some axis
    are dropped from the active set, since no difference stencil exists
    for them there.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.n = n = spec.n
        self.h = spec.h
        ax = -spec.extent + self.h * np.arange(n)
        self.axis = ax
        X = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
        self.coords_full = X
        r = np.linalg.norm(X, axis=-1)
        inside = np.ones((n, n, n), dtype=bool)
        if spec.shape == "ball":
            inside &= r <= spec.extent * (1 + 1e-12)
        if spec.puncture_radius > 0:
            inside &= r >= spec.puncture_radius
        self.inside = inside

        active = inside.copy()
        if spec.trim:
            while True:
                isolated = self._isolated(active)
                if not isolated.any():
                    break
                active &= ~isolated
        if not active.any():
            raise GridError("no active nodes: the domain is thinner than the grid resolves")
        self.active = active
        self.pruned = int(inside.sum() - active.sum())
        self.index = np.full((n, n, n), -1, dtype=np.int64)
        self.index[active] = np.arange(int(active.sum()))
        self.x = X[active]
        self.r = np.linalg.norm(self.x, axis=-1)

        lo = np.empty((len(self.x), 3), dtype=bool)
        hi = np.empty_like(lo)
        for k in range(3):
            a, b = _axis_neighbors(active, k)
            lo[:, k] = a[active]
            hi[:, k] = b[active]
        self.has_lo = lo
        self.has_hi = hi
        self.clipped = ~(lo & hi)
        self.boundary = self.clipped.any(axis=1)
        self.central = ~self.boundary

    @staticmethod
    def _isolated(mask):
        out = np.zeros_like(mask)
        for k in range(3):
            lo, hi = _axis_neighbors(mask, k)
            out |= mask & ~lo & ~hi
        return out

    def __len__(self):
        return len(self.x)

    @property
    def size(self):
        return len(self.x)

    @cached_property
    def weights(self):
        """
        Node quadrature weights: h^3, halved once per axis on which the node
        sits on a face of the bounding cube. Nodes clipped by a curved
        boundary (ball surface, puncture) keep the full weight, which is
        the node-indicator rule for those regions.
        """
        ijk = np.argwhere(self.active)
        on_face = (ijk == 0) | (ijk == self.n - 1)
        return self.h ** 3 * 0.5 ** (on_face & self.clipped).sum(axis=1)

    @cached_property
    def D(self):
        """Sparse first-derivative matrices, one per axis, acting on active-node arrays."""
        if (~self.has_lo & ~self.has_hi).any():
            bad = self.x[(~self.has_lo & ~self.has_hi).any(axis=1)][0]
            raise GridError(f"isolated active node at {bad}: no neighbor along some axis")
        N = self.size
        ijk = np.argwhere(self.active)
        rows = np.arange(N)
        ops = []
        for k in range(3):
            step = np.zeros(3, dtype=np.int64)
            step[k] = 1
            up = self._lookup(ijk + step)
            dn = self._lookup(ijk - step)
            lo, hi = self.has_lo[:, k], self.has_hi[:, k]
            both = lo & hi
            r_, c_, v_ = [], [], []
            # central
            r_ += [rows[both], rows[both]]
            c_ += [up[both], dn[both]]
            v_ += [np.full(both.sum(), 0.5 / self.h), np.full(both.sum(), -0.5 / self.h)]
            # forward (no lower neighbor)
            fw = hi & ~lo
            r_ += [rows[fw], rows[fw]]
            c_ += [up[fw], rows[fw]]
            v_ += [np.full(fw.sum(), 1 / self.h), np.full(fw.sum(), -1 / self.h)]
            # backward (no upper neighbor)
            bw = lo & ~hi
            r_ += [rows[bw], rows[bw]]
            c_ += [rows[bw], dn[bw]]
            v_ += [np.full(bw.sum(), 1 / self.h), np.full(bw.sum(), -1 / self.h)]
            mat = sp.csr_matrix((np.concatenate(v_), (np.concatenate(r_), np.concatenate(c_))),
                                shape=(N, N))
            ops.append(mat)
        return ops

    @cached_property
    def DT(self):
        return [d.T.tocsr() for d in self.D]

    def _lookup(self, ijk):
        n = self.n
        ok = np.all((ijk >= 0) & (ijk < n), axis=1)
        out = np.full(len(ijk), -1, dtype=np.int64)
        i, j, k = ijk[ok].T
        out[ok] = self.index[i, j, k]
        return out

    @cached_property
    def neighbors(self):
        """(N, 6) active indices of axis neighbors (-1 where absent)."""
        ijk = np.argwhere(self.active)
        cols = []
        for k in range(3):
            step = np.zeros(3, dtype=np.int64)
            step[k] = 1
            cols += [self._lookup(ijk - step), self._lookup(ijk + step)]
        return np.stack(cols, axis=1)

    @cached_property
    def interior(self):
        """Nodes where nested central differences (divergence of a gradient) are available."""
        nb = self.neighbors
        ok = self.central.copy()
        ok &= np.all(nb >= 0, axis=1)
        ok[ok] &= np.all(self.central[nb[ok]], axis=1)
        return ok

    def to_full(self, values, fill=0.0):
        """Scatter active-node values into a full (n, n, n, ...) array."""
        values = np.asarray(values)
        out = np.full((self.n,) * 3 + values.shape[1:], fill, dtype=values.dtype)
        out[self.active] = values
        return out

    def integrate(self, density, mask=None):
        w = self.weights if mask is None else self.weights * mask
        return float(np.dot(w, density))


def build_grid(spec: GridSpec) -> Grid:
    return Grid(spec)


# ---------------------------------------------------------------------------
# difference operators


def _apply(ops, T):
    """Contract T (N, ..., 3) with a list of three per-axis operators."""
    T = np.asarray(T, dtype=float)
    N = T.shape[0]
    flat = T.reshape(N, -1, 3)
    out = sum(ops[k] @ flat[:, :, k] for k in range(3))
    return np.asarray(out).reshape(T.shape[:-1])


def grad(u, grid: Grid):
    """Gradient of any per-node field u (N, ...) -> (N, ..., 3)."""
    u = np.asarray(u, dtype=float)
    N = u.shape[0]
    flat = u.reshape(N, -1)
    parts = [grid.D[k] @ flat for k in range(3)]
    return np.stack(parts, axis=-1).reshape(u.shape + (3,))


def gradient_vector(phi, grid: Grid):
    """Dphi as (N, 3, 3); column k is the derivative along x_k."""
    return grad(phi, grid)


def gradient_rotation(quat, grid: Grid):
    """DR as (N, 3, 3, 3), differencing the rotation matrices entrywise."""
    return grad(cover(quat), grid)


def divergence(T, grid: Grid):
    """Contract the last (derivative) index of T (N, ..., 3) with the difference operators."""
    return _apply(grid.D, T)


def divergence_adjoint(T, grid: Grid):
    """Adjoint of ``grad``: sum_k D_k^t T[..., k]."""
    return _apply(grid.DT, T)


# ---------------------------------------------------------------------------
# analytic fields

PHI_TAGS = ("identity_phi", "zero_phi", "singular_phi")
ROT_TAGS = ("constant_rot", "singular_rot", "equator_quat")


def _unit_radial(x, what):
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(r < 1e-12):
        raise GridError(f"{what} is undefined at the origin; use a punctured grid")
    return x / r, r


def sample(tag, grid: Grid, q0=None):
    """
    Evaluate an analytic field on the active nodes.

    Vector tags return (N, 3); rotation tags return unit quaternions (N, 4).
    ``singular_rot`` and ``equator_quat`` both give q = (0, x/|x|), whose
    cover is 2 x^ (x) x^ - I.
    """
    x = grid.x
    if tag in ("singular_phi", "singular_rot", "equator_quat") and grid.spec.puncture_radius <= 0:
        raise GridError(f"{tag} needs a punctured grid (puncture_radius > 0)")
    if tag == "identity_phi":
        return x.copy()
    if tag == "zero_phi":
        return np.zeros_like(x)
    if tag == "singular_phi":
        xh, r = _unit_radial(x, tag)
        return 4.0 / 3.0 * x * np.log(r)
    if tag == "constant_rot":
        q0 = np.array([1.0, 0, 0, 0]) if q0 is None else check_unit(np.asarray(q0, dtype=float))
        return np.tile(q0, (len(x), 1))
    if tag in ("singular_rot", "equator_quat"):
        xh, _ = _unit_radial(x, tag)
        return np.concatenate([np.zeros((len(x), 1)), xh], axis=1)
    raise GridError(f"unknown field tag {tag!r}")


# ---------------------------------------------------------------------------
# state


@dataclass
class GridState:
    grid: Grid
    phi: np.ndarray
    quat: np.ndarray
    dirichlet: np.ndarray = field(default=None)

    def __post_init__(self):
        N = self.grid.size
        self.phi = np.array(self.phi, dtype=float)
        self.quat = np.array(self.quat, dtype=float)
        if self.phi.shape != (N, 3) or self.quat.shape != (N, 4):
            raise GridError(f"field shapes {self.phi.shape}, {self.quat.shape} do not match {N} active nodes")
        try:
            check_unit(self.quat)
        except AlgebraError as exc:
            raise GridError(str(exc)) from None
        if self.dirichlet is None:
            self.dirichlet = self.grid.boundary.copy()
        self.dirichlet = np.asarray(self.dirichlet, dtype=bool)
        if self.dirichlet.shape != (N,):
            raise GridError("dirichlet mask has the wrong length")
        if np.any(self.grid.boundary & ~self.dirichlet):
            raise GridError("dirichlet mask must cover every boundary node")

    @property
    def spec(self):
        return self.grid.spec

    @property
    def rot(self):
        return cover(self.quat)

    def copy(self):
        return GridState(self.grid, self.phi.copy(), self.quat.copy(), self.dirichlet.copy())

    @classmethod
    def from_tags(cls, grid, phi="identity_phi", rot="constant_rot", q0=None):
        phi_v = sample(phi, grid) if isinstance(phi, str) else phi
        rot_v = sample(rot, grid, q0=q0) if isinstance(rot, str) else rot
        return cls(grid, phi_v, rot_v)


def _node_major(full):
    # x-fastest node order: flat index = i + n j + n^2 k
    return np.ascontiguousarray(np.swapaxes(full, 0, 2)).reshape(-1)


def _from_node_major(flat, n, comps):
    arr = np.asarray(flat, dtype=float).reshape((n, n, n) + ((comps,) if comps else ()))
    return np.swapaxes(arr, 0, 2)


def write_state(state: GridState, path):
    grid = state.grid
    doc = {
        "spec": grid.spec.to_dict(),
        "phi": _node_major(grid.to_full(state.phi)).tolist(),
        "quat": _node_major(grid.to_full(state.quat)).tolist(),
        "masks": {
            "active": _node_major(grid.active.astype(np.int8)).tolist(),
            "dirichlet": _node_major(grid.to_full(state.dirichlet.astype(np.int8))).tolist(),
        },
    }
    Path(path).write_text(json.dumps(doc))


def read_state(path) -> GridState:
    try:
        doc = json.loads(Path(path).read_text())
        spec = GridSpec(**doc["spec"])
        phi_flat, quat_flat = doc["phi"], doc["quat"]
        masks = doc["masks"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise StateFileError(f"malformed state file {path}: {exc}") from None
    n = spec.n
    if len(phi_flat) != 3 * n ** 3 or len(quat_flat) != 4 * n ** 3:
        raise StateFileError(
            f"grid mismatch: expected {3 * n ** 3} phi and {4 * n ** 3} quat values for n={n}")
    grid = build_grid(spec)
    active = _from_node_major(masks["active"], n, 0).astype(bool)
    if active.shape != grid.active.shape or np.any(active != grid.active):
        raise StateFileError("grid mismatch: active mask differs from the grid built from the stored parameters")
    phi = _from_node_major(phi_flat, n, 3)[grid.active]
    quat = _from_node_major(quat_flat, n, 4)[grid.active]
    dev = np.abs(np.sum(quat ** 2, axis=-1) - 1.0)
    if np.any(dev > QUAT_FILE_TOL):
        raise StateFileError(f"non-unit quaternion in file (deviation {dev.max():.3e})")
    if np.any(dev > 1e-8):
        quat = quat / np.linalg.norm(quat, axis=-1, keepdims=True)
    dirichlet = _from_node_major(masks["dirichlet"], n, 0).astype(bool)[grid.active]
    return GridState(grid, phi, quat, dirichlet)
