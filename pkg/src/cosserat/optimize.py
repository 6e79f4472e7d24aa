"""
Riemannian steepest descent for the discrete energy on (R^3 x S^3)^N.

Deformation values move linearly, quaternions through the normalizing
retraction; Dirichlet nodes never change.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .algebra import MaterialParams, retract
from .energy import NO_LOADS, LoadSpec, el_residuals, gradient, total_energy
from .fields import GridState

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERS = "max_iters"
LINE_SEARCH_FAILED = "line_search_failed"


class OptimizeError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerParams:
    max_iters: int = 5000
    grad_tol: float = 1e-8
    step0: float = 1.0
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60

    def __post_init__(self):
        if self.max_iters < 0 or self.max_backtracks < 0:
            raise ValueError("iteration limits must be non-negative")
        if not (self.grad_tol > 0 and self.step0 > 0):
            raise ValueError("grad_tol and step0 must be positive")
        if not (0 < self.armijo_c < 1 and 0 < self.backtrack < 1):
            raise ValueError("armijo_c and backtrack must lie in (0, 1)")


@dataclass
class TraceRow:
    iteration: int
    energy: float
    grad_norm: float
    step: float


@dataclass
class MinimizeResult:
    state: GridState
    trace: list
    status: str
    residual_norms: dict = field(default_factory=dict)

    @property
    def converged(self):
        return self.status == CONVERGED

    @property
    def energies(self):
        return np.array([row.energy for row in self.trace])


def grad_norm(state, g_phi, g_rot):
    """l2 norm of the node gradient divided by h^{3/2} (the discrete L2 dual norm)."""
    h = state.grid.h
    return float(np.sqrt(np.sum(g_phi ** 2) + np.sum(g_rot ** 2)) / h ** 1.5)


def step_state(state: GridState, direction, s):
    """Move free nodes along ``direction`` = (d_phi, d_quat) by step s."""
    d_phi, d_q = direction
    new = state.copy()
    free = ~state.dirichlet
    new.phi[free] = state.phi[free] + s * d_phi[free]
    new.quat[free] = retract(state.quat[free], s * d_q[free])
    return new


def line_search(state: GridState, direction, current_energy, op: OptimizerParams,
                c: MaterialParams, loads: LoadSpec = NO_LOADS, slope=None):
    """
    Backtracking Armijo search over steps step0 * backtrack^k.

    ``slope`` is the directional derivative of the energy along
    ``direction``; by default the steepest-descent value -|direction|^2.
    Returns (step, new_state, new_energy) or None on failure.
    """
    d_phi, d_q = direction
    if slope is None:
        slope = -float(np.sum(d_phi ** 2) + np.sum(d_q ** 2))
    if slope == 0.0 and not (np.any(d_phi) or np.any(d_q)):
        return op.step0, state.copy(), current_energy
    s = op.step0
    for _ in range(op.max_backtracks + 1):
        trial = step_state(state, direction, s)
        e = total_energy(trial, c, loads).total
        if np.isfinite(e) and e < current_energy and e <= current_energy + op.armijo_c * s * slope:
            return s, trial, e
        s *= op.backtrack
    return None


def minimize(state0: GridState, c: MaterialParams, loads: LoadSpec = NO_LOADS,
             op: OptimizerParams = OptimizerParams(), callback=None) -> MinimizeResult:
    if not state0.dirichlet.any():
        raise OptimizeError("minimization needs a nonempty Dirichlet set")
    state = state0.copy()
    energy = total_energy(state, c, loads).total
    if not np.isfinite(energy):
        raise OptimizeError(f"non-finite initial energy {energy}")
    g_phi, g_rot = gradient(state, c, loads)
    gn = grad_norm(state, g_phi, g_rot)
    trace = [TraceRow(0, energy, gn, 0.0)]
    status = MAX_ITERS
    for it in range(1, op.max_iters + 1):
        if gn < op.grad_tol:
            status = CONVERGED
            break
        found = line_search(state, (-g_phi, -g_rot), energy, op, c, loads)
        if found is None:
            status = LINE_SEARCH_FAILED
            log.info("line search failed at iteration %d (energy %.6e, grad %.3e)", it, energy, gn)
            break
        s, state, energy = found
        g_phi, g_rot = gradient(state, c, loads)
        gn = grad_norm(state, g_phi, g_rot)
        if not np.isfinite(gn):
            raise OptimizeError(f"non-finite gradient at iteration {it}")
        trace.append(TraceRow(it, energy, gn, s))
        if callback is not None:
            callback(trace[-1])
    else:
        if gn < op.grad_tol:
            status = CONVERGED
    res = el_residuals(state, c, loads).norms(weights=state.grid.weights)
    return MinimizeResult(state, trace, status, res)


def initial_state(boundary: GridState) -> GridState:
    """
    Default start for boundary data: phi = x on free nodes and each free
    quaternion copied from the nearest Dirichlet node.
    """
    grid = boundary.grid
    free = ~boundary.dirichlet
    phi = boundary.phi.copy()
    phi[free] = grid.x[free]
    quat = boundary.quat.copy()
    fixed = np.where(boundary.dirichlet)[0]
    if free.any():
        _, nearest = cKDTree(grid.x[fixed]).query(grid.x[free])
        quat[free] = boundary.quat[fixed[nearest]]
    return GridState(grid, phi, quat, boundary.dirichlet.copy())
