"""
Matrix and rotation algebra for the Cosserat functional.

All routines operate on numpy arrays with leading batch dimensions:
matrices have shape (..., 3, 3), quaternions shape (..., 4) stored as
(w, x, y, z).
"""

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-8
TANGENT_TOL = 1e-10

DEVIATORS = ("tracefree", "literal")


class AlgebraError(ValueError):
    """Raised on inputs outside an operation's domain."""


@dataclass(frozen=True)
class MaterialParams:
    """
    Constants of the Cosserat energy.

    Parameters
    ----------
    mu_e, mu_c, mu_0 : float
        Positive weights of the deviatoric symmetric, skew and trace parts.
    p : float
        Curvature exponent, p >= 2.
    deviator : {"tracefree", "literal"}
        "tracefree" uses sym A - (tr A / 3) I, which makes the three parts
        orthogonal. "literal" uses sym A - (tr A) I, under which P is the
        identity when all three constants equal 1.
    """

    mu_e: float = 1.0
    mu_c: float = 1.0
    mu_0: float = 1.0
    p: float = 2.0
    deviator: str = "tracefree"

    def __post_init__(self):
        for name in ("mu_e", "mu_c", "mu_0"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise AlgebraError(f"{name} must be > 0, got {value}")
        if not np.isfinite(self.p) or self.p < 2:
            raise AlgebraError(f"exponent p must satisfy p >= 2, got {self.p}")
        if self.deviator not in DEVIATORS:
            raise AlgebraError(f"deviator must be one of {DEVIATORS}")


def frob(A):
    """Frobenius norm over the trailing two axes."""
    return np.sqrt(np.einsum("...ij,...ij->...", A, A))


def inner(A, B):
    """Frobenius inner product over the trailing two axes."""
    return np.einsum("...ij,...ij->...", A, B)


def transpose(A):
    return np.swapaxes(A, -1, -2)


def sym(A):
    return 0.5 * (A + transpose(A))


def skew(A):
    return 0.5 * (A - transpose(A))


def trace(A):
    return np.trace(A, axis1=-2, axis2=-1)


def decompose(A, deviator="tracefree"):
    """
    Split A into deviatoric symmetric part, skew part and trace.

    With the default convention A = dev + skw + (tr / 3) I and the three
    pieces are mutually orthogonal.

    Returns
    -------
    dev, skw : ndarray (..., 3, 3)
    tr : ndarray (...)
    """
    A = np.asarray(A, dtype=float)
    tr = trace(A)
    shift = tr / 3.0 if deviator == "tracefree" else tr
    dev = sym(A) - shift[..., None, None] * np.eye(3)
    return dev, skew(A), tr


def apply_p(A, c: MaterialParams):
    """Apply P: A -> sqrt(mu_e) dev sym A + sqrt(mu_c) skew A + sqrt(mu_0) (tr A) I."""
    dev, skw, tr = decompose(A, c.deviator)
    return (np.sqrt(c.mu_e) * dev + np.sqrt(c.mu_c) * skw
            + np.sqrt(c.mu_0) * tr[..., None, None] * np.eye(3))


def apply_p2(A, c: MaterialParams):
    # P is self-adjoint, so the first variation of |PA|^2 is 2 P(P(A)).
    return apply_p(apply_p(A, c), c)


def check_unit(q, tol=UNIT_TOL):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise AlgebraError(f"quaternions need a trailing axis of 4, got {q.shape}")
    dev = np.abs(np.einsum("...a,...a->...", q, q) - 1.0)
    if np.any(dev > tol):
        raise AlgebraError(
            f"non-unit quaternion (max |q|^2 deviation {np.max(dev):.3e})")
    return q


def quat_mul(q1, q2):
    """Hamilton product of quaternions (w, x, y, z)."""
    w1, x1, y1, z1 = np.moveaxis(np.asarray(q1, dtype=float), -1, 0)
    w2, x2, y2, z2 = np.moveaxis(np.asarray(q2, dtype=float), -1, 0)
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def _cover(q):
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * y * y - 2 * z * z
    R[..., 0, 1] = 2 * x * y - 2 * z * w
    R[..., 0, 2] = 2 * x * z + 2 * y * w
    R[..., 1, 0] = 2 * x * y + 2 * z * w
    R[..., 1, 1] = 1 - 2 * x * x - 2 * z * z
    R[..., 1, 2] = 2 * y * z - 2 * x * w
    R[..., 2, 0] = 2 * x * z - 2 * y * w
    R[..., 2, 1] = 2 * y * z + 2 * x * w
    R[..., 2, 2] = 1 - 2 * x * x - 2 * y * y
    return R


def cover(q):
    """Double cover S^3 -> SO(3) applied to unit quaternions of shape (..., 4)."""
    return _cover(check_unit(q))


def cover_jacobian(q):
    """
    Partial derivatives of the cover formula with respect to (w, x, y, z).

    Returns an array of shape (..., 4, 3, 3). The formula is evaluated as a
    polynomial on R^4, so only tangential contractions are meaningful.
    """
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    zero = np.zeros_like(w)
    rows = [
        [[zero, -2 * z, 2 * y], [2 * z, zero, -2 * x], [-2 * y, 2 * x, zero]],
        [[zero, 2 * y, 2 * z], [2 * y, -4 * x, -2 * w], [2 * z, 2 * w, -4 * x]],
        [[-4 * y, 2 * x, 2 * w], [2 * x, zero, 2 * z], [-2 * w, 2 * z, -4 * y]],
        [[-4 * z, -2 * w, 2 * x], [2 * w, -4 * z, 2 * y], [2 * x, 2 * y, zero]],
    ]
    J = np.array(rows)  # (4, 3, 3, ...)
    return np.moveaxis(J, (0, 1, 2), (-3, -2, -1))


def cover_differential(q, v):
    """Differential of the cover at q applied to a tangent vector v (v . q = 0)."""
    q = check_unit(q)
    v = np.asarray(v, dtype=float)
    if np.any(np.abs(np.einsum("...a,...a->...", q, v)) > TANGENT_TOL * (1 + np.linalg.norm(v, axis=-1))):
        raise AlgebraError("v is not tangent to S^3 at q")
    return np.einsum("...a,...aij->...ij", v, cover_jacobian(q))


def pullback_to_quat(q, G):
    """
    Chain rule through the cover: turn dE/dR (..., 3, 3) into the tangential
    gradient with respect to the quaternion coordinates (..., 4).
    """
    g = np.einsum("...ij,...aij->...a", G, cover_jacobian(q))
    return project_s3(q, g)


def project_s3(q, v):
    """Remove the component of v along q."""
    return v - np.einsum("...a,...a->...", q, v)[..., None] * q


def tangent_project(R, A):
    """Orthogonal projection of A onto the tangent space T_R SO(3): R skew(R^t A)."""
    return R @ skew(transpose(R) @ A)


def retract(q, v):
    """Retraction (q + v) / |q + v| on S^3."""
    s = np.asarray(q, dtype=float) + np.asarray(v, dtype=float)
    norm = np.linalg.norm(s, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise AlgebraError("degenerate retraction: q + v vanishes (step too long)")
    return s / norm


def is_rotation(R, tol=1e-10):
    R = np.asarray(R, dtype=float)
    ortho = np.abs(transpose(R) @ R - np.eye(3)).max() <= tol
    return bool(ortho and np.abs(np.linalg.det(R) - 1.0).max() <= tol)


def random_unit_quat(rng, size=()):
    size = (size,) if np.isscalar(size) else tuple(size)
    q = rng.standard_normal(size + (4,))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)
