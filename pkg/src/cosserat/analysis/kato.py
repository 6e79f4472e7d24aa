"""Improved Kato constant and the nonexistence test for p-minimizing tangent maps into S^3."""

from dataclasses import dataclass, field

import numpy as np

from .errors import AnalysisError

EPS_FLOOR = 1e-9
SCAN_DIM = 2


class KatoError(AnalysisError):
    pass


def kato_kappa(m, p, eps):
    """kappa = (m - 1 + (1/eps - 1)(p - 2)^2) / (m - eps)."""
    if int(m) != m or m < 2:
        raise KatoError(f"m must be an integer >= 2, got {m}")
    if not 0 < eps <= 1:
        raise KatoError(f"eps must lie in (0, 1], got {eps}")
    if p < 2:
        raise KatoError(f"p must be >= 2, got {p}")
    s = (p - 2.0) ** 2
    return (m - 1 + (1.0 / eps - 1.0) * s) / (m - eps)


def optimal_eps(m, p):
    """
    The closed-form choice (s + sqrt(s^2 + m (m-1-s) s)) / (m-1-s), s = (p-2)^2,
    clamped to at most 1. Vanishes at p = 2.
    """
    s = (p - 2.0) ** 2
    d = m - 1 - s
    if d <= 0:
        raise KatoError(f"m - 1 - (p-2)^2 = {d} must be positive")
    return min((s + np.sqrt(s * s + m * d * s)) / d, 1.0)


def kappa_argmin(m, p):
    """
    Minimizer of eps -> kato_kappa(m, p, eps) on (0, 1]: the positive root of
    (m-1-s) eps^2 + 2 s eps - m s = 0, clamped to at most 1.
    """
    s = (p - 2.0) ** 2
    d = m - 1 - s
    if d <= 0:
        raise KatoError(f"m - 1 - (p-2)^2 = {d} must be positive")
    return min((-s + np.sqrt(s * s + m * d * s)) / d, 1.0)


def nonexistence_coefficients(p, eps):
    """
    Coefficients (A, B) of the stability estimate for k = n = 3.

    A = (3-p)/(1+p) G - 1/2 and B = (3-p)^2/4 G - 1 with
    G = (2 - eps) / (1 + (1/eps - 1)(p-2)^2) + p - 2. A > 0 together with
    B <= 0 rules out nonconstant tangent maps.
    """
    if not 0 < eps <= 1:
        raise KatoError(f"eps must lie in (0, 1], got {eps}")
    if not 2 <= p < 3:
        raise KatoError(f"p must lie in [2, 3), got {p}")
    s = (p - 2.0) ** 2
    G = (2.0 - eps) / (1.0 + (1.0 / eps - 1.0) * s) + (p - 2.0)
    return (3.0 - p) / (1.0 + p) * G - 0.5, (3.0 - p) ** 2 / 4.0 * G - 1.0


def admissible(A, B):
    return bool(A > 0 and B <= 0)


EPS_RULES = {"closed_form": optimal_eps, "argmin": kappa_argmin}


@dataclass
class ScanRow:
    p: float
    eps_star: float
    kappa: float
    coeff_A: float
    coeff_B: float
    admissible: bool = field(init=False)

    def __post_init__(self):
        self.admissible = admissible(self.coeff_A, self.coeff_B)


@dataclass
class ScanReport:
    rows: list
    eps_rule: str = "closed_form"

    @property
    def threshold(self):
        """Largest p such that every row up to it is admissible (None if p_min fails)."""
        last = None
        for row in self.rows:
            if not row.admissible:
                break
            last = row.p
        return last

    @property
    def is_prefix(self):
        flags = [r.admissible for r in self.rows]
        k = flags.index(False) if False in flags else len(flags)
        return not any(flags[k:])


def scan_row(p, eps_rule="closed_form", m=SCAN_DIM):
    eps = max(EPS_RULES[eps_rule](m, p), EPS_FLOOR)
    A, B = nonexistence_coefficients(p, eps)
    return ScanRow(p=float(p), eps_star=eps, kappa=kato_kappa(m, p, eps), coeff_A=A, coeff_B=B)


def scan_nonexistence(p_min=2.0, p_max=2.5, step=1e-3, eps_rule="closed_form") -> ScanReport:
    if not 2 <= p_min < p_max < 3:
        raise KatoError(f"need 2 <= p_min < p_max < 3, got {p_min}, {p_max}")
    if not step > 0:
        raise KatoError("step must be positive")
    if eps_rule not in EPS_RULES:
        raise KatoError(f"eps_rule must be one of {sorted(EPS_RULES)}")
    count = int(np.floor((p_max - p_min) / step + 1e-9)) + 1
    ps = p_min + step * np.arange(count)
    return ScanReport([scan_row(p, eps_rule) for p in ps], eps_rule)
