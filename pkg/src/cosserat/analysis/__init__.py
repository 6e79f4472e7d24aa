"""Diagnostics for the singular pair, scaled ball energies and the Kato nonexistence test."""

from .equator import equator_closed_form, equator_energy
from .errors import AnalysisError
from .kato import (EPS_FLOOR, KatoError, ScanReport, ScanRow, kappa_argmin, kato_kappa,
                   nonexistence_coefficients, optimal_eps, scan_nonexistence)
from .monotonicity import (MonotonicityReport, ball_energy, defect_q, monotonicity_profile,
                           radial_comparison, singular_profile_constant)
from .singular import (SingularBundle, SingularReport, curvature_divergence, orthogonality_defect,
                       singular_bundle, singular_state, verify_singular)
