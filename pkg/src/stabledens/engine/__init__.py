"""Series engine package: model/grid descriptions, the recursion core, and
the high-level density operations."""

from .core import ParametrixEngine, SeriesError
from .grid import DensityField, GridSpec, grid_for
from .model import ACoeff, ModelSpec, a_benchmark, a_constant, rho_k
from .ops import (
    backward_point,
    eval_dt_p0,
    eval_dt_phi,
    eval_p0,
    eval_p_tilde,
    eval_phi,
    forward_point,
    p_tilde_center,
    space_convolve,
    time_integral_substituted,
    time_space_convolve,
)
from .series import (
    PsiChain,
    chapman_kolmogorov_check,
    compute_density,
    compute_psi,
    decompose_tilde,
    psi_residual,
)

__all__ = [
    "ACoeff",
    "DensityField",
    "GridSpec",
    "ModelSpec",
    "ParametrixEngine",
    "PsiChain",
    "SeriesError",
    "a_benchmark",
    "a_constant",
    "backward_point",
    "chapman_kolmogorov_check",
    "compute_density",
    "compute_psi",
    "decompose_tilde",
    "eval_dt_p0",
    "eval_dt_phi",
    "eval_p0",
    "eval_p_tilde",
    "eval_phi",
    "forward_point",
    "grid_for",
    "p_tilde_center",
    "psi_residual",
    "rho_k",
    "space_convolve",
    "time_integral_substituted",
    "time_space_convolve",
]
