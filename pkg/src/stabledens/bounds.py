"""Majorant kernels G, H, Q and the numerical certificates behind the
series convergence: sub-convolution ratios, Gamma-damped term majorants,
and kernel comparison constants.

The constants certified here are existential in the underlying estimates;
the engine only consumes the empirical ratios, so sweeps record them
instead of asserting theoretical values.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from ._util import trapezoid_weights


def eval_G(lam: float, x, dim: int = 1):
    """(|x| v 1)^(-d - lam); decreasing in lam, equals 1 on the unit ball."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    x = np.asarray(x, dtype=float)
    r = np.abs(x) if dim == 1 else np.linalg.norm(x, axis=-1)
    return np.maximum(r, 1.0) ** (-(dim + lam))


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of the H/Q kernel family.

    kappa_fn(t, y) must return the backward-flow recentering point; use
    lambda t, y: y for zero drift.
    """

    lam: float
    alpha: float
    dim: int = 1
    kappa_fn: callable = None

    def __post_init__(self):
        if not 0.0 <= self.lam < self.alpha:
            raise ValueError(
                f"lambda must lie in [0, alpha): got {self.lam} vs alpha={self.alpha}"
            )

    def _kappa(self, t, y):
        if self.kappa_fn is None:
            return np.asarray(y, dtype=float)
        return self.kappa_fn(t, y)


def _scaled_arg(spec, t, x, y):
    w = spec._kappa(t, y) - np.asarray(x, dtype=float)
    return w / t ** (1.0 / spec.alpha)


def eval_H(spec: KernelSpec, t: float, x, y):
    """((|z|^lam v 1) ^ t^(-lam/alpha)) t^(-d/alpha) G_alpha(z) at the
    flow-recentred argument z; reduces to the plain scaled kernel at lam=0."""
    if t <= 0:
        raise ValueError("t must be positive")
    z = _scaled_arg(spec, t, x, y)
    r = np.abs(z) if spec.dim == 1 else np.linalg.norm(z, axis=-1)
    factor = np.minimum(
        np.maximum(r**spec.lam, 1.0), t ** (-spec.lam / spec.alpha)
    )
    return factor * t ** (-spec.dim / spec.alpha) * eval_G(spec.alpha, z, spec.dim)


def eval_Q(spec: KernelSpec, t: float, x, y):
    """Like eval_H but with |z|^lam ^ t^(-lam/alpha); Q <= H pointwise."""
    if t <= 0:
        raise ValueError("t must be positive")
    z = _scaled_arg(spec, t, x, y)
    r = np.abs(z) if spec.dim == 1 else np.linalg.norm(z, axis=-1)
    factor = np.minimum(r**spec.lam, t ** (-spec.lam / spec.alpha))
    return factor * t ** (-spec.dim / spec.alpha) * eval_G(spec.alpha, z, spec.dim)


@dataclass
class SubconvolutionResult:
    ratio: float
    convolution: float
    bound_value: float
    tail_fraction: float
    precision_warning: bool = False
    meta: dict = field(default_factory=dict)


def check_subconvolution(
    spec: KernelSpec,
    t: float,
    s: float,
    x,
    y,
    n_grid: int = 1024,
    span_mult: float = 10.0,
    drift_range: float = 0.0,
) -> SubconvolutionResult:
    """Ratio (H_{t-s} * H_s)(x, y) / H_t(x, y) by grid quadrature.

    The grid spans the two centers plus span_mult kernel widths; the
    truncated heavy tails are corrected analytically with the known
    G-decay exponent. A tail share above 1% of the integral flags the
    result with a precision warning.
    """
    if not 0.0 < s < t:
        raise ValueError("need 0 < s < t")
    if spec.dim != 1:
        raise NotImplementedError("subconvolution certification implemented for d=1")
    x = float(np.asarray(x)); y = float(np.asarray(y))
    half = span_mult * t ** (1.0 / spec.alpha) + abs(x - y) + drift_range
    lo, hi = min(x, y) - half, max(x, y) + half
    z = np.linspace(lo, hi, n_grid)
    w = trapezoid_weights(n_grid, z[1] - z[0])
    f = eval_H(spec, t - s, x, z)
    g = eval_H(spec, s, z, y)
    integral = float(np.sum(w * f * g))
    # beyond the grid both factors sit on their power tails; the product
    # decays like |z|^(-2(d+alpha)) after the lam-clamps saturate
    q = 2.0 * (spec.dim + spec.alpha)
    tail = 0.0
    for edge in (0, -1):
        fv, gv = f[edge], g[edge]
        r_edge = abs(z[edge] - 0.5 * (x + y)) + 1.0
        tail += fv * gv * r_edge / (q - 1.0)
    conv = integral + tail
    bound = float(eval_H(spec, t, x, y))
    frac = tail / conv if conv > 0 else 0.0
    return SubconvolutionResult(
        ratio=conv / bound,
        convolution=conv,
        bound_value=bound,
        tail_fraction=frac,
        precision_warning=frac > 0.01,
        meta={"t": t, "s": s, "x": x, "y": y, "lam": spec.lam},
    )


def check_superconvolution(spec, t, s, x, y, n_grid=1024, span_mult=10.0):
    """Smoke check of the reverse inequality: returns H_t / (H_{t-s} * H_s)."""
    res = check_subconvolution(spec, t, s, x, y, n_grid, span_mult)
    return 1.0 / res.ratio if res.ratio > 0 else np.inf


def series_majorant(k: int, t: float, c1: float, c2: float,
                    zeta: float, delta1: float, delta2: float) -> float:
    """Scalar prefactor C1 C2^k t^(-1+(k-1)zeta) max(t^d1, t^d2) / Gamma(k zeta).

    Bounds the k-th convolution power of the error kernel; the Gamma factor
    makes consecutive ratios vanish, which drives series truncation.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    return (
        c1
        * c2**k
        * t ** (-1.0 + (k - 1) * zeta)
        * max(t**delta1, t**delta2)
        / gamma_fn(k * zeta)
    )


def truncation_order(t, c1, c2, zeta, delta1, delta2, threshold=1e-8, k_cap=12):
    """Smallest k whose majorant falls below threshold, capped at k_cap."""
    for k in range(1, k_cap + 1):
        if series_majorant(k, t, c1, c2, zeta, delta1, delta2) < threshold:
            return k
    return k_cap


@dataclass
class GComparisonReport:
    c_fit: float
    g_x: float
    g_y: float
    v: float


def check_g_comparison(table, v: float, x, y) -> GComparisonReport:
    """Smallest C with e^(-C v) g(x) <= g(y) <= e^(C v) g(x).

    Inputs must satisfy the corridor e^(-v) |x| - v <= |y| <= e^v |x| + v;
    outside it the pair is rejected.
    """
    from .stable import eval_g

    if v < 0:
        raise ValueError("v must be nonnegative")
    dim = table.params.dim
    rx = float(np.linalg.norm(np.atleast_1d(x)))
    ry = float(np.linalg.norm(np.atleast_1d(y)))
    if not (np.exp(-v) * rx - v <= ry + 1e-12 and ry <= np.exp(v) * rx + v + 1e-12):
        raise ValueError(
            f"|y|={ry:.6g} outside the corridor for |x|={rx:.6g}, v={v:.6g}"
        )
    gx = float(eval_g(table, np.asarray(x, dtype=float)))
    gy = float(eval_g(table, np.asarray(y, dtype=float)))
    if v == 0.0:
        c = 0.0 if np.isclose(gx, gy, rtol=1e-12) else np.inf
    else:
        c = abs(np.log(gy / gx)) / v
    return GComparisonReport(c_fit=c, g_x=gx, g_y=gy, v=v)


def certify_subconvolution(
    spec_builder,
    lams,
    t_values,
    n_pairs: int = 20,
    seed: int = 0,
    x_range: float = 2.0,
    n_grid: int = 1024,
):
    """Sweep (t, s, x, y, lambda) and record sub-convolution ratios.

    spec_builder(lam) must return a KernelSpec. Returns (rows, summary)
    where each row is (t, s, x, y, lam, ratio) and summary holds the
    empirical constant per lambda.
    """
    rng = np.random.default_rng(seed)
    rows = []
    summary = {}
    for lam in lams:
        spec = spec_builder(lam)
        worst = 0.0
        for t in t_values:
            for frac in (0.25, 0.5, 0.75):
                s = frac * t
                for _ in range(n_pairs):
                    x = rng.uniform(-x_range, x_range)
                    y = rng.uniform(-x_range, x_range)
                    res = check_subconvolution(spec, t, s, x, y, n_grid=n_grid)
                    rows.append((t, s, x, y, lam, res.ratio))
                    worst = max(worst, res.ratio)
        summary[lam] = worst
    return rows, summary
