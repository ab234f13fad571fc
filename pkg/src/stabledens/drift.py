"""Holder drifts, their Gaussian mollifications, and approximate ODE flows.

The mollified family b(t, x) averages the drift against a Gaussian of
standard deviation t^(1/alpha).  That trades an O(t^(gamma/alpha)) bias for
a finite Lipschitz constant ~ t^(gamma/alpha - 1/alpha), which is integrable
in t under the balance condition alpha + gamma > 1, so the frozen-anchor
Cauchy problems below have unique solutions even when the raw drift does
not.  All objects are immutable; flow solves for distinct inputs can run
concurrently.
"""

import functools
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import roots_jacobi

TTW = "ttw"
CONSTANT = "constant"
LIPSCHITZ_DEMO = "lipschitz_demo"
TABULATED = "tabulated"


class ExtrapolationError(ValueError):
    """Tabulated drift queried outside its hull."""


class SolverStallError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class DriftSpec:
    kind: str
    gamma: float
    bound: float
    holder_const: float
    dim: int = 1
    cap: float = 10.0
    value: tuple = ()
    table_x: tuple = ()
    table_b: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not np.isfinite(self.bound):
            raise ValueError("drift bound must be finite")


def ttw_drift(gamma=0.5, cap=10.0, dim=1):
    """Power drift |x|^gamma * x/|x|, clamped at |b| <= cap.

    The clamp keeps the drift bounded; the unclamped power law is only
    locally bounded.
    """
    return DriftSpec(TTW, gamma, cap, 2.0 ** (1.0 - gamma), dim=dim, cap=cap)


def constant_drift(c, dim=None):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if dim is None:
        dim = c.size
    return DriftSpec(CONSTANT, 1.0, float(np.linalg.norm(c)), 0.0, dim=dim,
                     value=tuple(c))


def lipschitz_demo_drift(dim=1):
    """Smooth bounded Lipschitz drift, b_i(x) = sin(x_i)."""
    return DriftSpec(LIPSCHITZ_DEMO, 1.0, float(np.sqrt(dim)), 1.0, dim=dim)


def tabulated_drift(xs, bs, gamma):
    xs = np.asarray(xs, dtype=float)
    bs = np.asarray(bs, dtype=float)
    if xs.ndim != 1 or xs.shape != bs.shape:
        raise ValueError("tabulated drift needs matching 1-d x and b arrays")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("tabulated drift abscissae must be increasing")
    return DriftSpec(TABULATED, gamma, float(np.max(np.abs(bs))),
                     _tabulated_holder_const(xs, bs, gamma),
                     dim=1, table_x=tuple(xs), table_b=tuple(bs))


def _tabulated_holder_const(xs, bs, gamma):
    dx = np.diff(xs)
    db = np.abs(np.diff(bs))
    return float(np.max(db / dx**gamma)) if len(dx) else 0.0


def tabulated_effective_gamma(spec):
    """Two-point Holder-exponent estimate from adjacent samples (report only)."""
    xs = np.asarray(spec.table_x)
    bs = np.asarray(spec.table_b)
    dx = np.diff(xs)
    db = np.abs(np.diff(bs))
    ok = (db > 0) & (dx < 1.0)
    if not np.any(ok):
        return 1.0
    return float(np.median(np.log(db[ok]) / np.log(dx[ok])))


def eval_drift(spec: DriftSpec, x):
    """Drift value; |result| <= spec.bound everywhere."""
    x = np.asarray(x, dtype=float)
    if spec.kind == CONSTANT:
        c = np.asarray(spec.value)
        if spec.dim == 1:
            return np.broadcast_to(c[0], x.shape).copy() if x.ndim else float(c[0])
        return np.broadcast_to(c, x.shape).copy()
    if spec.kind == TTW:
        if spec.dim == 1:
            return np.sign(x) * np.minimum(np.abs(x) ** spec.gamma, spec.cap)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        mag = np.minimum(r**spec.gamma, spec.cap)
        return np.where(r > 0, mag * x / np.where(r > 0, r, 1.0), 0.0)
    if spec.kind == LIPSCHITZ_DEMO:
        return np.sin(x)
    if spec.kind == TABULATED:
        xs = np.asarray(spec.table_x)
        if np.any(x < xs[0]) or np.any(x > xs[-1]):
            raise ExtrapolationError(
                f"query outside tabulated hull [{xs[0]}, {xs[-1]}]"
            )
        return np.interp(x, xs, np.asarray(spec.table_b))
    raise ValueError(f"unknown drift kind {spec.kind!r}")


@dataclass(frozen=True)
class MollifiedDrift:
    """Gaussian-mollified drift family with bandwidth t^(1/alpha)."""

    base: DriftSpec
    alpha: float
    n_nodes: int = 64

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must be in (0, 2), got {self.alpha}")
        if self.base.dim > 3:
            raise ValueError("tensorized Gauss-Hermite mollifier capped at d <= 3")

    @property
    def dim(self):
        return self.base.dim

    def bandwidth(self, t):
        return t ** (1.0 / self.alpha)


def _gh_nodes(n, dim):
    xg, wg = hermgauss(n)
    xi = np.sqrt(2.0) * xg
    w = wg / np.sqrt(np.pi)
    if dim == 1:
        return xi[:, None], w
    grids = np.meshgrid(*([xi] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.ones(len(nodes))
    for gw in np.meshgrid(*([w] * dim), indexing="ij"):
        wts *= gw.ravel()
    return nodes, wts


@functools.lru_cache(maxsize=16)
def _jacobi_01(n, gamma):
    """Nodes/weights for int_0^1 u^gamma f(u) du, f smooth."""
    x, w = roots_jacobi(n, 0.0, gamma)
    return 0.5 * (x + 1.0), w * 0.5 ** (gamma + 1.0)


_XI_SPAN = 8.0  # Gaussian mass beyond 8 sigma is ~1e-15


def _ttw_moments(m, t, x, powers):
    """E[b(x + sigma xi) * xi^p] for the power drift, exact at the kink.

    The integrand carries a |xi - xi0|^gamma factor at xi0 = -x/sigma; each
    side of the kink is integrated with a Gauss-Jacobi rule matching that
    weight, so the quadrature is spectrally accurate despite the kink.
    Elements whose kink lies outside the +-8 sigma window (or that reach the
    cap inside it) fall back to plain Gauss-Hermite, which is accurate there.
    """
    spec = m.base
    sig = m.bandwidth(t)
    xb = np.atleast_1d(np.asarray(x, dtype=float))
    xi0 = -xb / sig
    z_cap = spec.cap ** (1.0 / spec.gamma)
    jacobi_ok = (np.abs(xi0) <= _XI_SPAN) & (np.abs(xb) + _XI_SPAN * sig < z_cap)
    out = [np.zeros_like(xb) for _ in powers]
    if np.any(jacobi_ok):
        u, wj = _jacobi_01(24, spec.gamma)
        x0 = np.where(jacobi_ok, xi0, 0.0)
        inv_sqrt2pi = 1.0 / np.sqrt(2.0 * np.pi)
        for side in (1.0, -1.0):
            length = np.abs(side * _XI_SPAN - x0)
            xi = x0[..., None] + side * length[..., None] * u
            gauss = np.exp(-0.5 * xi**2) * inv_sqrt2pi
            pref = side * sig**spec.gamma * length[..., None] ** (1.0 + spec.gamma)
            for i, p in enumerate(powers):
                poly = xi**p if p else 1.0
                term = np.sum(pref * wj * gauss * poly, axis=-1)
                out[i] += np.where(jacobi_ok, term, 0.0)
    if np.any(~jacobi_ok):
        xg, wg = _gh_nodes(m.n_nodes, 1)
        pts = xb[..., None] + sig * xg[:, 0]
        vals = eval_drift(spec, pts)
        for i, p in enumerate(powers):
            poly = xg[:, 0] ** p if p else np.ones_like(xg[:, 0])
            term = vals @ (wg * poly)
            out[i] = np.where(jacobi_ok, out[i], term)
    return out, sig


def _smooth_moments(m, t, x, powers):
    """E[(b(x + sigma xi) - b(x)) * P(xi)] by Gauss-Hermite, smooth drifts."""
    per_axis = m.n_nodes if m.dim == 1 else max(12, m.n_nodes // 4)
    xi, w = _gh_nodes(per_axis, m.dim)
    sig = m.bandwidth(t)
    xb = np.atleast_1d(np.asarray(x, dtype=float))
    if m.dim == 1:
        pts = xb[..., None] + sig * xi[..., 0]
    else:
        pts = xb[..., None, :] + sig * xi
    vals = eval_drift(m.base, pts)
    return vals, xi, w, sig


def eval_mollified(m: MollifiedDrift, t, x):
    """b(t, x) = E b(x + t^(1/alpha) * N(0, I)); b(0, .) is the raw drift."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0.0:
        return eval_drift(m.base, x)
    if m.base.kind == TTW and m.dim == 1:
        (val,), _ = _ttw_moments(m, t, x, (0,))
        return val if np.ndim(x) else float(val)
    vals, xi, w, _ = _smooth_moments(m, t, x, (0,))
    if m.dim == 1:
        out = vals @ w
    else:
        out = np.einsum("...nd,n->...d", vals, w)
    return out if np.ndim(x) else float(out)


def eval_mollified_grad(m: MollifiedDrift, t, x):
    """Jacobian of b(t, .); operator norm ~ t^(gamma/alpha - 1/alpha)."""
    if t <= 0:
        raise ValueError("mollified gradient needs t > 0")
    if m.base.kind == TTW and m.dim == 1:
        (mom,), sig = _ttw_moments(m, t, x, (1,))
        out = mom / sig  # E[b(x) xi] vanishes, no centering needed
        return out if np.ndim(x) else np.array([[float(out)]])
    vals, xi, w, sig = _smooth_moments(m, t, x, (0,))
    bx = eval_drift(m.base, x)
    if m.dim == 1:
        diff = vals - np.atleast_1d(bx)[..., None]
        out = (diff * xi[:, 0]) @ w / sig
        return out if np.ndim(x) else np.array([[float(out)]])
    diff = vals - np.asarray(bx)[..., None, :]
    return np.einsum("...ni,nj,n->...ij", diff, xi, w) / sig


def eval_mollified_dt(m: MollifiedDrift, t, x):
    """Time derivative of b(t, x), from differentiating the Gaussian weight."""
    if t <= 0:
        raise ValueError("mollified time derivative needs t > 0")
    if m.base.kind == TTW and m.dim == 1:
        (m0, m2), _ = _ttw_moments(m, t, x, (0, 2))
        out = (m2 - m0) / (m.alpha * t)  # E[b(x)(xi^2-1)] vanishes
        return out if np.ndim(x) else float(out)
    vals, xi, w, _ = _smooth_moments(m, t, x, (0,))
    bx = eval_drift(m.base, x)
    q = np.sum(xi**2, axis=-1) - m.dim
    if m.dim == 1:
        diff = vals - np.atleast_1d(bx)[..., None]
        out = (diff * q) @ w / (m.alpha * t)
        return out if np.ndim(x) else float(out)
    diff = vals - np.asarray(bx)[..., None, :]
    return np.einsum("...nd,n,n->...d", diff, q, w) / (m.alpha * t)


@dataclass
class FlowResult:
    times: np.ndarray
    values: np.ndarray  # (n_times, ...) matching the start shape
    s_anchor: float
    direction: str
    stats: dict = field(default_factory=dict)

    def final(self):
        return self.values[-1]


def _dp_step(rhs, r, y, h, k):
    """One Dormand-Prince step; returns 5th- and 4th-order solutions."""
    k[0] = rhs(r, y)
    for i in range(1, 7):
        yi = y + h * sum(a * k[j] for j, a in enumerate(_DP_A[i]))
        k[i] = rhs(r + _DP_C[i] * h, yi)
    y5 = y + h * sum(b * ki for b, ki in zip(_DP_B5, k) if b != 0.0)
    y4 = y + h * sum(b * ki for b, ki in zip(_DP_B4, k) if b != 0.0)
    return y5, y4


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def solve_flow(
    m: MollifiedDrift,
    direction: str,
    s_anchor: float,
    start,
    t_end: float,
    tol: float = 1e-8,
    t_eval=None,
) -> FlowResult:
    """Integrate d y / dr = +- b(|r - s_anchor|, y) from r = 0 to t_end.

    The Lipschitz constant of the right-hand side blows up like
    |r - s_anchor|^(gamma/alpha - 1/alpha) near the anchor; the step size is
    clamped to half the distance to the anchor (and to tol^(1/4)) so the
    local error stays controlled while the singularity is crossed.

    start may be a single point or a batch (B,) / (B, d); the same adaptive
    step sequence is shared by the batch with the error measured in the max
    norm.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward/backward, got {direction!r}")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    sgn = 1.0 if direction == "forward" else -1.0
    y0 = np.asarray(start, dtype=float)

    def rhs(r, y):
        return sgn * eval_mollified(m, abs(r - s_anchor), y)

    if t_eval is None:
        stops = np.array([t_end])
    else:
        stops = np.asarray(t_eval, dtype=float)
        if np.any(stops < 0) or np.any(np.diff(stops) <= 0) or (
            len(stops) and stops[-1] > t_end + 1e-15
        ):
            raise ValueError("t_eval must be increasing within [0, t_end]")
    times = [0.0]
    values = [y0.copy()]
    n_acc = n_rej = 0
    max_err = 0.0
    budget = 0.0

    if t_end == 0.0:
        return FlowResult(np.array(times), np.array(values), s_anchor, direction,
                          {"accepted": 0, "rejected": 0, "max_error": 0.0,
                           "error_budget": 0.0})

    h_floor = max(1e-13 * max(t_end, 1.0), 1e-15)
    anchor_floor = max(h_floor, 1e-5 * t_end)
    r = 0.0
    y = y0.copy()
    h = min(0.1 * t_end, tol ** 0.25, max(0.5 * abs(r - s_anchor), anchor_floor))
    h = max(h, h_floor)
    k = [None] * 7
    for stop in stops:
        if stop == 0.0:
            continue
        while r < stop - 1e-15 * max(stop, 1.0):
            h = min(h, stop - r, tol ** 0.25)
            dist = abs(r - s_anchor)
            h = min(h, max(0.5 * dist, anchor_floor))
            h = max(h, h_floor)
            y5, y4 = _dp_step(rhs, r, y, h, k)
            est = float(np.max(np.abs(y5 - y4)))
            y_new = y5
            if abs(r + 0.5 * h - s_anchor) < 1.5 * h:
                # the embedded estimate is unreliable where the mollification
                # bandwidth collapses; cross-check by step doubling there
                ya, _ = _dp_step(rhs, r, y, 0.5 * h, k)
                yb, _ = _dp_step(rhs, r + 0.5 * h, ya, 0.5 * h, k)
                est = max(est, float(np.max(np.abs(y5 - yb))))
                y_new = yb
            scale = tol * (1.0 + np.max(np.abs(y)))
            err = est / scale
            if err <= 1.0 or h <= h_floor * (1 + 1e-9):
                r += h
                y = y_new
                n_acc += 1
                max_err = max(max_err, est)
                budget += est
            else:
                n_rej += 1
                if n_rej > 10000:
                    raise SolverStallError(
                        "step-size underflow in flow solve",
                        {"r": r, "h": h, "err": err, "anchor": s_anchor},
                    )
            h *= min(5.0, max(0.2, 0.9 * (max(err, 1e-16)) ** -0.2))
        times.append(stop)
        values.append(y.copy())
    return FlowResult(
        np.array(times),
        np.array(values),
        s_anchor,
        direction,
        {"accepted": n_acc, "rejected": n_rej, "max_error": max_err,
         "error_budget": budget},
    )


def kappa(m: MollifiedDrift, y, t, tol=1e-8):
    """Backward flow theta_t^0(y): the recentering map of the base kernel."""
    if t == 0:
        return np.asarray(y, dtype=float)
    return solve_flow(m, "backward", 0.0, y, t, tol=tol).final()


def kappa_on_times(m: MollifiedDrift, y, times, tol=1e-8):
    """kappa_s(y) for a sorted array of times; shares one integration pass."""
    times = np.asarray(times, dtype=float)
    res = solve_flow(m, "backward", 0.0, y, float(times[-1]), tol=tol,
                     t_eval=times)
    return res.values[1:] if res.times[0] == 0.0 and times[0] > 0 else res.values


def picard_iterate(spec: DriftSpec, k: int, x, t: float, n_quad: int = 1025):
    """k-th Picard iterate of dv/dt = b(v), v_0 = x, by nested trapezoids."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = np.asarray(x, dtype=float)
    if k == 0 or t == 0.0:
        return x.copy()
    s = np.linspace(0.0, t, n_quad)
    v = np.broadcast_to(x, (n_quad,) + x.shape).copy()
    for _ in range(k):
        integrand = eval_drift(spec, v)
        acc = np.zeros_like(v)
        steps = 0.5 * np.diff(s).reshape((-1,) + (1,) * x.ndim)
        acc[1:] = np.cumsum(steps * (integrand[1:] + integrand[:-1]), axis=0)
        v = x + acc
    return v[-1]


@dataclass
class FlowComparison:
    middle: float
    base: float
    c_fit: float
    lower: float
    upper: float
    t: float
    s: float


def check_flow_comparison(m: MollifiedDrift, x, y, t, s, tol=1e-9):
    """Smallest C with e^(-C t^delta) |x - theta_t(y)| - C t^(1/alpha+delta)
    <= |v_(t-s)^(t-s)(x) - theta_s(y)| <= e^(C t^delta)|x - theta_t(y)|
    + C t^(1/alpha+delta)."""
    if not 0 <= s <= t:
        raise ValueError("need 0 <= s <= t")
    gamma = m.base.gamma
    delta = 1.0 - 1.0 / m.alpha + gamma / m.alpha
    theta_t = kappa(m, y, t, tol=tol)
    theta_s = kappa(m, y, s, tol=tol)
    v = solve_flow(m, "forward", t - s, x, t - s, tol=tol).final() if t > s else np.asarray(x, dtype=float)
    mid = float(np.linalg.norm(np.atleast_1d(v - theta_s)))
    base = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float) - theta_t)))
    td, tp = t**delta, t ** (1.0 / m.alpha + delta)

    def feasible(c):
        lo = np.exp(-c * td) * base - c * tp
        hi = np.exp(c * td) * base + c * tp
        return lo <= mid <= hi

    if feasible(0.0):
        c = 0.0
    else:
        hi = 1.0
        while not feasible(hi):
            hi *= 2.0
            if hi > 1e12:
                raise RuntimeError("no finite comparison constant found")
        lo = 0.0
        for _ in range(200):
            mid_c = 0.5 * (lo + hi)
            if feasible(mid_c):
                hi = mid_c
            else:
                lo = mid_c
        c = hi
    return FlowComparison(
        middle=mid,
        base=base,
        c_fit=c,
        lower=float(np.exp(-c * td) * base - c * tp),
        upper=float(np.exp(c * td) * base + c * tp),
        t=t,
        s=s,
    )
