"""Pointwise kernel operations with exact (per-call) flow solves.

These evaluators are grid-free and dimension-generic where the underlying
profiles are; they serve as the reference path for tests and for callers
that need single values rather than sampled fields.
"""

import numpy as np

from ..drift import MollifiedDrift, eval_drift, eval_mollified, \
    eval_mollified_dt, eval_mollified_grad, picard_iterate, solve_flow
from ..stable import (
    eval_frac_lap_g,
    eval_g,
    eval_grad_frac_lap_g,
    eval_grad_g,
    eval_hess_g,
)
from .model import ModelSpec


def _as_vec(x, dim):
    x = np.asarray(x, dtype=float)
    return x if dim > 1 else float(x)


def backward_point(model: ModelSpec, t, y, tol=1e-9):
    """kappa_t(y): anchor-0 backward flow of the mollified drift."""
    mol = MollifiedDrift(model.drift, model.alpha)
    if t == 0:
        return np.asarray(y, dtype=float)
    return solve_flow(mol, "backward", 0.0, y, t, tol=tol).final()


def forward_point(model: ModelSpec, t, x, anchor=None, tol=1e-9):
    """v_t^anchor(x); the anchor defaults to t itself."""
    mol = MollifiedDrift(model.drift, model.alpha)
    if t == 0:
        return np.asarray(x, dtype=float)
    s = t if anchor is None else anchor
    return solve_flow(mol, "forward", s, x, t, tol=tol).final()


def eval_p0(model: ModelSpec, table, t, x, y, tol=1e-9):
    """Zero-order kernel (t a(y))^(-d/a) g((kappa_t(y) - x)/(t a(y))^(1/a))."""
    if t <= 0:
        raise ValueError("t must be positive")
    al, d = model.alpha, model.dim
    ay = float(model.a(np.asarray(y, dtype=float)))
    tau = t * ay
    w = np.asarray(backward_point(model, t, y, tol), dtype=float) \
        - np.asarray(x, dtype=float)
    return float(tau ** (-d / al) * eval_g(table, w / tau ** (1.0 / al)))


def eval_p_tilde(model: ModelSpec, table, t, x, y, flow_choice="anchor",
                 tol=1e-9):
    """Principal-part kernel centered at a forward-flow point and scaled by
    a(x).

    flow_choice: "anchor" (approximate flow anchored at t), ("picard", k)
    with the admissibility gate rho_k > 0, or ("user", center).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    al, d = model.alpha, model.dim
    ax = float(model.a(np.asarray(x, dtype=float)))
    tau = t * ax
    center = p_tilde_center(model, t, x, flow_choice, tol)
    w = np.asarray(y, dtype=float) - center
    return float(tau ** (-d / al) * eval_g(table, w / tau ** (1.0 / al)))


def p_tilde_center(model: ModelSpec, t, x, flow_choice="anchor", tol=1e-9):
    if flow_choice == "anchor":
        return np.asarray(forward_point(model, t, x, tol=tol), dtype=float)
    kind = flow_choice[0]
    if kind == "picard":
        k = int(flow_choice[1])
        model.require_picard(k)
        return np.asarray(picard_iterate(model.drift, k, x, t), dtype=float)
    if kind == "user":
        return np.asarray(flow_choice[1], dtype=float)
    raise ValueError(f"unknown flow choice {flow_choice!r}")


def eval_phi(model: ModelSpec, table, t, x, y, tol=1e-9):
    """Error kernel Phi_t(x, y) = (L_x - dt) p0_t(x, y), assembled from the
    two explicit pieces: the jump-intensity mismatch against the
    fractional-Laplacian image and the drift mismatch against the kernel
    gradient."""
    if t <= 0:
        raise ValueError("t must be positive")
    al, d = model.alpha, model.dim
    mol = MollifiedDrift(model.drift, model.alpha)
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    ay = float(model.a(yv))
    ax = float(model.a(xv))
    tau = t * ay
    kap = np.asarray(backward_point(model, t, y, tol), dtype=float)
    xi = (kap - xv) / tau ** (1.0 / al)
    term1 = (ax - ay) * tau ** (-d / al - 1.0) * eval_frac_lap_g(table, xi)
    db = np.atleast_1d(
        np.asarray(eval_mollified(mol, t, kap), dtype=float)
        - np.asarray(eval_drift(model.drift, xv), dtype=float)
    )
    grad = np.atleast_1d(eval_grad_g(table, xi))
    term2 = tau ** (-(d + 1.0) / al) * float(np.dot(db, grad))
    return float(term1 + term2)


def eval_dt_p0(model: ModelSpec, table, t, x, y, tol=1e-9):
    """d/dt of the zero-order kernel via the heat identity and the moving
    center, kappa-dot = -b(t, kappa_t(y))."""
    if t <= 0:
        raise ValueError("t must be positive")
    al, d = model.alpha, model.dim
    mol = MollifiedDrift(model.drift, model.alpha)
    yv = np.asarray(y, dtype=float)
    ay = float(model.a(yv))
    tau = t * ay
    kap = np.asarray(backward_point(model, t, y, tol), dtype=float)
    xi = (kap - np.asarray(x, dtype=float)) / tau ** (1.0 / al)
    heat = ay * tau ** (-d / al - 1.0) * eval_frac_lap_g(table, xi)
    kdot = -np.atleast_1d(np.asarray(eval_mollified(mol, t, kap), dtype=float))
    grad = np.atleast_1d(eval_grad_g(table, xi))
    return float(heat + tau ** (-(d + 1.0) / al) * np.dot(grad, kdot))


def eval_dt_phi(model: ModelSpec, table, t, x, y, tol=1e-9):
    """d/dt of the error kernel by the chain rule through kappa, the
    mollified drift, and the kernel scaling (d = 1)."""
    if t <= 0:
        raise ValueError("t must be positive")
    if model.dim != 1:
        raise NotImplementedError("dt-Phi evaluation implemented for d=1")
    al, d = model.alpha, 1
    mol = MollifiedDrift(model.drift, model.alpha)
    xv = float(np.asarray(x, dtype=float))
    yv = float(np.asarray(y, dtype=float))
    ay = float(model.a(np.asarray(yv)))
    ax = float(model.a(np.asarray(xv)))
    tau = t * ay
    scale = tau ** (1.0 / al)
    kap = float(backward_point(model, t, yv, tol))
    bk = float(eval_mollified(mol, t, kap))
    xi = (kap - xv) / scale
    r = abs(xi)
    sg = np.sign(xi)
    fl = table.profile_at("fraclap", r)
    dfl = table.profile_at("gradfraclap", r) * sg
    gp = table.profile_at("grad", r) * sg
    gpp = table.profile_at("hess", r)
    xid = -bk / scale - (ay / (al * tau)) * xi
    da = ax - ay
    db = bk - float(eval_drift(model.drift, np.asarray(xv)))
    db_dot = float(eval_mollified_dt(mol, t, kap)) \
        - float(np.asarray(eval_mollified_grad(mol, t, kap)).reshape(())) * bk
    c1 = tau ** (-d / al - 1.0)
    c2 = tau ** (-(d + 1.0) / al)
    out = da * (-(d / al + 1.0) * ay * c1 / tau * fl + c1 * dfl * xid)
    out += (-((d + 1.0) / al) * ay * c2 / tau * db * gp
            + c2 * (db_dot * gp + db * gpp * xid))
    return float(out)


def space_convolve(f_rows, g_field, z, tail_exponent=None):
    """(f * g)(x, y) = int f(x, z) g(z, y) dz by trapezoid on a shared grid.

    f_rows: (B, m) or (m,); g_field: (m, m); z: the shared grid.  With
    tail_exponent q the truncated tails are added analytically, modelling
    the product as its edge value times (|z| / |z_edge|)^(-q) beyond each
    edge.
    """
    f_rows = np.atleast_2d(np.asarray(f_rows, dtype=float))
    g = np.asarray(g_field, dtype=float)
    z = np.asarray(z, dtype=float)
    if f_rows.shape[1] != g.shape[0] or len(z) != g.shape[0]:
        raise ValueError(
            f"incompatible grids: f has {f_rows.shape[1]} points, "
            f"g has {g.shape[0]}, grid has {len(z)}"
        )
    h = z[1] - z[0]
    out = h * (f_rows @ g)
    if tail_exponent is not None:
        q = tail_exponent
        if q <= 1:
            raise ValueError("tail exponent must exceed 1 for a finite tail")
        for edge in (0, -1):
            r_edge = max(abs(z[edge]), h)
            out = out + np.outer(f_rows[:, edge], g[edge, :]) * r_edge / (q - 1.0)
    return out


def time_space_convolve(f_of_time, g_of_time, t, z, singular_exponent,
                        n_nodes=12, beta=0.5):
    """(f hash g)_t = int_0^t (f_{t-s} * g_s) ds with a declared s -> 0
    singularity s^(-1+singular_exponent) in g.

    The lower segment uses the exactifying substitution s = beta t
    u^(1/exponent); the upper segment clusters quadratically toward s = t.
    f_of_time(theta) -> (B, m) rows; g_of_time(s) -> (m, m) field on the
    shared grid z.
    """
    from .._util import gl_on_01

    if singular_exponent <= 0:
        raise ValueError("singular exponent must be positive")
    dp = min(singular_exponent, 1.0)
    u, w = gl_on_01(n_nodes)
    acc = None
    for ui, wi in zip(u, w):
        s = beta * t * ui ** (1.0 / dp)
        ws = wi * beta * t / dp * ui ** (1.0 / dp - 1.0)
        term = ws * space_convolve(f_of_time(t - s), g_of_time(s), z)
        acc = term if acc is None else acc + term
    for ui, wi in zip(u, w):
        e = (1.0 - beta) * t * ui**2
        we = wi * (1.0 - beta) * t * 2.0 * ui
        acc = acc + we * space_convolve(f_of_time(e), g_of_time(t - e), z)
    return acc


def time_integral_substituted(scalar_of_s, t, singular_exponent, n_nodes=12,
                              beta=0.5):
    """int_0^t F(s) ds for scalar F with an s^(-1+exponent) left endpoint;
    the substitution makes pure powers exact."""
    from .._util import gl_on_01

    dp = min(singular_exponent, 1.0)
    u, w = gl_on_01(n_nodes)
    total = 0.0
    for ui, wi in zip(u, w):
        s = beta * t * ui ** (1.0 / dp)
        total += wi * beta * t / dp * ui ** (1.0 / dp - 1.0) * scalar_of_s(s)
    for ui, wi in zip(u, w):
        e = (1.0 - beta) * t * ui**2
        total += wi * (1.0 - beta) * t * 2.0 * ui * scalar_of_s(t - e)
    return total
