"""High-level series operations: assembled density fields, the
principal-part decomposition, the iterated-kernel sum, and the
Chapman-Kolmogorov self-consistency check."""

from dataclasses import dataclass, field

import numpy as np

from .._util import gl_on_01
from ..drift import picard_iterate
from .core import ParametrixEngine, _log_interp_rows
from .grid import DensityField


def compute_density(engine: ParametrixEngine, t, x, outputs=None,
                    need_dt=False):
    """Density rows p_t(x, .) (and decompositions) at the requested times.

    Returns {t_out: DensityField}.  A single t gives one field; passing
    outputs=[...] reuses one series run for a whole time sweep.
    """
    res = engine.run(t, [float(x)], outputs=outputs, need_dt=need_dt)
    fields = {}
    for t_out, entry in res.items():
        fld = DensityField(
            y=engine.z,
            t=entry["t"],
            x_anchor=float(x),
            p=entry["p"][0],
            p0=entry["p0"][0],
            residue=entry["residue"][0],
            diagnostics={
                "iterations": entry["iterations"],
                "iteration_residual": entry["iteration_residual"],
                "trivial": engine._last_diagnostics["trivial"],
            },
        )
        if need_dt:
            fld.diagnostics["dp"] = entry["dp"][0]
            fld.diagnostics["dp0"] = entry["dp0"][0]
        fld.diagnostics["negativity"] = fld.negativity_report()
        fields[t_out] = fld
    return fields


def decompose_tilde(engine: ParametrixEngine, fld: DensityField,
                    flow_choice="anchor"):
    """Fill p_tilde / r_tilde and record the comparison constants.

    The center is the anchored approximate forward flow by default, or a
    Picard iterate ("picard", k) with the admissibility gate rho_k > 0, or
    a user-supplied point ("user", center).
    """
    model = engine.model
    t, x = fld.t, fld.x_anchor
    al, d = model.alpha, model.dim
    if flow_choice == "anchor":
        center = float(engine.forward_center(t, np.array([x]))[0])
    elif flow_choice[0] == "picard":
        k = int(flow_choice[1])
        model.require_picard(k)
        center = float(picard_iterate(model.drift, k, x, t))
    elif flow_choice[0] == "user":
        center = float(flow_choice[1])
    else:
        raise ValueError(f"unknown flow choice {flow_choice!r}")
    ax = float(model.a(np.asarray(x)))
    tau = t * ax
    xi = (engine.z - center) / tau ** (1.0 / al)
    fld.p_tilde = tau ** (-d / al) * engine._lut["g"](np.abs(xi))
    fld.r_tilde = fld.p - fld.p_tilde
    fld.center = center

    # comparison constant of the recentering step: sup |log(p0/p~)| / t^delta
    ratio = np.log(fld.p0 / fld.p_tilde)
    c_tilt = float(np.max(np.abs(ratio)) / t**model.delta)
    # residue-bound ratio against (t^zeta + |y - center|^chi ^ 1)
    envelope = t**model.zeta + np.minimum(
        np.abs(engine.z - center) ** model.chi, 1.0
    )
    c_res = float(np.max(np.abs(fld.r_tilde) / (fld.p_tilde * envelope)))
    fld.diagnostics["tilt_constant"] = c_tilt
    fld.diagnostics["residue_bound_constant"] = c_res
    fld.diagnostics["flow_choice"] = str(flow_choice)
    return fld


@dataclass
class PsiChain:
    """Iterated error-kernel sum on the time mesh.

    values[i] is Psi at mesh[i] over (z-grid x y-grid); per_term_sup[k-1]
    records sup |Phi^(*k)| at the final time.
    """

    mesh: np.ndarray
    values: list
    per_term_sup: np.ndarray
    k_used: int
    diagnostics: dict = field(default_factory=dict)


def compute_psi(engine: ParametrixEngine, t, k_cap=None, tol=None):
    """Sum the convolution powers of the error kernel on the full grid.

    Stops when the newest term's sup norm falls below tol times the first
    term's, or at k_cap.  Raises SeriesError if no decay is seen by the cap.
    """
    from .core import SeriesError

    model = engine.model
    zeta = float(np.clip(model.zeta, 1e-3, 1.0))
    k_cap = int(k_cap if k_cap is not None else engine.grid.trunc_k)
    tol = engine.series_tol if tol is None else tol
    engine._ensure_flow_cache(t)
    mesh = engine._build_mesh(t, [t])
    M = len(mesh)
    m = engine.m
    u_lo, w_lo = gl_on_01(engine.grid.n_time)

    cur = [engine.phi_matrix(s) for s in mesh]  # Phi^(*1)
    psi = [c.copy() for c in cur]
    sups = [float(np.max(np.abs(cur[-1])))]
    # row-mass anchors for the below-mesh continuation of each power
    anchors = [engine.h * np.sum(cur[0], axis=1)]
    beta = engine.beta

    for k in range(2, k_cap + 1):
        prev = cur
        prev_anchor = anchors[-1]
        prev_pow = -1.0 + (k - 1) * zeta
        nxt = []
        for i, tau in enumerate(mesh):
            acc = np.zeros((m, m))
            lo_s = beta * tau * u_lo ** (1.0 / zeta)
            lo_w = w_lo * beta * tau / zeta * u_lo ** (1.0 / zeta - 1.0)
            for s, w in zip(lo_s, lo_w):
                theta = tau - s
                f = _interp_mats(mesh, prev, theta, prev_anchor, prev_pow,
                                 engine, i)
                if s >= engine.s_res:
                    acc += (w * engine.h) * (f @ engine.phi_matrix(s))
                else:
                    acc += w * engine.conv_phi_adapted(s, f)
            up_e = (1.0 - beta) * tau * u_lo ** (1.0 / min(1.0, (k - 1) * zeta))
            up_w = w_lo * (1.0 - beta) * tau / min(1.0, (k - 1) * zeta) \
                * u_lo ** (1.0 / min(1.0, (k - 1) * zeta) - 1.0)
            for e, w in zip(up_e, up_w):
                if e >= mesh[0] * (1 - 1e-12):
                    f = _interp_mats(mesh, prev, e, prev_anchor, prev_pow,
                                     engine, i)
                    acc += (w * engine.h) * (f @ engine.phi_matrix(tau - e))
                else:
                    mm = prev_anchor * (e / mesh[0]) ** prev_pow
                    centers = engine.z + e * engine.bz  # one drift step
                    cols = engine.phi_cols(tau - e, centers)
                    acc += w * mm[:, None] * cols
            nxt.append(acc)
        cur = nxt
        anchors.append(engine.h * np.sum(cur[0], axis=1))
        for i in range(M):
            psi[i] = psi[i] + cur[i]
        sups.append(float(np.max(np.abs(cur[-1]))))
        if sups[-1] < tol * sups[0]:
            break
    else:
        k = k_cap
        if len(sups) >= 3 and sups[-1] > sups[-2] > sups[-3]:
            raise SeriesError(
                f"no decay of the iterated kernel by k={k_cap}: "
                f"sup norms {np.array(sups)}"
            )
    return PsiChain(mesh=mesh, values=psi, per_term_sup=np.array(sups),
                    k_used=k, diagnostics={"anchors": anchors})


def _interp_mats(mesh, mats, theta, anchor, power, engine, i_now):
    if theta >= mesh[0] * (1 - 1e-12):
        nt = min(i_now + 1, len(mesh))
        return _log_interp_rows(mesh[:nt], mats[:nt], theta, power)
    # below the mesh: delta-row model, mass anchored at the first node
    mm = anchor * (theta / mesh[0]) ** power
    out = np.zeros((engine.m, engine.m))
    idx = np.clip(
        np.round((engine.z + theta * engine.bz - engine.z[0]) / engine.h)
        .astype(int), 0, engine.m - 1,
    )
    out[np.arange(engine.m), idx] = mm / engine.h
    return out


def psi_residual(engine: ParametrixEngine, chain: PsiChain, z_probe_idx=None):
    """sup_z-probe |Phi_t + (Phi star Psi)_t - Psi_t| / sup |Phi_t|.

    An independent check of the defining identity of the iterated-kernel
    sum at the final mesh time.
    """
    t = chain.mesh[-1]
    m = engine.m
    if z_probe_idx is None:
        z_probe_idx = np.linspace(m // 8, m - 1 - m // 8, 5).astype(int)
    zeta = float(np.clip(engine.model.zeta, 1e-3, 1.0))
    u, w = gl_on_01(engine.grid.n_time)
    mesh = chain.mesh
    beta = 0.5
    psi_col_anchor = engine.h * np.sum(chain.values[0], axis=0)  # per y
    conv = np.zeros((len(z_probe_idx), m))
    # lower side: Psi_s delta/singular in its first argument
    for ui, wi in zip(u, w):
        s = beta * t * ui ** (1.0 / zeta)
        ws = wi * beta * t / zeta * ui ** (1.0 / zeta - 1.0)
        if s >= mesh[0] * (1 - 1e-12) and s >= engine.s_res:
            psi_s = _log_interp_rows(mesh, chain.values, s, zeta - 1.0)
            phi_rows = engine.phi_matrix(t - s)[z_probe_idx, :]
            conv += ws * engine.h * (phi_rows @ psi_s)
        else:
            # Psi_s(w, y) ~ column-mass model concentrated at kappa_s(y)
            mm = psi_col_anchor * (s / mesh[0]) ** (zeta - 1.0)
            kap = engine.kappa_grid(s)
            phi_vals = engine.phi_cols(t - s, kap)[:, z_probe_idx]
            conv += ws * (phi_vals.T * mm[None, :])
    # upper side: Phi_{t-s} delta in its second argument
    for ui, wi in zip(u, w):
        e = (1.0 - beta) * t * ui ** (1.0 / zeta)
        we = wi * (1.0 - beta) * t / zeta * ui ** (1.0 / zeta - 1.0)
        psi_row = _log_interp_rows(mesh, chain.values, t - e, zeta - 1.0)
        if e >= engine.s_res:
            phi_rows = engine.phi_matrix(e)[z_probe_idx, :]
            conv += we * engine.h * (phi_rows @ psi_row)
        else:
            for j, zi in enumerate(z_probe_idx):
                z0 = engine.z[zi]
                c = float(engine.forward_center(e, np.array([z0]))[0])
                ax = float(engine.model.a(np.asarray(z0)))
                scale = (e * ax) ** (1.0 / engine.model.alpha)
                span = (engine.z[-1] - engine.z[0]) + abs(c)
                v, wv, _ = engine._v_template(span / scale)
                w_pts = c + scale * v
                phi_v = _phi_second_arg(engine, e, z0, w_pts)
                rows = engine._gather_rows(psi_row.T, w_pts).T
                conv[j] += (wv * scale * phi_v) @ rows
    phi_t = engine.phi_matrix(t)[z_probe_idx, :]
    psi_t = chain.values[-1][z_probe_idx, :]
    resid = phi_t + conv - psi_t
    return float(np.max(np.abs(resid)) / np.max(np.abs(phi_t)))


def _phi_second_arg(engine, e, z0, w_pts):
    """Phi_e(z0, w) for fixed z0 over points w (its second argument)."""
    from ..drift import eval_drift, eval_mollified

    model = engine.model
    al, d = model.alpha, model.dim
    a_w = np.asarray(model.a(w_pts), dtype=float)
    tau = e * a_w
    kap = engine.kappa_at(e, w_pts)
    bk = np.asarray(eval_mollified(engine.mol, e, kap), dtype=float)
    xi = (kap - z0) / tau ** (1.0 / al)
    r = np.abs(xi)
    a_z = float(model.a(np.asarray(z0)))
    b_z = float(eval_drift(model.drift, np.asarray(z0)))
    phi = (a_z - a_w) * engine._lut["fraclap"](r) * tau ** (-d / al - 1.0)
    phi += (bk - b_z) * engine._lut["grad"](r) * np.sign(xi) \
        * tau ** (-(d + 1.0) / al)
    return phi


def chapman_kolmogorov_check(engine: ParametrixEngine, t, s, x,
                             support_rel=1e-4):
    """sup_y |int p_s(x, z) p_{t-s}(z, y) dz - p_t(x, y)| / sup_y p_t(x, y).

    The z-integral runs over the region where p_s(x, .) is above
    support_rel of its peak; the full-field factor p_{t-s}(z, .) is built
    by a batched series run from those anchors.
    """
    if not 0.0 < s < t:
        raise ValueError("need 0 < s < t")
    res = engine.run(t, [float(x)], outputs=[s, t])
    p_s = res[s]["p"][0]
    p_t = res[t]["p"][0]
    sel = np.where(p_s >= support_rel * np.max(p_s))[0]
    z_sel = engine.z[sel]
    full = engine.run(t - s, z_sel, outputs=[t - s], exact_small_eps=False)
    P = full[t - s]["p"]
    lhs = engine.h * (p_s[sel] @ P)
    err = np.abs(lhs - p_t)
    return float(np.max(err) / np.max(p_t)), {
        "lhs_mass": float(np.sum(lhs) * engine.h),
        "p_t_mass": float(np.sum(p_t) * engine.h),
        "n_support": len(sel),
    }
