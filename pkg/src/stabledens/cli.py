"""Batch front end: parse a run config, orchestrate table build, flow
solves, the series, derivative, and Monte-Carlo validation, and emit CSV
artifacts.

Outputs are plain CSV with a '#'-prefixed metadata header (config echo,
version, fitted constants).  Re-running a command with the same config and
seed reproduces the numbers byte for byte; only the timestamp header line
differs.
"""

import argparse
import os
import sys
import time


def _write_csv(path, header_cols, rows, meta):
    with open(path, "w") as fh:
        fh.write(f"# stabledens {meta.pop('_version', '0.1.0')}\n")
        fh.write(f"# timestamp {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        for key in sorted(meta):
            fh.write(f"# {key} = {meta[key]}\n")
        fh.write(",".join(header_cols) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.12g}" if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def _build_engine(cfg):
    from .engine import ParametrixEngine

    return ParametrixEngine(cfg.model, cfg.grid)


def _meta(cfg, extra=None):
    meta = {k: v for k, v in cfg.raw.items()}
    meta.update(extra or {})
    return meta


def cmd_kernel_table(cfg, out, args):
    from .stable import StableParams, build_radial_table, save_table_csv

    table = build_radial_table(StableParams(cfg.model.alpha, cfg.model.dim))
    path = os.path.join(out, "kernel_table.csv")
    save_table_csv(table, path)
    print(f"wrote {path} (tail slope "
          f"{table.diagnostics['g_tail_slope']:.4f})")
    return 0


def cmd_density(cfg, out, args):
    import numpy as np

    from .engine import compute_density, decompose_tilde

    eng = _build_engine(cfg)
    t_hi = cfg.t_list[-1]
    fields = compute_density(eng, t_hi, cfg.x, outputs=cfg.t_list)
    status = 0
    for t, fld in fields.items():
        decompose_tilde(eng, fld, cfg.flow_choice)
        mass = eng.field_mass(fld)
        rows = zip(
            fld.y, fld.p, fld.p0, fld.residue, fld.p_tilde, fld.r_tilde
        )
        path = os.path.join(out, f"density_t{t:g}.csv")
        _write_csv(
            path,
            ["y", "p", "p0", "residue", "p_tilde", "r_tilde"],
            ([float(v) for v in row] for row in rows),
            _meta(cfg, {
                "t": t, "x": cfg.x, "mass": f"{mass:.8f}",
                "tilt_constant": fld.diagnostics["tilt_constant"],
                "residue_bound_constant":
                    fld.diagnostics["residue_bound_constant"],
                "negative_points": fld.diagnostics["negativity"]["count"],
            }),
        )
        print(f"t={t:g}: mass={mass:.6f} "
              f"neg={fld.diagnostics['negativity']['count']} -> {path}")
    diag = eng._last_diagnostics
    dpath = os.path.join(out, "diagnostics.csv")
    rows = [
        [float(tau), int(diag["iterations"][i]),
         float(diag["iteration_residuals"][i]),
         float(diag["res_mass"][i][0])]
        for i, tau in enumerate(diag["mesh"])
    ]
    _write_csv(dpath, ["mesh_t", "iterations", "iteration_residual",
                       "residue_mass"], rows, _meta(cfg))
    return status


def cmd_derivative(cfg, out, args):
    from .engine import compute_density

    eng = _build_engine(cfg)
    t_hi = cfg.t_list[-1]
    fields = compute_density(eng, t_hi, cfg.x, outputs=cfg.t_list,
                             need_dt=True)
    for t, fld in fields.items():
        dp = fld.diagnostics["dp"]
        dp0 = fld.diagnostics["dp0"]
        path = os.path.join(out, f"dtdensity_t{t:g}.csv")
        _write_csv(
            path,
            ["y", "dp", "dp0", "dresidue"],
            ([float(y), float(a), float(b), float(a - b)]
             for y, a, b in zip(fld.y, dp, dp0)),
            _meta(cfg, {"t": t, "x": cfg.x}),
        )
        print(f"t={t:g}: wrote {path}")
    return 0


def cmd_simulate(cfg, out, args):
    import numpy as np

    from .mc import MCConfig, empirical_density, euler_endpoints, \
        principal_part_endpoints

    t_end = cfg.t_list[-1]
    mc = MCConfig(cfg.mc["n_paths"], cfg.mc["n_steps"], t_end,
                  seed=cfg.mc["seed"], scheme=cfg.mc["scheme"])
    if mc.scheme == "euler":
        ends = euler_endpoints(cfg.model, cfg.x, mc)
    else:
        ends = principal_part_endpoints(cfg.model, cfg.x, mc)
    spath = os.path.join(out, "samples.csv")
    _write_csv(spath, ["endpoint"], ([float(v)] for v in ends),
               _meta(cfg, {"t": t_end, "scheme": mc.scheme}))
    lo = cfg.grid.center - cfg.grid.half_width
    hi = cfg.grid.center + cfg.grid.half_width
    edges = np.linspace(lo, hi, 81)
    emp = empirical_density(ends, edges)
    epath = os.path.join(out, "empirical.csv")
    _write_csv(
        epath,
        ["bin_center", "height"],
        ([float(c), float(hh)] for c, hh in zip(emp.centers(), emp.heights)),
        _meta(cfg, {"t": t_end, "n_in_range": emp.n_samples}),
    )
    print(f"wrote {spath} and {epath}")
    return 0


def cmd_validate(cfg, out, args):
    import numpy as np

    from .engine import compute_density, decompose_tilde
    from .mc import MCConfig, compare_density, empirical_density, \
        euler_endpoints

    eng = _build_engine(cfg)
    checks = []
    t_hi = cfg.t_list[-1]
    fields = compute_density(eng, t_hi, cfg.x, outputs=cfg.t_list)
    for t, fld in fields.items():
        mass = eng.field_mass(fld)
        checks.append(("normalization@t=%g" % t, abs(mass - 1.0), 2e-3,
                       abs(mass - 1.0) <= 2e-3))
        neg = fld.negativity_report()
        checks.append(("positivity@t=%g" % t, neg["worst_rel"], 1e-6,
                       neg["worst_rel"] <= 1e-6))
        decompose_tilde(eng, fld, cfg.flow_choice)
        ratio = fld.p / fld.p_tilde
        ok = 0.05 < ratio.min() and ratio.max() < 20.0
        checks.append(("two-sided@t=%g" % t,
                       float(ratio.min()), float(ratio.max()), ok))
    t_mc = cfg.t_list[-1]
    mc = MCConfig(cfg.mc["n_paths"], cfg.mc["n_steps"], t_mc,
                  seed=cfg.mc["seed"])
    ends = euler_endpoints(cfg.model, cfg.x, mc)
    lo, hi = eng.z[0], eng.z[-1]
    edges = np.linspace(lo, hi, 81)
    emp = empirical_density(ends, edges)
    met = compare_density(emp, eng.z, fields[t_mc].p)
    checks.append(("mc-sup-rel@t=%g" % t_mc, met["sup_rel_bulk"], 0.08,
                   met["sup_rel_bulk"] <= 0.08))
    checks.append(("mc-l1@t=%g" % t_mc, met["l1"], 0.03, met["l1"] <= 0.03))

    rows = []
    failed = 0
    for name, value, bound, ok in checks:
        rows.append([name, float(value), float(bound),
                     "pass" if ok else "FAIL"])
        print(f"{'pass' if ok else 'FAIL':4s}  {name}: value={value:.4g} "
              f"bound={bound:.4g}")
        failed += 0 if ok else 1
    _write_csv(os.path.join(out, "validate.csv"),
               ["check", "value", "bound", "status"], rows, _meta(cfg))
    return 1 if failed else 0


def cmd_ck_test(cfg, out, args):
    from .engine import chapman_kolmogorov_check

    eng = _build_engine(cfg)
    t, s = cfg.ck["t"], cfg.ck["s"]
    err, info = chapman_kolmogorov_check(eng, t, s, cfg.x)
    tol = 1e-3 if eng.phi_is_trivial(t) else 1e-2
    ok = err <= tol
    _write_csv(
        os.path.join(out, "ck_test.csv"),
        ["t", "s", "x", "sup_error", "tolerance", "status"],
        [[t, s, cfg.x, float(err), tol, "pass" if ok else "FAIL"]],
        _meta(cfg, info),
    )
    print(f"{'pass' if ok else 'FAIL'}: ck sup error {err:.4g} "
          f"(tol {tol:g}, support {info['n_support']} pts)")
    return 0 if ok else 1


_COMMANDS = {
    "kernel-table": cmd_kernel_table,
    "density": cmd_density,
    "derivative": cmd_derivative,
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "ck-test": cmd_ck_test,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="stabledens",
        description="transition densities of stable-noise SDEs with Holder "
                    "drift: series construction, derivative, and "
                    "Monte-Carlo validation",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=False, default=None,
                        help="path to a key = value config file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override mc.seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="thread count hint for numerical backends")
    args = parser.parse_args(argv)

    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))

    from .config import ConfigError, build_config, load_config, \
        parse_config_text

    try:
        if args.config:
            cfg = load_config(args.config)
        else:
            cfg = build_config(parse_config_text(""))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.mc["seed"] = args.seed
    os.makedirs(args.out, exist_ok=True)
    return _COMMANDS[args.command](cfg, args.out, args)


if __name__ == "__main__":
    sys.exit(main())
