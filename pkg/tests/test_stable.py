import numpy as np
import pytest
from scipy.integrate import quad

from stabledens.stable import (
    MissingProfileError,
    QuadratureError,
    StableParams,
    build_radial_table,
    calibrate_frac_lap_constant,
    eval_frac_lap_g,
    eval_g,
    eval_grad_frac_lap_g,
    eval_grad_g,
    eval_hess_g,
    frac_lap_pv,
    g_at_zero,
    heat_kernel,
    load_table_csv,
    save_table_csv,
)

# oracle: high-resolution adaptive oscillatory quadrature of
# (1/pi) int_0^inf exp(-rho^0.7) cos(r rho) drho  (frozen values)
G07_ORACLE = {0.3: 2.974110851575e-01, 0.5: 2.204397521674e-01,
              50.0: 3.198714493206e-04}


def quad_oracle(alpha, r):
    val, _ = quad(lambda rho: np.exp(-(rho**alpha)), 0, np.inf,
                  weight="cos", wvar=r, limit=800)
    return val / np.pi


def test_params_validation():
    with pytest.raises(ValueError):
        StableParams(2.0, 1)
    with pytest.raises(ValueError):
        StableParams(0.7, 0)


def test_cauchy_closed_forms(table10):
    assert eval_g(table10, 0.0) == pytest.approx(1 / np.pi, rel=1e-7)
    assert eval_g(table10, 2.0) == pytest.approx(1 / (5 * np.pi), rel=1e-6)
    grad = eval_grad_g(table10, 1.0)
    assert grad == pytest.approx(-1 / (2 * np.pi), rel=1e-6)


def test_cauchy_2d_peak():
    tab = build_radial_table(StableParams(1.0, 2), r_max=50.0, n_points=512)
    # d-dim Cauchy: g(x) = Gamma((d+1)/2) / (pi^((d+1)/2) (1+|x|^2)^((d+1)/2))
    assert eval_g(tab, np.zeros(2)) == pytest.approx(1 / (2 * np.pi), rel=1e-6)
    r = 1.3
    closed = 1 / (2 * np.pi * (1 + r * r) ** 1.5)
    assert eval_g(tab, np.array([r, 0.0])) == pytest.approx(closed, rel=1e-5)


def test_peak_closed_form(table07):
    assert eval_g(table07, 0.0) == pytest.approx(g_at_zero(0.7, 1), rel=1e-9)


def test_eval_g_oracle_quadrature(table07):
    for r, ref in G07_ORACLE.items():
        assert eval_g(table07, r) == pytest.approx(ref, rel=1e-6)


def test_symmetry_and_positivity(table07):
    xs = np.array([0.17, 1.3, 7.7, 64.0, 180.0])
    ga = eval_g(table07, xs)
    gb = eval_g(table07, -xs)
    np.testing.assert_allclose(ga, gb, rtol=0)
    assert np.all(ga > 0)


def test_tail_model(table07):
    # eval inside the table vs the fitted tail model at r = 50
    model = table07.tail_coeff * 50.0 ** -(1 + 0.7)
    assert abs(model / G07_ORACLE[50.0] - 1) < 0.05
    # beyond r_max the model is exact by construction
    r = 1.5 * table07.r_max
    assert eval_g(table07, r) == pytest.approx(
        table07.tail_coeff * r ** -1.7, rel=1e-12
    )


def test_gradient_zero_at_origin(table07):
    assert eval_grad_g(table07, 0.0) == 0.0
    tab2 = build_radial_table(StableParams(1.0, 2), r_max=20, n_points=256)
    np.testing.assert_allclose(eval_grad_g(tab2, np.zeros(2)), np.zeros(2))


def test_gradient_matches_finite_differences(table07):
    # the FD step must span several panels of the runtime interpolant
    for r in (0.2, 0.9, 3.7, 20.0):
        h = 5e-3 * max(r, 1.0)
        fd = (eval_g(table07, r + h) - eval_g(table07, r - h)) / (2 * h)
        assert eval_grad_g(table07, r) == pytest.approx(fd, rel=1e-4)


def test_hessian_matches_finite_differences(table07):
    for r in (0.4, 1.7):
        h = 5e-3
        fd = (eval_grad_g(table07, r + h)
              - eval_grad_g(table07, r - h)) / (2 * h)
        assert float(eval_hess_g(table07, r)) == pytest.approx(fd, rel=1e-4)


def test_frac_lap_heat_identity(table07):
    # d/dt [t^(-1/a) g(t^(-1/a) x)] at t=1 equals the spectral image
    for x in (0.5, 1.1, 3.0):
        h = 1e-3

        def scaled(t):
            return t ** (-1 / 0.7) * eval_g(table07, x * t ** (-1 / 0.7))

        fd = (scaled(1 + h) - scaled(1 - h)) / (2 * h)
        assert eval_frac_lap_g(table07, x) == pytest.approx(fd, rel=1e-4)


def test_frac_lap_integrates_to_zero(table07):
    r = np.linspace(0, 99.0, 20001)
    vals = eval_frac_lap_g(table07, r)
    interior = 2 * np.trapz(vals, r)  # even integrand
    # analytic positive tail beyond the grid
    c = table07.tail_coeffs["fraclap"]
    tail = 2 * c * 99.0 ** -0.7 / 0.7
    assert abs(interior + tail) < 2e-3


def test_grad_frac_lap_consistency(table07):
    for r in (0.6, 2.2):
        h = 5e-3
        fd = (eval_frac_lap_g(table07, r + h)
              - eval_frac_lap_g(table07, r - h)) / (2 * h)
        assert eval_grad_frac_lap_g(table07, r) == pytest.approx(fd, rel=1e-4)


def test_heat_kernel_values(table10):
    # Cauchy kernel t / (pi (x^2 + t^2))
    assert heat_kernel(table10, 2.0, 0.0, 0.0) == pytest.approx(
        1 / (2 * np.pi), rel=1e-7
    )
    assert heat_kernel(table10, 0.5, 0.3, 1.3) == pytest.approx(
        0.5 / (np.pi * (1.0 + 0.25)), rel=1e-6
    )


def test_heat_kernel_self_similarity(table07):
    t, y = 0.37, 0.8
    direct = heat_kernel(table07, t, 0.0, y)
    scaled = t ** (-1 / 0.7) * eval_g(table07, y * t ** (-1 / 0.7))
    assert direct == pytest.approx(scaled, rel=1e-12)


def test_heat_kernel_normalization(table07):
    t = 0.5
    y = np.linspace(-60, 60, 60001)
    vals = heat_kernel(table07, t, 0.0, y)
    mass = np.trapz(vals, y)
    c = table07.tail_coeff * t  # scaled-kernel tail coefficient
    tail = 2 * c * 60.0 ** -0.7 / 0.7
    assert abs(mass + tail - 1.0) < 1e-3


def test_heat_kernel_domain_errors(table07):
    with pytest.raises(ValueError):
        heat_kernel(table07, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        heat_kernel(table07, 0.5, 0.0, 1.0, a_scale=-1.0)


def test_comparability_with_power_envelope(table07):
    # g(x) and (|x| v 1)^(-1-alpha) stay within fixed multiplicative bounds
    r = np.geomspace(1e-3, 90.0, 200)
    env = np.maximum(r, 1.0) ** -1.7
    ratio = eval_g(table07, r) / env
    c_lo, c_hi = ratio.min(), ratio.max()
    assert c_lo > 0.0
    assert np.isfinite(c_hi)
    assert c_hi / c_lo < 20.0


def test_missing_profile_error(table07):
    import dataclasses

    partial = dataclasses.replace(table07)
    partial.profiles = {"g": table07.profiles["g"]}
    with pytest.raises(MissingProfileError):
        partial.profile_at("hess", 1.0)


def test_quadrature_error_carries_radius(table07, monkeypatch):
    with pytest.raises(QuadratureError) as ei:
        build_radial_table(StableParams(0.7, 1), r_max=30, n_points=64,
                           quad_tol=1e-18)
    assert ei.value.radius is not None


def test_csv_roundtrip(tmp_path, table07):
    path = tmp_path / "table.csv"
    save_table_csv(table07, path)
    back = load_table_csv(path)
    assert back.params == table07.params
    assert back.tail_coeff == pytest.approx(table07.tail_coeff, rel=1e-15)
    r = np.array([0.1, 1.0, 25.0])
    np.testing.assert_allclose(eval_g(back, r), eval_g(table07, r), rtol=1e-12)
    np.testing.assert_allclose(
        back.profiles["fraclap"], table07.profiles["fraclap"], rtol=1e-15
    )


def test_pv_quadrature_calibration(table07):
    ccal = calibrate_frac_lap_constant(table07)
    # calibrated principal-value quadrature reproduces the spectral image
    for x in (0.8, 1.7):
        pv = ccal * frac_lap_pv(lambda u: eval_g(table07, u), x, 0.7)
        assert pv == pytest.approx(eval_frac_lap_g(table07, x), rel=2e-3)
