"""Shared quadrature and fitting helpers."""

import functools

import numpy as np
from numpy.polynomial.legendre import leggauss


@functools.lru_cache(maxsize=32)
def gl_nodes(n):
    """Gauss-Legendre nodes/weights on (-1, 1), cached."""
    x, w = leggauss(n)
    return x, w


def gl_on_01(n):
    """Gauss-Legendre nodes/weights mapped to (0, 1)."""
    x, w = gl_nodes(n)
    return 0.5 * (x + 1.0), 0.5 * w


def panel_nodes(edges, order=16):
    """Composite Gauss-Legendre nodes/weights over consecutive panels."""
    edges = np.asarray(edges, dtype=float)
    xg, wg = gl_nodes(order)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    wts = (half[:, None] * wg[None, :]).ravel()
    return nodes, wts


def geometric_refine(edges, levels=52):
    """Split the first panel geometrically toward 0.

    Needed when the integrand has an algebraic singularity (in a derivative)
    at the left endpoint, e.g. rho^alpha with alpha < 1.
    """
    w0 = edges[1]
    sub = w0 * 0.5 ** np.arange(float(levels), -1.0, -1.0)
    return np.concatenate([[edges[0]], edges[0] + sub, edges[2:]])


def loglog_slope(x, y):
    """Least-squares slope of log y vs log x. Requires positive data."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("loglog_slope needs strictly positive data")
    return np.polyfit(np.log(x), np.log(y), 1)[0]


def fit_power_coeff(r, v, exponent):
    """Fit c in v ~ c * r**exponent by least squares on log |v|.

    Sign is taken from the majority sign of v; entries with the minority
    sign are dropped from the fit.
    """
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    sgn = 1.0 if np.sum(v > 0) >= np.sum(v < 0) else -1.0
    keep = sgn * v > 0
    if keep.sum() < 2:
        return 0.0
    logc = np.mean(np.log(sgn * v[keep]) - exponent * np.log(r[keep]))
    return sgn * np.exp(logc)


def power_tail_mass(edge_r, edge_v, exponent):
    """Analytic mass of c*r**exponent beyond edge_r, with c from the edge value.

    Requires exponent < -1. Returns 0 for nonpositive edge values.
    """
    if exponent >= -1:
        raise ValueError("tail exponent must be < -1 for finite mass")
    if edge_v <= 0 or edge_r <= 0:
        return 0.0
    # integral_edge^inf edge_v * (r/edge_r)^exponent dr
    return edge_v * edge_r / (-exponent - 1.0)


def trapezoid_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def max_rel_diff(a, b, floor=0.0):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.abs(b), floor)
    scale[scale == 0] = 1.0
    return float(np.max(np.abs(a - b) / scale))
