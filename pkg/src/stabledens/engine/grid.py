"""Space grid and density-field containers for the series engine."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Uniform space grid plus time-quadrature and truncation controls.

    h must resolve the kernel core at the smallest requested output time:
    h <= t_min^(1/alpha) / 4.
    """

    h: float
    half_width: float
    center: float = 0.0
    n_time: int = 10
    trunc_k: int = 12

    def __post_init__(self):
        if self.h <= 0 or self.half_width <= 0:
            raise ValueError("h and half_width must be positive")
        if self.half_width < 4 * self.h:
            raise ValueError("half_width too small for the spacing")
        if self.n_time < 4:
            raise ValueError("need at least 4 time-quadrature nodes per side")

    @property
    def points(self):
        n = int(round(2 * self.half_width / self.h)) + 1
        return self.center + self.h * (np.arange(n) - (n - 1) // 2)

    def check_resolves(self, t_min: float, alpha: float, a_min: float = 1.0):
        need = (t_min * a_min) ** (1.0 / alpha) / 4.0
        if self.h > need * (1 + 1e-12):
            raise ValueError(
                f"grid spacing h={self.h:.4g} does not resolve the kernel at "
                f"t={t_min:.4g}: need h <= {need:.4g}"
            )


def grid_for(t_min: float, alpha: float, half_width: float = 2.0,
             center: float = 0.0, a_min: float = 1.0, safety: float = 4.0,
             n_time: int = 10, trunc_k: int = 12) -> GridSpec:
    """Grid whose spacing resolves the kernel core at the smallest time."""
    h = (t_min * a_min) ** (1.0 / alpha) / safety
    return GridSpec(h=h, half_width=half_width, center=center,
                    n_time=n_time, trunc_k=trunc_k)


@dataclass
class DensityField:
    """Sampled density p_t(x, .) over the grid with its decompositions.

    p0 + residue and p_tilde + r_tilde are two decompositions of the same
    p; both sum to the p column where present.  Negative p values are
    quadrature artifacts: they are reported in diagnostics, never clipped.
    """

    y: np.ndarray
    t: float
    x_anchor: float
    p: np.ndarray
    p0: np.ndarray
    residue: np.ndarray
    p_tilde: np.ndarray = None
    r_tilde: np.ndarray = None
    center: float = None
    diagnostics: dict = field(default_factory=dict)

    def negativity_report(self):
        neg = self.p < 0
        worst = float(-self.p[neg].min()) if np.any(neg) else 0.0
        return {"count": int(neg.sum()), "worst": worst,
                "worst_rel": worst / float(np.max(self.p))}

    def mass(self, tail_alpha=None):
        """Grid mass, optionally adding fitted power tails beyond the edges."""
        h = self.y[1] - self.y[0]
        core = float(np.sum(self.p) * h)
        if tail_alpha is None:
            return core
        return core + _edge_tail_mass(self.y, self.p, tail_alpha, self.center)


def _edge_tail_mass(y, p, alpha, center=None):
    """Fit c r^(-1-alpha) on the outer decade of each side and integrate."""
    c0 = center if center is not None else y[np.argmax(p)]
    tail = 0.0
    n = len(y)
    win = max(8, n // 10)
    for sl, sign in ((slice(n - win, n), +1.0), (slice(0, win), -1.0)):
        r = sign * (y[sl] - c0)
        v = p[sl]
        good = (r > 0) & (v > 0)
        if good.sum() < 4:
            continue
        logc = np.mean(np.log(v[good]) + (1 + alpha) * np.log(r[good]))
        edge = r[good][-1] if sign > 0 else r[good][0]
        edge = float(np.max(r[good]))
        tail += np.exp(logc) * edge ** (-alpha) / alpha
    return tail
