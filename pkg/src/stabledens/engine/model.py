"""Model description: stability index, drift, jump-intensity field, and the
derived exponents that control the series and its error bounds."""

from dataclasses import dataclass, field

import numpy as np

from ..drift import DriftSpec


@dataclass(frozen=True)
class ACoeff:
    """Scalar jump-intensity field a(x) = |sigma(x)|^alpha with bounds.

    Inputs are batches of scalars for dim=1 and (..., dim) coordinate
    arrays otherwise.
    """

    kind: str
    lo: float
    hi: float
    eta: float = 1.0
    value: float = 1.0
    dim: int = 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r2 = x**2 if self.dim == 1 else np.sum(x**2, axis=-1)
        if self.kind == "constant":
            return np.full(r2.shape if r2.ndim else (), self.value)[()]
        if self.kind == "benchmark":
            return 1.0 + 0.2 / (1.0 + r2)
        raise ValueError(f"unknown a-coefficient kind {self.kind!r}")


def a_constant(c=1.0, dim=1):
    if c <= 0:
        raise ValueError("constant jump intensity must be positive")
    return ACoeff("constant", lo=c, hi=c, eta=1.0, value=c, dim=dim)


def a_benchmark(dim=1):
    """Smooth benchmark intensity 1 + 0.2/(1+|x|^2), Lipschitz, in [1, 1.2]."""
    return ACoeff("benchmark", lo=1.0, hi=1.2, eta=1.0, dim=dim)


def rho_k(gamma: float, k: int, alpha: float) -> float:
    """Excess exponent of the k-th Picard center: sum_{j<=k} gamma^j - 1/alpha."""
    return float(sum(gamma**j for j in range(k + 1)) - 1.0 / alpha)


@dataclass(frozen=True)
class ModelSpec:
    alpha: float
    drift: DriftSpec
    a: ACoeff
    chi: float
    eta: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must be in (0, 2), got {self.alpha}")
        if self.alpha + self.gamma <= 1.0:
            raise ValueError(
                "balance condition violated: alpha + gamma = "
                f"{self.alpha + self.gamma:.6g} <= 1 (weak uniqueness may fail; "
                "require alpha + gamma > 1)"
            )
        if not 0.0 < self.chi < min(self.alpha, self.eta):
            raise ValueError(
                f"chi must lie in (0, min(alpha, eta)) = "
                f"(0, {min(self.alpha, self.eta):.6g}), got {self.chi}"
            )
        if not 0.0 < self.a.lo <= self.a.hi:
            raise ValueError("jump intensity bounds must satisfy 0 < lo <= hi")

    @property
    def gamma(self):
        return self.drift.gamma

    @property
    def dim(self):
        return self.drift.dim

    @property
    def delta(self):
        """1 - 1/alpha + gamma/alpha; positive exactly under the balance
        condition."""
        return 1.0 - 1.0 / self.alpha + self.gamma / self.alpha

    @property
    def zeta(self):
        return min(self.delta, self.chi, self.chi / self.alpha)

    @property
    def alpha_prime(self):
        return min(1.0, self.alpha)

    def rho(self, k: int) -> float:
        return rho_k(self.gamma, k, self.alpha)

    def require_picard(self, k: int):
        r = self.rho(k)
        if r <= 0:
            raise ValueError(
                f"picard center k={k} inadmissible: rho_k = "
                f"sum(gamma^j, j=0..{k}) - 1/alpha = {r:.6g} <= 0"
            )
        return r
