"""Exponential-affine candidate value function: g, h (closed form), f (quadrature) and partials.

The value of insurer i is v(t, y, z) = -(1/delta) exp(f(t) - delta y g(t) + h(t) z) with
g(t) = exp(r (T - t)), h solving a scalar Riccati equation and f an integral of a
deterministic rate from t to T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import DomainError, StateError
from .params import GameSpec, InsurerType, MarketParams

VARIANTS = ("corrected", "literal")
DEFAULT_GRID = 2001
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


@dataclass(frozen=True)
class RiccatiConstants:
    """Constants of h(t) = c1 (e - 1)/(e + c3), e = exp(-c2 (T - t))."""

    c1: float
    c2: float
    c3: float
    horizon: float
    variant: str = "corrected"


def riccati_terms(insurer: InsurerType, market: MarketParams) -> tuple[float, float, float]:
    """(linear, quadratic, source) coefficients of h' = lin h - quad h^2 + src.

    Obtained by collecting the z-linear terms of the HJBI equation after the worst-case
    measure and the best-response investment have been substituted.
    """
    b1, b2 = insurer.beta[0], insurer.beta[1]
    lin = market.kappa + market.m * market.nu * market.rho
    quad = 0.5 * market.nu**2 * (1.0 - market.rho**2) * (1.0 - b2)
    src = market.m**2 / (2.0 * (1.0 - b1))
    return lin, quad, src


def riccati_constants(
    insurer: InsurerType, market: MarketParams, variant: str = "corrected"
) -> RiccatiConstants:
    """Closed-form constants for h.

    ``corrected`` solves the Riccati equation for every m. ``literal`` reproduces the
    printed expressions for c2 and c3, which only coincide with the solution when m^2 = 1.
    """
    if variant not in VARIANTS:
        raise DomainError(f"unknown Riccati variant {variant!r}")
    if abs(market.rho) >= 1.0:
        raise DomainError("|rho| must be < 1")
    b1, b2 = insurer.beta[0], insurer.beta[1]
    if 1.0 - b2 <= 0.0 or 1.0 - b1 <= 0.0:
        raise DomainError("1 - beta must be positive")
    lin, quad, src = riccati_terms(insurer, market)
    if quad <= 0.0:
        raise DomainError("degenerate volatility of variance")
    disc = math.sqrt(lin**2 + 4.0 * src * quad)
    c1 = (lin + disc) / (2.0 * quad)
    if variant == "corrected":
        c2 = disc
        r_minus = (lin - disc) / (2.0 * quad)
        c3 = math.inf if r_minus == 0.0 else -c1 / r_minus
    else:
        c3 = 2.0 * (1.0 - b1) * lin * c1 + 1.0
        c2 = (c3 + 1.0) / (2.0 * (1.0 - b1) * c1)
    return RiccatiConstants(c1, c2, c3, market.horizon, variant)


def _check_time(t, horizon):
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12) or np.any(t > horizon * (1 + 1e-12) + 1e-12):
        raise DomainError(f"t must lie in [0, {horizon}]")
    return np.clip(t, 0.0, horizon)


def _scalarize(x):
    return float(x) if np.ndim(x) == 0 else x


def h_of_t(consts: RiccatiConstants, t):
    """h(t) in the factored form that cannot overflow for large c2 T."""
    t = _check_time(t, consts.horizon)
    if math.isinf(consts.c3):
        return _scalarize(np.zeros_like(t))
    e = np.exp(-consts.c2 * (consts.horizon - t))
    return _scalarize(consts.c1 * (e - 1.0) / (e + consts.c3))


def h_prime_exact(consts: RiccatiConstants, t):
    t = _check_time(t, consts.horizon)
    if math.isinf(consts.c3):
        return _scalarize(np.zeros_like(t))
    e = np.exp(-consts.c2 * (consts.horizon - t))
    return _scalarize(consts.c1 * consts.c2 * e * (consts.c3 + 1.0) / (e + consts.c3) ** 2)


def h_prime_fd(consts: RiccatiConstants, t, step: float = 1e-5):
    """Central finite-difference derivative of the closed form (independent oracle)."""
    t = np.asarray(t, dtype=float)
    dt = step * np.maximum(1.0, np.abs(t))
    return _scalarize((h_of_t(consts, t + dt) - h_of_t(consts, t - dt)) / (2.0 * dt))


def riccati_rhs(h, insurer: InsurerType, market: MarketParams):
    lin, quad, src = riccati_terms(insurer, market)
    h = np.asarray(h, dtype=float)
    return _scalarize(lin * h - quad * h**2 + src)


def riccati_residual(consts: RiccatiConstants, insurer: InsurerType, market: MarketParams, t):
    """(h'_fd - rhs) / max(1, largest term), evaluated on the closed form."""
    h = np.asarray(h_of_t(consts, t))
    lin, quad, src = riccati_terms(insurer, market)
    scale = np.maximum.reduce([np.ones_like(h), np.abs(lin * h), np.abs(quad * h**2), np.full_like(h, abs(src))])
    return _scalarize((np.asarray(h_prime_fd(consts, t)) - np.asarray(riccati_rhs(h, insurer, market))) / scale)


# --------------------------------------------------------------------------- backward integral


@dataclass(frozen=True)
class BackwardIntegral:
    """I(t) = integral of rate over [t, T], tabulated by composite Simpson.

    Off-node values add a 10-point Gauss-Legendre integral from t up to the next node,
    so evaluation is smooth in t and I' = -rate holds pointwise.
    """

    grid: np.ndarray
    values: np.ndarray
    rate: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)

    @classmethod
    def build(cls, rate, horizon: float, n_nodes: int = DEFAULT_GRID) -> "BackwardIntegral":
        if n_nodes < 3:
            raise DomainError("need at least 3 quadrature nodes")
        grid = np.linspace(0.0, horizon, n_nodes)
        y = np.asarray(rate(grid), dtype=float)
        forward = cumulative_simpson(y, x=grid, initial=0.0)
        values = forward[-1] - forward
        values[-1] = 0.0
        return cls(grid, values, rate)

    def __call__(self, t):
        shape = np.shape(t)
        t = _check_time(np.ravel(np.asarray(t, dtype=float)), self.grid[-1])
        idx = np.searchsorted(self.grid, t, side="left")
        upper = self.grid[idx]
        out = self.values[idx].copy()
        gap = upper - t
        need = gap > 0
        if np.any(need):
            lo, hi = t[need], upper[need]
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
            vals = np.asarray(self.rate(nodes.ravel()), dtype=float).reshape(nodes.shape)
            out[need] += half * (vals @ _GL_WEIGHTS)
        return out.reshape(shape) if shape else out


# --------------------------------------------------------------------------- coefficients


@dataclass(frozen=True)
class ValueCoeffs:
    """g, h and (once an equilibrium is known) f for one insurer."""

    constants: RiccatiConstants
    r: float
    f_integral: BackwardIntegral | None = None

    @property
    def c1(self) -> float:
        return self.constants.c1

    @property
    def c2(self) -> float:
        return self.constants.c2

    @property
    def c3(self) -> float:
        return self.constants.c3

    @property
    def horizon(self) -> float:
        return self.constants.horizon

    @property
    def time_grid(self) -> np.ndarray:
        if self.f_integral is None:
            raise StateError("f has not been tabulated")
        return self.f_integral.grid

    def g(self, t):
        t = _check_time(t, self.horizon)
        return _scalarize(np.exp(self.r * (self.horizon - t)))

    def g_prime(self, t):
        return _scalarize(-self.r * np.asarray(self.g(t)))

    def h(self, t):
        return h_of_t(self.constants, t)

    def h_prime(self, t):
        return h_prime_exact(self.constants, t)

    def f(self, t):
        if self.f_integral is None:
            raise StateError("f needs an equilibrium profile; solve the game first")
        out = self.f_integral(t)
        return _scalarize(out[0] if np.ndim(t) == 0 else out.reshape(np.shape(t)))

    def f_prime(self, t):
        if self.f_integral is None:
            raise StateError("f needs an equilibrium profile; solve the game first")
        t = _check_time(t, self.horizon)
        out = -np.asarray(self.f_integral.rate(np.atleast_1d(t)), dtype=float)
        return float(out[0]) if np.ndim(t) == 0 else out.reshape(np.shape(t))

    def with_f(self, rate, n_nodes: int = DEFAULT_GRID) -> "ValueCoeffs":
        return ValueCoeffs(self.constants, self.r, BackwardIntegral.build(rate, self.horizon, n_nodes))


def riccati_coeffs(insurer: InsurerType, market: MarketParams, variant: str = "corrected") -> ValueCoeffs:
    return ValueCoeffs(riccati_constants(insurer, market, variant), market.r)


def f_rate(spec: GameSpec, i: int, s: np.ndarray, h_i: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Integrand F with f(t) = int_t^T F(s) ds for insurer i in the n-insurer game.

    ``a`` holds the equilibrium retentions of all insurers, shape (n, len(s)).
    """
    mk = spec.market
    n = spec.n
    me = spec.insurers[i]
    w_own = 1.0 - me.theta / n
    w_peer = me.theta / n
    s = np.asarray(s, dtype=float)
    G = me.delta * np.exp(mk.r * (mk.horizon - s))
    lam = np.array([ins.total_intensity(mk) for ins in spec.insurers])[:, None]
    mu1 = np.array([ins.mu1 for ins in spec.insurers])[:, None]
    mu2 = np.array([ins.mu2 for ins in spec.insurers])[:, None]
    eta = np.array([ins.eta for ins in spec.insurers])[:, None]
    scale = np.array([ins.idiosyncratic_scale(mk) for ins in spec.insurers])[:, None]
    prem = eta * lam * mu1 - mk.eta_hat * (1.0 - a) ** 2 * lam * mu2
    peer = np.ones(n, dtype=bool)
    peer[i] = False
    drift = w_own * prem[i] - w_peer * prem[peer].sum(axis=0)
    common = w_own * a[i] * mu1[i, 0] - w_peer * (a[peer] * mu1[peer]).sum(axis=0)
    idio_sq = (w_own * a[i] * scale[i, 0]) ** 2 + (w_peer**2) * ((a[peer] * scale[peer]) ** 2).sum(axis=0)
    b3, b4 = me.beta[2], me.beta[3]
    return (
        mk.kappa * mk.zbar * h_i
        - G * drift
        + 0.5 * G**2 * (mk.lambda_hat * common**2 * (1.0 - b3) + idio_sq * (1.0 - b4))
    )


# --------------------------------------------------------------------------- value function


@dataclass(frozen=True)
class ValueFunction:
    coeffs: ValueCoeffs
    delta: float

    def _parts(self, t, y, z):
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0):
            raise DomainError("value function requires z > 0")
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        g = np.asarray(self.coeffs.g(t))
        h = np.asarray(self.coeffs.h(t))
        f = np.asarray(self.coeffs.f(t))
        v = -np.exp(f - self.delta * y * g + h * z) / self.delta
        return t, y, z, g, h, v

    def value(self, t, y, z):
        return _scalarize(self._parts(t, y, z)[-1])

    def value_y(self, t, y, z):
        _, _, _, g, _, v = self._parts(t, y, z)
        return _scalarize(-self.delta * g * v)

    def value_z(self, t, y, z):
        _, _, _, _, h, v = self._parts(t, y, z)
        return _scalarize(h * v)

    def value_yy(self, t, y, z):
        _, _, _, g, _, v = self._parts(t, y, z)
        return _scalarize(self.delta**2 * g**2 * v)

    def value_zz(self, t, y, z):
        _, _, _, _, h, v = self._parts(t, y, z)
        return _scalarize(h**2 * v)

    def value_yz(self, t, y, z):
        _, _, _, g, h, v = self._parts(t, y, z)
        return _scalarize(-self.delta * g * h * v)

    def value_t(self, t, y, z):
        t, y, z, g, h, v = self._parts(t, y, z)
        fp = np.asarray(self.coeffs.f_prime(t))
        hp = np.asarray(self.coeffs.h_prime(t))
        gp = -self.coeffs.r * g
        return _scalarize((fp + hp * z - self.delta * y * gp) * v)


def terminal_utility(y, delta: float):
    """CARA utility -(1/delta) exp(-delta y)."""
    return _scalarize(-np.exp(-delta * np.asarray(y, dtype=float)) / delta)
