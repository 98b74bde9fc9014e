"""Mean-field limit of the insurer game for a discrete distribution of insurer types."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .equilibrium import DEFAULT_TOL, investment_coefficients, pqr, reinsurance_fixed_point, write_rows
from .errors import ConfigError, DegeneracyError, NoEquilibriumError
from .params import GameSpec, InsurerType, MarketParams
from .value_function import DEFAULT_GRID, BackwardIntegral, ValueCoeffs, riccati_coeffs


@dataclass(frozen=True)
class TypeDistribution:
    atoms: tuple[tuple[InsurerType, float], ...]

    def __post_init__(self):
        atoms = tuple((ins, float(w)) for ins, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise ConfigError("type distribution needs at least one atom")
        if any(w <= 0 for _, w in atoms):
            raise ConfigError("atom weights must be positive")
        if abs(sum(w for _, w in atoms) - 1.0) > 1e-12:
            raise ConfigError("atom weights must sum to 1")

    @classmethod
    def uniform(cls, insurers) -> "TypeDistribution":
        insurers = list(insurers)
        return cls(tuple((ins, 1.0 / len(insurers)) for ins in insurers))

    @property
    def types(self) -> list[InsurerType]:
        return [ins for ins, _ in self.atoms]

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])

    def mean(self, values) -> np.ndarray:
        """Expectation of per-atom values (leading axis indexes atoms)."""
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.weights, values, axes=(0, 0))

    @property
    def mean_theta(self) -> float:
        return float(self.mean([ins.theta for ins in self.types]))


def _gap(dist: TypeDistribution) -> float:
    gap = 1.0 - dist.mean_theta
    if abs(gap) <= 1e-12:
        raise NoEquilibriumError("E[theta] = 1; the mean-field equilibrium does not exist")
    return gap


def own_coefficients(dist: TypeDistribution, market: MarketParams, t, variant: str = "corrected") -> np.ndarray:
    """(m/(1-beta1) + nu rho h_u(t)) / (delta_u g(t)) per atom, shape (atoms, len(t))."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    g = market.discount(ts)
    rows = []
    for ins in dist.types:
        h = np.asarray(riccati_coeffs(ins, market, variant).h(ts))
        rows.append((market.m / (1.0 - ins.beta[0]) + market.nu * market.rho * h) / (ins.delta * g))
    return np.vstack(rows)


def m1(dist: TypeDistribution, market: MarketParams, t, variant: str = "corrected"):
    out = dist.mean(own_coefficients(dist, market, t, variant))
    return float(out[0]) if np.ndim(t) == 0 else out


def pqr_atoms(dist: TypeDistribution, market: MarketParams, t, literal_n: int | None = None):
    """(P, Q, R) per atom, shape (atoms, len(t)); ``literal_n`` keeps a (1 - theta/n) factor in R."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    rows = []
    for ins in dist.types:
        factor = 1.0 if literal_n is None else 1.0 - ins.theta / literal_n
        rows.append(pqr(ins, market, 1, ts, competition_factor=factor))
    return tuple(np.vstack([row[j] for row in rows]) for j in range(3))


def _g_map(x, P, Q, R, mu1, weights):
    return np.tensordot(weights, mu1 * np.minimum(Q / R * x + P / R, 1.0), axes=(0, 0))


def omega_from_pqr(P, Q, R, mu1, weights, tol: float = 1e-15, max_iter: int = 200) -> np.ndarray:
    """Vectorised bisection for x = E[mu1 min(Q x / R + P / R, 1)] on [0, max mu1]."""
    mu1 = np.asarray(mu1, dtype=float)[:, None]
    m = P.shape[1]
    lo = np.zeros(m)
    hi = np.full(m, float(mu1.max()))
    f_lo = _g_map(lo, P, Q, R, mu1, weights) - lo
    f_hi = _g_map(hi, P, Q, R, mu1, weights) - hi
    if np.any(f_lo < 0) or np.any(f_hi > 0):
        raise DegeneracyError("no sign change of the aggregate retention map on [0, max mu1]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        up = _g_map(mid, P, Q, R, mu1, weights) - mid > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
        if np.all(hi - lo <= tol):
            break
    return 0.5 * (lo + hi)


def omega_bar(dist: TypeDistribution, market: MarketParams, t, tol: float = 1e-15, literal_n: int | None = None):
    P, Q, R = pqr_atoms(dist, market, t, literal_n)
    mu1 = np.array([ins.mu1 for ins in dist.types])
    out = omega_from_pqr(P, Q, R, mu1, dist.weights, tol)
    return float(out[0]) if np.ndim(t) == 0 else out


def omega_residual(dist: TypeDistribution, market: MarketParams, t, omega, literal_n: int | None = None) -> float:
    P, Q, R = pqr_atoms(dist, market, t, literal_n)
    mu1 = np.array([ins.mu1 for ins in dist.types])[:, None]
    omega = np.atleast_1d(omega)
    return float(np.max(np.abs(_g_map(omega, P, Q, R, mu1, dist.weights) - omega)))


@dataclass(frozen=True)
class MeanFieldSlice:
    """Mean-field strategies and worst-case measure at a set of times, atoms on axis 0."""

    times: np.ndarray
    M1: np.ndarray
    omega_bar: np.ndarray
    Pi: np.ndarray
    a_star: np.ndarray
    phi_over_sqrtz: np.ndarray
    chi_over_sqrtz: np.ndarray
    phitilde: np.ndarray
    vartheta_own: np.ndarray

    def vartheta(self, u0: int, u1: int) -> np.ndarray:
        """Distortion chosen by atom u0 on the idiosyncratic noise of atom u1 (zero off the diagonal)."""
        return self.vartheta_own[u0] if u0 == u1 else np.zeros_like(self.vartheta_own[u0])


def mean_field_strategies(
    dist: TypeDistribution,
    market: MarketParams,
    t,
    variant: str = "corrected",
    literal_n: int | None = None,
) -> MeanFieldSlice:
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    gap = _gap(dist)
    own = own_coefficients(dist, market, ts, variant)
    M1 = dist.mean(own)
    theta = np.array([ins.theta for ins in dist.types])[:, None]
    Pi = theta * M1[None, :] / gap + own
    P, Q, R = pqr_atoms(dist, market, ts, literal_n)
    mu1 = np.array([ins.mu1 for ins in dist.types])[:, None]
    om = omega_from_pqr(P, Q, R, mu1[:, 0], dist.weights)
    a = np.minimum(Q / R * om[None, :] + P / R, 1.0)
    beta = np.array([ins.beta for ins in dist.types])
    delta = np.array([ins.delta for ins in dist.types])[:, None]
    G = delta * market.discount(ts)[None, :]
    scale = np.array([ins.idiosyncratic_scale(market) for ins in dist.types])[:, None]
    h = np.vstack([np.asarray(riccati_coeffs(ins, market, variant).h(ts)) for ins in dist.types])
    phi = np.repeat((beta[:, 0] * market.m / (1.0 - beta[:, 0]))[:, None], ts.size, axis=1)
    chi = -market.nu * math.sqrt(1.0 - market.rho**2) * beta[:, 1:2] * h
    phitilde = math.sqrt(market.lambda_hat) * (mu1 * a - theta * om[None, :]) * beta[:, 2:3] * G
    vartheta = a * scale * beta[:, 3:4] * G
    return MeanFieldSlice(ts, M1, om, Pi, a, phi, chi, phitilde, vartheta)


def mean_field_f_rate(dist: TypeDistribution, market: MarketParams, u0: int, variant: str = "corrected", literal_n=None):
    """Integrand F_u0 with f_u0(t) = int_t^T F_u0(s) ds in the mean-field game."""
    me = dist.types[u0]
    coeff = riccati_coeffs(me, market, variant)
    lam = np.array([ins.total_intensity(market) for ins in dist.types])[:, None]
    mu1 = np.array([ins.mu1 for ins in dist.types])[:, None]
    mu2 = np.array([ins.mu2 for ins in dist.types])[:, None]
    eta = np.array([ins.eta for ins in dist.types])[:, None]
    L0 = me.total_intensity(market)
    b3, b4 = me.beta[2], me.beta[3]
    th = me.theta

    def rate(s):
        s = np.asarray(s, dtype=float)
        sl = mean_field_strategies(dist, market, s, variant, literal_n)
        a_all = sl.a_star
        a = a_all[u0]
        om = sl.omega_bar
        G = me.delta * market.discount(s)
        mean_prem = dist.mean(eta * lam * mu1)
        mean_cost = dist.mean((1.0 - a_all) ** 2 * lam * mu2)
        return (
            market.kappa * market.zbar * np.asarray(coeff.h(s))
            - (me.eta * L0 * me.mu1 - th * mean_prem) * G
            + market.eta_hat * (1.0 - a) ** 2 * L0 * me.mu2 * G
            - th * market.eta_hat * mean_cost * G
            + 0.5 * a**2 * (L0 * me.mu2 * (1.0 - b4) + market.lambda_hat * me.mu1**2 * (b4 - b3)) * G**2
            + 0.5 * market.lambda_hat * th**2 * om**2 * G**2 * (1.0 - b3)
            - market.lambda_hat * th * a * me.mu1 * om * G**2 * (1.0 - b3)
        )

    return rate


def mean_field_f(dist: TypeDistribution, market: MarketParams, u0: int, t, n_nodes: int = DEFAULT_GRID, variant="corrected"):
    integral = BackwardIntegral.build(mean_field_f_rate(dist, market, u0, variant), market.horizon, n_nodes)
    out = integral(t)
    return float(out[0]) if np.ndim(t) == 0 else out


@dataclass(frozen=True)
class MeanFieldEquilibrium:
    dist: TypeDistribution
    market: MarketParams
    variant: str
    time_grid: np.ndarray
    slice: MeanFieldSlice
    coeffs: tuple[ValueCoeffs, ...]

    @property
    def M1(self) -> np.ndarray:
        return self.slice.M1

    @property
    def omega_bar(self) -> np.ndarray:
        return self.slice.omega_bar

    @property
    def Pi(self) -> np.ndarray:
        return self.slice.Pi

    @property
    def a_star(self) -> np.ndarray:
        return self.slice.a_star

    def to_csv(self, path) -> Path:
        header = ["t", "M1", "omega_bar"]
        cols = [self.time_grid, self.M1, self.omega_bar]
        sl = self.slice
        for u in range(len(self.dist.atoms)):
            k = u + 1
            header += [f"Pi_{k}", f"a_{k}", f"phi_{k}_over_sqrtz", f"chi_{k}_over_sqrtz", f"phitilde_{k}", f"vartheta_{k}_{k}"]
            cols += [sl.Pi[u], sl.a_star[u], sl.phi_over_sqrtz[u], sl.chi_over_sqrtz[u], sl.phitilde[u], sl.vartheta_own[u]]
        return write_rows(path, header, zip(*cols))


def solve_mean_field(
    dist: TypeDistribution,
    market: MarketParams,
    n_grid: int = DEFAULT_GRID,
    variant: str = "corrected",
    literal_n: int | None = None,
) -> MeanFieldEquilibrium:
    _gap(dist)
    grid = np.linspace(0.0, market.horizon, n_grid)
    sl = mean_field_strategies(dist, market, grid, variant, literal_n)
    coeffs = tuple(
        riccati_coeffs(ins, market, variant).with_f(mean_field_f_rate(dist, market, u, variant, literal_n), n_grid)
        for u, ins in enumerate(dist.types)
    )
    return MeanFieldEquilibrium(dist, market, variant, grid, sl, coeffs)


# --------------------------------------------------------------------------- n -> infinity


def replicate(dist: TypeDistribution, market: MarketParams, n: int) -> tuple[GameSpec, list[int]]:
    """n-insurer game with n * weight copies of each atom; returns the spec and each insurer's atom."""
    counts = [n * w for w in dist.weights]
    if any(abs(c - round(c)) > 1e-9 for c in counts):
        raise ConfigError(f"n={n} does not replicate the atom weights exactly")
    insurers, owner = [], []
    for u, (ins, c) in enumerate(zip(dist.types, counts)):
        insurers += [ins] * int(round(c))
        owner += [u] * int(round(c))
    return GameSpec(market, tuple(insurers)), owner


@dataclass(frozen=True)
class ConvergenceReport:
    n_values: tuple[int, ...]
    pi_errors: tuple[float, ...]
    a_errors: tuple[float, ...]

    @staticmethod
    def _ratios(errs):
        return tuple(b / a if a > 0 else math.nan for a, b in zip(errs, errs[1:]))

    @property
    def pi_ratios(self) -> tuple[float, ...]:
        return self._ratios(self.pi_errors)

    @property
    def a_ratios(self) -> tuple[float, ...]:
        return self._ratios(self.a_errors)


def consistency_check(
    dist: TypeDistribution,
    market: MarketParams,
    n_values,
    n_grid: int = 401,
    variant: str = "corrected",
) -> ConvergenceReport:
    """Sup-over-time distance between replicated n-insurer strategies and the mean-field ones."""
    grid = np.linspace(0.0, market.horizon, n_grid)
    mf = mean_field_strategies(dist, market, grid, variant)
    pi_err, a_err = [], []
    for n in n_values:
        spec, owner = replicate(dist, market, n)
        coeffs = [riccati_coeffs(ins, market, variant) for ins in spec.insurers]
        Pi = investment_coefficients(spec, coeffs, grid)
        a = reinsurance_fixed_point(spec, grid, DEFAULT_TOL).a
        pi_err.append(float(np.max(np.abs(Pi - mf.Pi[owner]))))
        a_err.append(float(np.max(np.abs(a - mf.a_star[owner]))))
    return ConvergenceReport(tuple(n_values), tuple(pi_err), tuple(a_err))
