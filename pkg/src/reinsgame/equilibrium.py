"""Robust n-insurer equilibrium: investment coefficients, retention fixed point, worst-case measure."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, DegeneracyError, NoEquilibriumError, StateError, ValidationError
from .params import GameSpec, InsurerType, MarketParams, validate, vol
from .value_function import DEFAULT_GRID, ValueCoeffs, ValueFunction, f_rate, riccati_coeffs

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 200


def _as_times(t):
    t = np.asarray(t, dtype=float)
    return np.atleast_1d(t), t.ndim == 0


def _squeeze(x, scalar):
    return x[..., 0] if scalar else x


def _column(spec: GameSpec, name: str) -> np.ndarray:
    return np.array([getattr(ins, name) for ins in spec.insurers], dtype=float)[:, None]


# --------------------------------------------------------------------------- retention


def pqr(insurer: InsurerType, market: MarketParams, n: int, t, competition_factor: float | None = None):
    """Coefficients (P, Q, R) of the retention best response at time t.

    ``competition_factor`` multiplies the variance block of R; it defaults to 1 - theta/n.
    """
    t = np.asarray(t, dtype=float)
    lam = insurer.total_intensity(market)
    b3, b4 = insurer.beta[2], insurer.beta[3]
    g = market.discount(t)
    factor = 1.0 - insurer.theta / n if competition_factor is None else competition_factor
    P = 2.0 * market.eta_hat * lam * insurer.mu2 / (insurer.delta * g)
    Q = market.lambda_hat * insurer.theta * insurer.mu1 * (1.0 - b3) * np.ones_like(g)
    R = P + factor * (lam * insurer.mu2 * (1.0 - b4) + market.lambda_hat * insurer.mu1**2 * (b4 - b3))
    if t.ndim == 0:
        return float(P), float(Q), float(R)
    return P, Q, R


def pqr_all(spec: GameSpec, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(P, Q, R) for every insurer, each of shape (n, len(t)) (or (n,) for scalar t)."""
    ts, scalar = _as_times(t)
    rows = [pqr(ins, spec.market, spec.n, ts) for ins in spec.insurers]
    P, Q, R = (np.vstack([row[j] for row in rows]) for j in range(3))
    return _squeeze(P, scalar), _squeeze(Q, scalar), _squeeze(R, scalar)


def seed_from_pqr(P, Q, R, mu1) -> np.ndarray:
    """Unique solution of the uncapped linear retention system."""
    P, Q, R = (np.asarray(x, dtype=float) for x in (P, Q, R))
    mu1 = np.asarray(mu1, dtype=float).reshape((-1,) + (1,) * (P.ndim - 1))
    n = P.shape[0]
    den = mu1 * Q + n * R
    if np.any(den <= 0):
        raise DegeneracyError("nonpositive denominator mu1 Q + n R in the retention seed")
    coupling = n - np.sum(n * mu1 * Q / den, axis=0)
    if np.any(coupling <= 0):
        raise DegeneracyError("retention seed: coupling denominator is not positive")
    aggregate = np.sum(n * mu1 * P / den, axis=0) / coupling
    return n * Q / den * aggregate + n * P / den


def reinsurance_seed(spec: GameSpec, t) -> np.ndarray:
    P, Q, R = pqr_all(spec, t)
    return seed_from_pqr(P, Q, R, _column(spec, "mu1")[:, 0])


def _retention_map(P, Q, R, mu1, a, n):
    peer_sum = np.sum(mu1 * a, axis=0) - mu1 * a
    return np.minimum(Q / R * peer_sum / n + P / R, 1.0)


def fixed_point_residual(P, Q, R, mu1, a) -> float:
    P, Q, R, a = (np.asarray(x, dtype=float) for x in (P, Q, R, a))
    mu1 = np.asarray(mu1, dtype=float).reshape((-1,) + (1,) * (P.ndim - 1))
    return float(np.max(np.abs(a - _retention_map(P, Q, R, mu1, a, P.shape[0]))))


@dataclass(frozen=True)
class FixedPointResult:
    a: np.ndarray
    seed: np.ndarray
    iterations: int
    residual: float


def fixed_point_from_pqr(P, Q, R, mu1, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> FixedPointResult:
    """Capped retention fixed point, iterated downward from the uncapped seed."""
    P, Q, R = (np.asarray(x, dtype=float) for x in (P, Q, R))
    mu1 = np.asarray(mu1, dtype=float).reshape((-1,) + (1,) * (P.ndim - 1))
    n = P.shape[0]
    seed = seed_from_pqr(P, Q, R, mu1.ravel())
    if np.all(seed <= 1.0):
        return FixedPointResult(seed, seed, 0, fixed_point_residual(P, Q, R, mu1, seed))
    a = seed
    for it in range(1, max_iter + 1):
        nxt = _retention_map(P, Q, R, mu1, a, n)
        if np.any(nxt > a + 1e-14 * np.maximum(1.0, np.abs(a))):
            raise ConvergenceError(f"retention iteration increased at step {it}")
        if np.any(nxt < 0):
            raise ConvergenceError(f"retention iteration went negative at step {it}")
        step = float(np.max(np.abs(nxt - a)))
        a = nxt
        if step < tol:
            return FixedPointResult(a, seed, it, fixed_point_residual(P, Q, R, mu1, a))
    raise ConvergenceError(
        f"retention fixed point did not converge in {max_iter} iterations "
        f"(residual {fixed_point_residual(P, Q, R, mu1, a):.3e})"
    )


def reinsurance_fixed_point(spec: GameSpec, t, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> FixedPointResult:
    P, Q, R = pqr_all(spec, t)
    return fixed_point_from_pqr(P, Q, R, _column(spec, "mu1")[:, 0], tol, max_iter)


def explicit_form_holds(spec: GameSpec) -> bool:
    """Sufficient condition under which the seed never exceeds the cap."""
    n = spec.n
    mean_mu1 = sum(ins.mu1 for ins in spec.insurers) / n
    return all(
        (n - 1) / n * ins.mu2 >= mean_mu1 * ins.mu1 and ins.beta[2] >= ins.beta[3] for ins in spec.insurers
    )


def best_response_retention(spec: GameSpec, i: int, t, a) -> float:
    """Insurer i's retention best response to the peers' retentions a (length n)."""
    P, Q, R = pqr(spec.insurers[i], spec.market, spec.n, float(t))
    mu1 = _column(spec, "mu1")[:, 0]
    a = np.asarray(a, dtype=float)
    peer = float(np.sum(mu1 * a) - mu1[i] * a[i])
    return min(Q / R * peer / spec.n + P / R, 1.0)


# --------------------------------------------------------------------------- investment


@dataclass(frozen=True)
class InvestmentSplit:
    """Investment coefficient split into own and competition parts, each (n, ...)."""

    myopic: np.ndarray
    hedging: np.ndarray
    competition_myopic: np.ndarray
    competition_hedging: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.myopic + self.hedging + self.competition_myopic + self.competition_hedging


def _theta_gap(spec: GameSpec) -> float:
    gap = spec.n - spec.theta_sum
    if abs(gap) <= 1e-12:
        raise NoEquilibriumError("sum of competition weights equals n; no equilibrium exists")
    return gap


def investment_split(spec: GameSpec, coeffs, t) -> InvestmentSplit:
    ts, scalar = _as_times(t)
    mk = spec.market
    gap = _theta_gap(spec)
    g = mk.discount(ts)[None, :]
    delta = _column(spec, "delta")
    theta = _column(spec, "theta")
    b1 = np.array([ins.beta[0] for ins in spec.insurers])[:, None]
    h = np.vstack([np.asarray(c.h(ts)) for c in coeffs])
    myopic = mk.m / (1.0 - b1) / (delta * g)
    hedging = mk.nu * mk.rho * h / (delta * g)
    comp_myopic = theta / gap * np.sum(myopic, axis=0, keepdims=True)
    comp_hedging = theta / gap * np.sum(hedging, axis=0, keepdims=True)
    parts = [_squeeze(x, scalar) for x in (myopic, hedging, comp_myopic, comp_hedging)]
    return InvestmentSplit(*parts)


def investment_coefficients(spec: GameSpec, coeffs, t) -> np.ndarray:
    """Pi_i(t) with pi_i = Pi_i(t) z / (a z + b)."""
    return investment_split(spec, coeffs, t).total


def investment_amount(market: MarketParams, Pi, z):
    z = np.asarray(z, dtype=float)
    return Pi * z / (market.a * z + market.b)


def best_response_investment(spec: GameSpec, coeffs, i: int, t: float, z: float, pi) -> float:
    """Insurer i's investment best response to the peers' amounts pi (length n)."""
    mk = spec.market
    me = spec.insurers[i]
    n = spec.n
    pi = np.asarray(pi, dtype=float)
    peers = float(np.sum(pi) - pi[i])
    g = float(mk.discount(t))
    own = (mk.m / (1.0 - me.beta[0]) + mk.nu * mk.rho * coeffs[i].h(t)) * math.sqrt(z) / (me.delta * g * vol(z, mk))
    return me.theta / (n - me.theta) * peers + n / (n - me.theta) * own


# --------------------------------------------------------------------------- worst-case measure


@dataclass(frozen=True)
class WorstCaseControls:
    phi: float
    chi: float
    phitilde: float
    vartheta: np.ndarray


def worst_case_controls(spec: GameSpec, coeffs, a, i: int, t: float, z: float) -> WorstCaseControls:
    """Drift distortions chosen by insurer i's adversarial nature given retentions a."""
    mk = spec.market
    me = spec.insurers[i]
    n = spec.n
    b1, b2, b3, b4 = me.beta
    a = np.asarray(a, dtype=float)
    mu1 = _column(spec, "mu1")[:, 0]
    scale = np.array([ins.idiosyncratic_scale(mk) for ins in spec.insurers])
    G = me.delta * float(mk.discount(t))
    root = math.sqrt(z)
    w_own, w_peer = 1.0 - me.theta / n, me.theta / n
    peer = np.sum(mu1 * a) - mu1[i] * a[i]
    phi = b1 * mk.m * root / (1.0 - b1)
    chi = -mk.nu * math.sqrt(1.0 - mk.rho**2) * b2 * coeffs[i].h(t) * root
    phitilde = math.sqrt(mk.lambda_hat) * (w_own * mu1[i] * a[i] - w_peer * peer) * G * b3
    vartheta = -w_peer * a * scale * G * b4
    vartheta[i] = w_own * a[i] * scale[i] * G * b4
    return WorstCaseControls(phi, chi, phitilde, vartheta)


# --------------------------------------------------------------------------- profile


@dataclass(frozen=True)
class EquilibriumProfile:
    """Equilibrium strategies tabulated on a time grid, with exact on-demand evaluators."""

    spec: GameSpec
    variant: str
    time_grid: np.ndarray
    coeffs: tuple[ValueCoeffs, ...]
    Pi: np.ndarray
    a_star: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    phi_over_sqrtz: np.ndarray
    chi_over_sqrtz: np.ndarray
    phitilde: np.ndarray
    vartheta: np.ndarray
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    @property
    def n(self) -> int:
        return self.spec.n

    def investment(self, t) -> np.ndarray:
        return investment_coefficients(self.spec, self.coeffs, t)

    def retention(self, t) -> np.ndarray:
        return reinsurance_fixed_point(self.spec, t, self.tol, self.max_iter).a

    def amounts(self, t: float, z: float) -> np.ndarray:
        return investment_amount(self.spec.market, self.investment(t), z)

    def controls(self, i: int, t: float, z: float) -> WorstCaseControls:
        return worst_case_controls(self.spec, self.coeffs, self.retention(t), i, t, z)

    def value_function(self, i: int) -> ValueFunction:
        return ValueFunction(self.coeffs[i], self.spec.insurers[i].delta)

    def measure_tables(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(phi/sqrt z, chi/sqrt z, phitilde, vartheta) at times t, shapes (n,m) and (n,n,m)."""
        return _measure_tables(self.spec, self.coeffs, np.atleast_1d(np.asarray(t, float)), self.retention(t))

    def to_csv(self, path) -> Path:
        return write_equilibrium_csv(self, path)


def _measure_tables(spec: GameSpec, coeffs, ts: np.ndarray, a: np.ndarray):
    mk = spec.market
    n = spec.n
    a = a.reshape(n, -1)
    mu1 = _column(spec, "mu1")
    theta = _column(spec, "theta")
    delta = _column(spec, "delta")
    beta = np.array([ins.beta for ins in spec.insurers])
    scale = np.array([ins.idiosyncratic_scale(mk) for ins in spec.insurers])[:, None]
    G = delta * mk.discount(ts)[None, :]
    phi = np.repeat((beta[:, 0] * mk.m / (1.0 - beta[:, 0]))[:, None], ts.size, axis=1)
    h = np.vstack([np.asarray(c.h(ts)) for c in coeffs])
    chi = -mk.nu * math.sqrt(1.0 - mk.rho**2) * beta[:, 1:2] * h
    total = np.sum(mu1 * a, axis=0, keepdims=True)
    peer = total - mu1 * a
    w_own, w_peer = 1.0 - theta / n, theta / n
    phitilde = math.sqrt(mk.lambda_hat) * (w_own * mu1 * a - w_peer * peer) * G * beta[:, 2:3]
    exposure = a * scale
    vartheta = -(w_peer * G * beta[:, 3:4])[:, None, :] * exposure[None, :, :]
    for i in range(n):
        vartheta[i, i] = w_own[i, 0] * exposure[i] * G[i] * beta[i, 3]
    return phi, chi, phitilde, vartheta


def solve_equilibrium(
    spec: GameSpec,
    n_grid: int = DEFAULT_GRID,
    variant: str = "corrected",
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    check: bool = True,
) -> EquilibriumProfile:
    """Compute the equilibrium on a uniform grid and tabulate each insurer's f."""
    if check:
        report = validate(spec, variant)
        if not report.ok:
            raise ValidationError(report)
    _theta_gap(spec)
    mk = spec.market
    grid = np.linspace(0.0, mk.horizon, n_grid)
    base = [riccati_coeffs(ins, mk, variant) for ins in spec.insurers]

    def make_rate(i):
        def rate(s):
            s = np.asarray(s, dtype=float)
            a = reinsurance_fixed_point(spec, s, tol, max_iter).a.reshape(spec.n, -1)
            return f_rate(spec, i, s, np.asarray(base[i].h(s)), a)

        return rate

    coeffs = tuple(c.with_f(make_rate(i), n_grid) for i, c in enumerate(base))
    P, Q, R = pqr_all(spec, grid)
    fp = fixed_point_from_pqr(P, Q, R, _column(spec, "mu1")[:, 0], tol, max_iter)
    Pi = investment_coefficients(spec, coeffs, grid)
    phi, chi, phitilde, vartheta = _measure_tables(spec, coeffs, grid, fp.a)
    return EquilibriumProfile(
        spec, variant, grid, coeffs, Pi, fp.a, P, Q, R, phi, chi, phitilde, vartheta, tol, max_iter
    )


def f_of_t(profile: EquilibriumProfile | None, i: int, t):
    if profile is None:
        raise StateError("f requires a solved equilibrium profile")
    return profile.coeffs[i].f(t)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_rows(path, header, rows) -> Path:
    """Write CSV atomically (temporary file then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) if isinstance(x, (float, np.floating, int, np.integer)) else x for x in row])
    tmp.replace(path)
    return path


def write_equilibrium_csv(profile: EquilibriumProfile, path) -> Path:
    header = ["t"]
    cols = [profile.time_grid]
    for i in range(profile.n):
        k = i + 1
        header += [f"Pi_{k}", f"a_{k}", f"phi_{k}_over_sqrtz", f"chi_{k}_over_sqrtz", f"phitilde_{k}", f"vartheta_{k}_{k}"]
        cols += [
            profile.Pi[i],
            profile.a_star[i],
            profile.phi_over_sqrtz[i],
            profile.chi_over_sqrtz[i],
            profile.phitilde[i],
            profile.vartheta[i, i],
        ]
    return write_rows(path, header, zip(*cols))
