"""Generator of (Y_i, Z), the penalised HJBI objective, and saddle-point verification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .equilibrium import EquilibriumProfile
from .errors import DegeneracyError, DomainError
from .params import GameSpec, vol
from .value_function import ValueFunction


@dataclass(frozen=True)
class ControlPoint:
    """State (t, y, z), every insurer's (pi, a), and insurer i's measure distortion."""

    t: float
    y: float
    z: float
    i: int
    pi: np.ndarray
    a: np.ndarray
    phi: float = 0.0
    chi: float = 0.0
    phitilde: float = 0.0
    vartheta: np.ndarray | None = None

    def __post_init__(self):
        if not self.z > 0:
            raise DomainError("control point needs z > 0")
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        if self.vartheta is None:
            object.__setattr__(self, "vartheta", np.zeros_like(self.a))
        else:
            object.__setattr__(self, "vartheta", np.asarray(self.vartheta, dtype=float))
        if not 0.0 <= self.a[self.i] <= 1.0:
            raise DomainError("retention of the controlling insurer must lie in [0, 1]")


@dataclass(frozen=True)
class Partials:
    value: float
    t: float
    y: float
    z: float
    yy: float
    zz: float
    yz: float


def partials_of(vf: ValueFunction, t: float, y: float, z: float) -> Partials:
    return Partials(
        vf.value(t, y, z),
        vf.value_t(t, y, z),
        vf.value_y(t, y, z),
        vf.value_z(t, y, z),
        vf.value_yy(t, y, z),
        vf.value_zz(t, y, z),
        vf.value_yz(t, y, z),
    )


def _arrays(spec: GameSpec):
    mk = spec.market
    lam = np.array([ins.total_intensity(mk) for ins in spec.insurers])
    mu1 = np.array([ins.mu1 for ins in spec.insurers])
    mu2 = np.array([ins.mu2 for ins in spec.insurers])
    eta = np.array([ins.eta for ins in spec.insurers])
    scale = np.array([ins.idiosyncratic_scale(mk) for ins in spec.insurers])
    return lam, mu1, mu2, eta, scale


def generator_terms(point: ControlPoint, d: Partials, spec: GameSpec) -> dict[str, float]:
    """Every additive term of the generator applied to a test function with partials d."""
    mk = spec.market
    n = spec.n
    i = point.i
    theta = spec.insurers[i].theta
    w_own, w_peer = 1.0 - theta / n, theta / n
    z, y = point.z, point.y
    root = math.sqrt(z)
    sigma = vol(z, mk)
    lam, mu1, mu2, eta, scale = _arrays(spec)
    pi, a = point.pi, point.a
    peer = np.arange(n) != i
    exposure = w_own * pi[i] - w_peer * np.sum(pi[peer])

    def drift(k):
        return (
            eta[k] * lam[k] * mu1[k]
            - mk.eta_hat * (1.0 - a[k]) ** 2 * lam[k] * mu2[k]
            + pi[k] * (mk.m * root + point.phi) * sigma
        )

    def shift(k):
        return a[k] * (math.sqrt(mk.lambda_hat) * mu1[k] * point.phitilde + scale[k] * point.vartheta[k])

    peer_idx = np.flatnonzero(peer)
    peer_mu = float(np.sum(a[peer] * mu1[peer]))
    return {
        "f_t": d.t,
        "z_drift": (mk.kappa * (mk.zbar - z) + mk.nu * root * (mk.rho * point.phi + math.sqrt(1 - mk.rho**2) * point.chi)) * d.z,
        "z_diffusion": 0.5 * mk.nu**2 * z * d.zz,
        "cross_yz": mk.nu * root * mk.rho * sigma * exposure * d.yz,
        "interest": mk.r * y * d.y,
        "own_drift": w_own * drift(i) * d.y,
        "peer_drift": -w_peer * sum(drift(k) for k in peer_idx) * d.y,
        "own_measure_drift": w_own * shift(i) * d.y,
        "peer_measure_drift": -w_peer * sum(shift(k) for k in peer_idx) * d.y,
        "own_claims_var": 0.5 * w_own**2 * a[i] ** 2 * lam[i] * mu2[i] * d.yy,
        "peer_idio_var": theta**2 / (2 * n**2) * float(np.sum(a[peer] ** 2 * scale[peer] ** 2)) * d.yy,
        "peer_common_var": mk.lambda_hat * theta**2 / (2 * n**2) * peer_mu**2 * d.yy,
        "common_cov": -mk.lambda_hat * w_peer * w_own * a[i] * mu1[i] * peer_mu * d.yy,
        "equity_var": 0.5 * sigma**2 * exposure**2 * d.yy,
    }


def generator(point: ControlPoint, vf, spec: GameSpec) -> float:
    d = vf if isinstance(vf, Partials) else partials_of(vf, point.t, point.y, point.z)
    return float(sum(generator_terms(point, d, spec).values()))


def _penalty(control, weight: float) -> float:
    if weight == 0.0:
        return 0.0 if np.all(np.asarray(control) == 0.0) else math.inf
    return float(np.sum(np.square(control))) / (2.0 * weight)


def penalty_weights(spec: GameSpec, i: int, value: float, mode: str = "ratio") -> tuple[float, ...]:
    """Penalty scalings Psi_j. ``ratio`` uses beta_j / v; ``product`` uses beta_j v."""
    beta = spec.insurers[i].beta
    if mode == "ratio":
        weights = tuple(b / value for b in beta)
    elif mode == "product":
        weights = tuple(b * value for b in beta)
    else:
        raise DomainError(f"unknown penalty mode {mode!r}")
    for b, w in zip(beta, weights):
        if b != 0.0 and not w > 0.0:
            raise DegeneracyError(f"penalty scaling {w} is not positive")
    return weights


def hamiltonian_terms(point: ControlPoint, vf, spec: GameSpec, penalty_mode: str = "ratio") -> dict[str, float]:
    d = vf if isinstance(vf, Partials) else partials_of(vf, point.t, point.y, point.z)
    terms = generator_terms(point, d, spec)
    w = penalty_weights(spec, point.i, d.value, penalty_mode)
    terms["penalty_equity"] = _penalty(point.phi, w[0])
    terms["penalty_variance"] = _penalty(point.chi, w[1])
    terms["penalty_common"] = _penalty(point.phitilde, w[2])
    terms["penalty_idiosyncratic"] = _penalty(point.vartheta, w[3])
    return terms


def hamiltonian(point: ControlPoint, vf, spec: GameSpec, penalty_mode: str = "ratio") -> float:
    return float(sum(hamiltonian_terms(point, vf, spec, penalty_mode).values()))


def candidate_point(profile: EquilibriumProfile, i: int, t: float, y: float, z: float) -> ControlPoint:
    """Equilibrium strategies of all insurers with insurer i's worst-case measure."""
    a = profile.retention(t)
    wc = profile.controls(i, t, z)
    return ControlPoint(t, y, z, i, profile.amounts(t, z), a, wc.phi, wc.chi, wc.phitilde, wc.vartheta)


def relative_residual(point: ControlPoint, vf, spec: GameSpec) -> tuple[float, float]:
    """(|H| / max(1, largest term), largest term)."""
    terms = hamiltonian_terms(point, vf, spec)
    largest = max(abs(v) for v in terms.values())
    return abs(sum(terms.values())) / max(1.0, largest), largest


# --------------------------------------------------------------------------- saddle checks


def _variables(point: ControlPoint, spec: GameSpec) -> list[str]:
    beta = spec.insurers[point.i].beta
    names = ["pi", "a"]
    if beta[0] != 0:
        names.append("phi")
    if beta[1] != 0:
        names.append("chi")
    if beta[2] != 0:
        names.append("phitilde")
    if beta[3] != 0:
        names += [f"vartheta_{k}" for k in range(spec.n)]
    return names


def _get(point: ControlPoint, name: str) -> float:
    if name == "pi":
        return float(point.pi[point.i])
    if name == "a":
        return float(point.a[point.i])
    if name.startswith("vartheta_"):
        return float(point.vartheta[int(name.split("_")[1])])
    return float(getattr(point, name))


def _set(point: ControlPoint, name: str, value: float) -> ControlPoint:
    if name in ("pi", "a"):
        arr = getattr(point, name).copy()
        arr[point.i] = value
        return replace(point, **{name: arr})
    if name.startswith("vartheta_"):
        arr = point.vartheta.copy()
        arr[int(name.split("_")[1])] = value
        return replace(point, vartheta=arr)
    return replace(point, **{name: value})


class _Objective:
    """H as a function of insurer i's controls and measure, partials frozen at the state."""

    def __init__(self, point: ControlPoint, vf, spec: GameSpec):
        self.point = point
        self.spec = spec
        self.d = vf if isinstance(vf, Partials) else partials_of(vf, point.t, point.y, point.z)
        self.names = _variables(point, spec)
        self.x0 = np.array([_get(point, nm) for nm in self.names])
        terms = hamiltonian_terms(point, self.d, spec)
        self.scale = max(1.0, max(abs(v) for v in terms.values()))

    def __call__(self, x) -> float:
        p = self.point
        for nm, val in zip(self.names, x):
            p = _set(p, nm, float(val))
        return hamiltonian(p, self.d, self.spec)

    def step(self, j: int, rel: float) -> float:
        return rel * max(1.0, abs(self.x0[j]))

    def quadratic_model(self, rel: float = 1e-2) -> tuple[np.ndarray, np.ndarray, float]:
        """Gradient and Hessian at x0 from central differences (exact for a quadratic)."""
        k = len(self.x0)
        e = np.eye(k)
        hs = np.array([self.step(j, rel) for j in range(k)])
        f0 = self(self.x0)
        grad = np.empty(k)
        hess = np.empty((k, k))
        for j in range(k):
            fp, fm = self(self.x0 + hs[j] * e[j]), self(self.x0 - hs[j] * e[j])
            grad[j] = (fp - fm) / (2 * hs[j])
            hess[j, j] = (fp - 2 * f0 + fm) / hs[j] ** 2
        for j in range(k):
            for l in range(j + 1, k):
                dj, dl = hs[j] * e[j], hs[l] * e[l]
                val = (self(self.x0 + dj + dl) - self(self.x0 + dj - dl) - self(self.x0 - dj + dl) + self(self.x0 - dj - dl)) / (
                    4 * hs[j] * hs[l]
                )
                hess[j, l] = hess[l, j] = val
        return grad, hess, f0


def _box_max(grad, hess, x0, lo, hi):
    """Maximise a concave quadratic over the first two coordinates, the second boxed in [lo, hi]."""
    dx = np.linalg.solve(hess, -grad)
    x = x0 + dx
    if lo <= x[1] <= hi:
        return x
    x[1] = min(max(x[1], lo), hi)
    da = x[1] - x0[1]
    x[0] = x0[0] - (grad[0] + hess[0, 1] * da) / hess[0, 0]
    return x


def _reduced(grad, hess, keep, drop):
    """Eliminate ``drop`` coordinates at their stationary point, returning the quadratic in ``keep``."""
    hkk = hess[np.ix_(keep, keep)]
    hkd = hess[np.ix_(keep, drop)]
    hdd = hess[np.ix_(drop, drop)]
    sol_g = np.linalg.solve(hdd, grad[drop])
    sol_h = np.linalg.solve(hdd, hkd.T)
    return grad[keep] - hkd @ sol_g, hkk - hkd @ sol_h, sol_g, sol_h


def _quad_value(f0, grad, hess, dx):
    return f0 + grad @ dx + 0.5 * dx @ hess @ dx


@dataclass
class SaddleReport:
    gradients: dict[str, float] = field(default_factory=dict)
    boundary_slope: float | None = None
    curvature: dict[str, tuple[float, float]] = field(default_factory=dict)
    concave_controls: bool = True
    convex_measure: bool = True
    quadratic: bool = True
    argmax: tuple[float, float] = (math.nan, math.nan)
    argmax_error: float = math.nan
    maxmin: float = math.nan
    minmax: float = math.nan
    swap_gap: float = math.nan
    messages: list[str] = field(default_factory=list)
    grad_tol: float = 1e-6
    swap_tol: float = 1e-8

    @property
    def max_gradient(self) -> float:
        return max(self.gradients.values(), default=0.0)

    @property
    def stationary(self) -> bool:
        ok = self.max_gradient < self.grad_tol
        if self.boundary_slope is not None:
            ok = ok and self.boundary_slope >= -self.grad_tol
        return ok

    @property
    def order_swap(self) -> bool:
        return self.argmax_error < self.swap_tol and self.swap_gap < self.swap_tol

    @property
    def passed(self) -> bool:
        return self.stationary and self.concave_controls and self.convex_measure and self.order_swap

    def curvature_flags(self) -> str:
        flags = []
        if not self.concave_controls:
            flags.append("not_concave")
        if not self.convex_measure:
            flags.append("not_convex")
        if not self.quadratic:
            flags.append("not_quadratic")
        return "ok" if not flags else "|".join(flags)


def saddle_check(point: ControlPoint, vf, spec: GameSpec, epsilons=(1e-3, 1e-2)) -> SaddleReport:
    """Stationarity, curvature and max-min/min-max agreement at a candidate point."""
    obj = _Objective(point, vf, spec)
    rep = SaddleReport()
    x0, k = obj.x0, len(obj.x0)
    e = np.eye(k)
    a_at_cap = x0[1] >= 1.0
    f0 = obj(x0)

    for j, nm in enumerate(obj.names):
        h = obj.step(j, 1e-4)
        if nm == "a" and a_at_cap:
            rep.boundary_slope = (f0 - obj(x0 - h * e[j])) / h * max(1.0, abs(x0[j])) / obj.scale
            continue
        grad = (obj(x0 + h * e[j]) - obj(x0 - h * e[j])) / (2 * h)
        rep.gradients[nm] = abs(grad) * max(1.0, abs(x0[j])) / obj.scale

    for j, nm in enumerate(obj.names):
        second = []
        for rel in epsilons:
            h = obj.step(j, rel)
            if nm == "a" and a_at_cap:
                d2 = (f0 - 2 * obj(x0 - h * e[j]) + obj(x0 - 2 * h * e[j])) / h**2
            else:
                d2 = (obj(x0 + h * e[j]) - 2 * f0 + obj(x0 - h * e[j])) / h**2
            second.append(d2)
        rep.curvature[nm] = tuple(second)
        ref = max(abs(s) for s in second)
        if ref > 0 and abs(second[0] - second[1]) > 1e-4 * ref:
            rep.quadratic = False
            rep.messages.append(f"second difference of {nm} depends on the step: {second}")
        if nm in ("pi", "a"):
            if max(second) > 0:
                rep.concave_controls = False
                rep.messages.append(f"H not concave in {nm}: {second}")
        elif min(second) < 0:
            rep.convex_measure = False
            rep.messages.append(f"H not convex in {nm}: {second}")

    grad, hess, q0 = obj.quadratic_model()
    if np.max(np.linalg.eigvalsh(hess[:2, :2])) > 0:
        rep.concave_controls = False
        rep.messages.append("Hessian in (pi, a) is not negative semidefinite")

    # order swap (c): best response with the measure frozen at the candidate
    xs = _box_max(grad[:2], hess[:2, :2], x0[:2], 0.0, 1.0)
    rep.argmax = (float(xs[0]), float(xs[1]))
    rep.argmax_error = float(np.max(np.abs(xs - x0[:2]) / np.maximum(1.0, np.abs(x0[:2]))))

    # sup-inf versus inf-sup on the exact quadratic
    ctrl, meas = [0, 1], list(range(2, k))
    if meas:
        g_r, h_r, sol_g, sol_h = _reduced(grad, hess, ctrl, meas)
        xr = _box_max(g_r, h_r, x0[:2], 0.0, 1.0)
        dx = xr - x0[:2]
        dy = -(sol_g + sol_h @ dx)
        rep.maxmin = float(_quad_value(q0, grad, hess, np.concatenate([dx, dy])))
        free = ctrl if not (a_at_cap and _box_max(grad[:2], hess[:2, :2], x0[:2], 0.0, 1.0)[1] >= 1.0) else [0]
        g_r2, h_r2, sol_g2, sol_h2 = _reduced(grad, hess, meas, free)
        dy2 = np.linalg.solve(h_r2, -g_r2)
        full = np.zeros(k)
        full[meas] = dy2
        full[free] = -(sol_g2 + sol_h2 @ dy2)
        rep.minmax = float(_quad_value(q0, grad, hess, full))
    else:
        rep.maxmin = rep.minmax = float(_quad_value(q0, grad, hess, np.concatenate([xs - x0[:2]])))
    rep.swap_gap = abs(rep.maxmin - rep.minmax) / obj.scale
    if rep.argmax_error >= rep.swap_tol:
        rep.messages.append(f"argmax over (pi, a) {rep.argmax} differs from the candidate {tuple(x0[:2])}")
    if rep.swap_gap >= rep.swap_tol:
        rep.messages.append(f"max-min {rep.maxmin} differs from min-max {rep.minmax}")
    return rep


def lemma_saddle_1d(a: float, b: float, c: float, d: float) -> dict[str, float]:
    """Saddle quantities for F(x, y) = x^2 + a x y + b x + c y + d y^2 / 2 with d < 0, 2d - a^2 < 0.

    y = z(x) maximises F in y; x0 minimises F(x, z(x)) on the line; x_hat is its
    minimiser on [0, 1]; x_bar minimises F(., z(x_hat)) on [0, 1].
    """
    if not d < 0:
        raise DomainError("d must be negative")
    if not 2 * d - a**2 < 0:
        raise DomainError("2d - a^2 must be negative")
    x0 = -(b * d - a * c) / (2 * d - a**2)
    x_hat = min(max(x0, 0.0), 1.0)
    z_hat = -(a * x_hat + c) / d
    x_tilde = -(a * z_hat + b) / 2.0
    x_bar = min(max(x_tilde, 0.0), 1.0)
    return {"x0": x0, "x_hat": x_hat, "z_hat": z_hat, "x_bar": x_bar, "z_slope": -a / d, "z_intercept": -c / d}


# --------------------------------------------------------------------------- residual grid


def residual_grid(profile: EquilibriumProfile, i: int, ts, ys, zs, saddle: bool = True) -> list[dict]:
    """HJBI residual (and optionally the saddle checks) on a tensor grid of states."""
    vf = profile.value_function(i)
    rows = []
    for t in ts:
        for y in ys:
            for z in zs:
                point = candidate_point(profile, i, float(t), float(y), float(z))
                d = partials_of(vf, point.t, point.y, point.z)
                rel, largest = relative_residual(point, d, profile.spec)
                row = {"t": float(t), "y": float(y), "z": float(z), "residual": rel, "largest_term": largest}
                if saddle:
                    rep = saddle_check(point, d, profile.spec)
                    row["max_gradient"] = rep.max_gradient
                    row["curvature_flags"] = rep.curvature_flags()
                    row["saddle_passed"] = rep.passed
                rows.append(row)
    return rows


def default_state_grid(spec: GameSpec, size: int = 5, dt: float = 1e-3):
    mk = spec.market
    T = mk.horizon
    ts = np.array([0.0, T / 4, T / 2, 3 * T / 4, T - dt])
    ys = np.linspace(-5.0, 5.0, size)
    zs = np.geomspace(mk.z0 / 4, 4 * mk.z0, size)
    return ts, ys, zs
