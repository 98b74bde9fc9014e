"""Monte Carlo engine for the variance process and the insurers' surplus processes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import EquilibriumProfile
from .errors import ConfigError
from .params import GameSpec, InsurerType, MarketParams

# stream ids of the driving factors; idiosyncratic claim noises follow at _IDIO + k
_W, _B, _COMMON, _IDIO = 0, 1, 2, 3


@dataclass(frozen=True)
class PathConfig:
    dt: float = 1e-3
    n_paths: int = 100_000
    seed: int = 0
    worst_case: int | None = None
    mode: str = "diffusion"
    claim_model: str = "exponential"
    batch_size: int = 25_000
    record_every: int | None = None
    keep_increments: bool = False
    stop_time: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be at least 1")
        if self.mode not in ("diffusion", "cpoisson"):
            raise ConfigError(f"unknown simulation mode {self.mode!r}")
        if self.claim_model not in ("exponential", "gamma"):
            raise ConfigError(f"unknown claim model {self.claim_model!r}")
        if self.mode == "cpoisson" and self.worst_case is not None:
            raise ConfigError("worst-case measures are only defined for the diffusion model")


def parse_measure(text: str) -> int | None:
    """'reference' -> None, 'worst-case:i' (1-based) -> i - 1."""
    if text == "reference":
        return None
    if text.startswith("worst-case:"):
        try:
            idx = int(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad measure {text!r}") from None
        if idx < 1:
            raise ConfigError("insurer indices are 1-based")
        return idx - 1
    raise ConfigError(f"bad measure {text!r}; use reference or worst-case:i")


# --------------------------------------------------------------------------- strategies


@dataclass(frozen=True)
class StrategyPlan:
    """Strategies and measure distortion sampled at the simulation times (left points).

    Investment is stored as the coefficient Pi with pi = Pi z / (a z + b), so the equity
    exposure pi * vol equals Pi sqrt(z) and never divides by z.
    """

    times: np.ndarray
    Pi: np.ndarray
    a: np.ndarray
    phi_over_sqrtz: np.ndarray
    chi_over_sqrtz: np.ndarray
    phitilde: np.ndarray
    vartheta: np.ndarray

    @classmethod
    def from_profile(cls, profile: EquilibriumProfile, times, worst_case: int | None = None) -> "StrategyPlan":
        times = np.asarray(times, dtype=float)
        n = profile.n
        Pi = profile.investment(times)
        a = profile.retention(times).reshape(n, -1)
        if worst_case is None:
            zeros = np.zeros(times.size)
            return cls(times, Pi, a, zeros, zeros, zeros, np.zeros((n, times.size)))
        phi, chi, phitilde, vartheta = profile.measure_tables(times)
        i = worst_case
        return cls(times, Pi, a, phi[i], chi[i], phitilde[i], vartheta[i])

    @classmethod
    def constant(cls, n: int, times, Pi=0.0, a=0.0) -> "StrategyPlan":
        times = np.asarray(times, dtype=float)
        shape = (n, times.size)
        zeros = np.zeros(times.size)
        return cls(
            times,
            np.broadcast_to(np.asarray(Pi, float).reshape(-1, 1), shape).copy(),
            np.broadcast_to(np.asarray(a, float).reshape(-1, 1), shape).copy(),
            zeros,
            zeros,
            zeros,
            np.zeros(shape),
        )


# --------------------------------------------------------------------------- claims


@dataclass(frozen=True)
class ClaimModel:
    """Gamma claim sizes matched to (mu1, mu2); shape 1 is the exponential family."""

    shape: float
    scale: float

    @classmethod
    def for_insurer(cls, insurer: InsurerType, family: str = "exponential") -> "ClaimModel":
        var = insurer.mu2 - insurer.mu1**2
        if var <= 0:
            raise ConfigError("claim sizes need mu2 > mu1^2")
        if family == "exponential":
            if not math.isclose(insurer.mu2, 2 * insurer.mu1**2, rel_tol=1e-9):
                raise ConfigError(
                    f"exponential claims need mu2 = 2 mu1^2 (got mu1={insurer.mu1}, mu2={insurer.mu2})"
                )
            return cls(1.0, insurer.mu1)
        if family == "gamma":
            return cls(insurer.mu1**2 / var, var / insurer.mu1)
        raise ConfigError(f"unknown claim family {family!r}")

    @property
    def third_moment(self) -> float:
        k, s = self.shape, self.scale
        return k * (k + 1) * (k + 2) * s**3

    def sum_of(self, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = np.zeros(counts.shape)
        hit = counts > 0
        if np.any(hit):
            out[hit] = rng.gamma(counts[hit] * self.shape, self.scale)
        return out


def diffusion_approximation_bound(insurer: InsurerType, market: MarketParams, t: float, third_moment: float) -> float:
    """Uniform-distance bound 0.266 l + 0.5 l^2 between the normalised claim sum and a normal."""
    lam = insurer.total_intensity(market)
    ell = third_moment / (math.sqrt(lam * t) * insurer.mu2**1.5)
    return 0.266 * ell + 0.5 * ell**2


# --------------------------------------------------------------------------- engine


@dataclass
class PathBundle:
    times: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    claims: np.ndarray
    increments: dict[str, np.ndarray] | None = None
    truncated_fraction: float = 0.0
    objective_samples: np.ndarray | None = None
    y_consistency: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def terminal_Z(self) -> np.ndarray:
        return self.Z[:, -1]

    @property
    def terminal_X(self) -> np.ndarray:
        return self.X[:, :, -1]

    @property
    def terminal_Y(self) -> np.ndarray:
        return self.Y[:, :, -1]


def _streams(seed: int, batch: int, count: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(batch, f)))) for f in range(count)]


class _ObjectiveTracker:
    """Accumulates insurer i's terminal utility plus trapezoid-integrated entropy penalty."""

    def __init__(self, profile: EquilibriumProfile, i: int, plan: StrategyPlan):
        self.i = i
        ins = profile.spec.insurers[i]
        self.delta = ins.delta
        self.beta = ins.beta
        coeffs = profile.coeffs[i]
        self.f = np.asarray(coeffs.f(plan.times))
        self.g = np.asarray(coeffs.g(plan.times))
        self.h = np.asarray(coeffs.h(plan.times))
        self.plan = plan

    def density(self, k: int, y: np.ndarray, zp: np.ndarray) -> np.ndarray:
        p = self.plan
        v = -np.exp(self.f[k] - self.delta * y * self.g[k] + self.h[k] * zp) / self.delta
        total = np.zeros_like(y)
        b1, b2, b3, b4 = self.beta
        if b1 != 0:
            total += p.phi_over_sqrtz[k] ** 2 * zp / (2 * b1)
        if b2 != 0:
            total += p.chi_over_sqrtz[k] ** 2 * zp / (2 * b2)
        if b3 != 0:
            total += p.phitilde[k] ** 2 / (2 * b3)
        if b4 != 0:
            total += float(np.sum(p.vartheta[:, k] ** 2)) / (2 * b4)
        return total * v


def simulate(
    spec: GameSpec,
    strategies: EquilibriumProfile | StrategyPlan,
    config: PathConfig = PathConfig(),
    objective_for: int | None = None,
    profile_for_objective: EquilibriumProfile | None = None,
) -> PathBundle:
    """Full-truncation Euler simulation of Z and all surpluses (and relative surpluses)."""
    mk = spec.market
    n = spec.n
    stop = mk.horizon if config.stop_time is None else config.stop_time
    steps = int(round(stop / config.dt))
    if steps < 1 or abs(steps * config.dt - stop) > 1e-9 * max(1.0, stop):
        raise ConfigError("dt must divide the simulated horizon")
    times = np.linspace(0.0, steps * config.dt, steps + 1)
    if isinstance(strategies, EquilibriumProfile):
        plan = StrategyPlan.from_profile(strategies, times, config.worst_case)
        profile = strategies
    else:
        plan = strategies
        profile = profile_for_objective
        if plan.times.size != times.size:
            raise ConfigError("strategy plan does not match the simulation grid")
    tracker = None
    if objective_for is not None:
        if profile is None:
            raise ConfigError("the objective needs an equilibrium profile for the value function")
        tracker = _ObjectiveTracker(profile, objective_for, plan)

    lam = np.array([ins.total_intensity(mk) for ins in spec.insurers])[:, None]
    mu1 = np.array([ins.mu1 for ins in spec.insurers])[:, None]
    mu2 = np.array([ins.mu2 for ins in spec.insurers])[:, None]
    eta = np.array([ins.eta for ins in spec.insurers])[:, None]
    theta = np.array([ins.theta for ins in spec.insurers])[:, None]
    scale = np.array([ins.idiosyncratic_scale(mk) for ins in spec.insurers])[:, None]
    x0 = np.array([ins.x0 for ins in spec.insurers])[:, None]
    y0 = x0 - theta * x0.mean()
    sq_lh = math.sqrt(mk.lambda_hat)
    rho_c = math.sqrt(1.0 - mk.rho**2)
    sdt = math.sqrt(config.dt)
    dt = config.dt
    cpoisson = config.mode == "cpoisson"
    claims = [ClaimModel.for_insurer(ins, config.claim_model) for ins in spec.insurers] if cpoisson else None
    n_streams = _IDIO + n + (1 + 3 * n if cpoisson else 0)

    rec = config.record_every
    rec_idx = np.arange(0, steps + 1, rec) if rec else np.array([0, steps])
    if rec_idx[-1] != steps:
        rec_idx = np.append(rec_idx, steps)
    n_rec = rec_idx.size
    P = config.n_paths
    Zr = np.empty((P, n_rec))
    Xr = np.empty((n, P, n_rec))
    Yr = np.empty((n, P, n_rec))
    Cr = np.empty((n, P, n_rec))
    incs = None
    if config.keep_increments:
        incs = {"W": np.empty((P, steps)), "B": np.empty((P, steps)), "W_common": np.empty((P, steps)), "W_idio": np.empty((n, P, steps))}
    obj = np.empty(P) if tracker is not None else None
    truncated = 0
    y_gap = 0.0

    for batch, start in enumerate(range(0, P, config.batch_size)):
        B = min(config.batch_size, P - start)
        sl = slice(start, start + B)
        rngs = _streams(config.seed, batch, n_streams)
        Z = np.full(B, mk.z0)
        X = np.repeat(x0, B, axis=1)
        Y = np.repeat(y0, B, axis=1)
        C = np.zeros((n, B))
        pen = np.zeros(B) if tracker is not None else None
        prev = tracker.density(0, Y[tracker.i], np.maximum(Z, 0.0)) if tracker is not None else None
        r = 0
        for k in range(steps + 1):
            if r < n_rec and rec_idx[r] == k:
                Zr[sl, r] = np.maximum(Z, 0.0)
                Xr[:, sl, r] = X
                Yr[:, sl, r] = Y
                Cr[:, sl, r] = C
                r += 1
            if k == steps:
                break
            zp = np.maximum(Z, 0.0)
            truncated += int(np.count_nonzero(Z < 0))
            rz = np.sqrt(zp)
            Pi = plan.Pi[:, k : k + 1]
            a = plan.a[:, k : k + 1]
            dW = rngs[_W].standard_normal(B) * sdt
            dB = rngs[_B].standard_normal(B) * sdt
            phi = plan.phi_over_sqrtz[k] * rz
            chi = plan.chi_over_sqrtz[k] * rz
            drift = mk.r * X + Pi * mk.m * zp + Pi * rz * phi
            if cpoisson:
                n_common = rngs[_IDIO + n].poisson(mk.lambda_hat * dt, B)
                dS = np.empty((n, B))
                for j in range(n):
                    own = rngs[_IDIO + n + 1 + j].poisson(spec.insurers[j].lam * dt, B)
                    dS[j] = claims[j].sum_of(n_common, rngs[_IDIO + 2 * n + 1 + j]) + claims[j].sum_of(
                        own, rngs[_IDIO + 3 * n + 1 + j]
                    )
                premium = (1 + eta) * lam * mu1 - (1 - a) * lam * mu1 - mk.eta_hat * (1 - a) ** 2 * lam * mu2
                dX = (drift + premium) * dt - a * dS + Pi * rz * dW
                C += a * dS
            else:
                dWc = rngs[_COMMON].standard_normal(B) * sdt
                dWh = np.vstack([rngs[_IDIO + j].standard_normal(B) for j in range(n)]) * sdt
                noise = sq_lh * mu1 * dWc + scale * dWh
                shift = a * (sq_lh * mu1 * plan.phitilde[k] + scale * plan.vartheta[:, k : k + 1])
                premium = eta * lam * mu1 - mk.eta_hat * (1 - a) ** 2 * lam * mu2
                dX = (drift + premium + shift) * dt + a * noise + Pi * rz * dW
                C += a * (lam * mu1 * dt - noise)
                if incs is not None:
                    incs["W_common"][sl, k] = dWc
                    incs["W_idio"][:, sl, k] = dWh
            if incs is not None:
                incs["W"][sl, k] = dW
                incs["B"][sl, k] = dB
            Z = Z + (mk.kappa * (mk.zbar - zp) + mk.nu * rz * (mk.rho * phi + rho_c * chi)) * dt + mk.nu * rz * (
                mk.rho * dW + rho_c * dB
            )
            X = X + dX
            Y = Y + dX - theta * dX.mean(axis=0, keepdims=True)
            if tracker is not None:
                cur = tracker.density(k + 1, Y[tracker.i], np.maximum(Z, 0.0))
                pen += 0.5 * (prev + cur) * dt
                prev = cur
        direct = X - theta * X.mean(axis=0, keepdims=True)
        y_gap = max(y_gap, float(np.max(np.abs(Y - direct)) / max(1.0, float(np.max(np.abs(direct))))))
        if tracker is not None:
            yT = Y[tracker.i]
            obj[sl] = -np.exp(-tracker.delta * yT) / tracker.delta + pen
    if y_gap > 1e-8:
        raise AssertionError(f"relative surplus drifted from X_i - theta_i mean(X) by {y_gap:.3e}")
    return PathBundle(
        times[rec_idx],
        Zr,
        Xr,
        Yr,
        Cr,
        incs,
        truncated / (P * steps),
        obj,
        y_gap,
        {"dt": dt, "steps": steps, "mode": config.mode, "worst_case": config.worst_case},
    )


def simulate_compound_poisson(spec: GameSpec, strategies, config: PathConfig) -> PathBundle:
    if config.mode != "cpoisson":
        config = PathConfig(**{**config.__dict__, "mode": "cpoisson"})
    return simulate(spec, strategies, config)


@dataclass(frozen=True)
class MCResult:
    estimate: float
    std_error: float
    closed_form: float
    n_paths: int
    bundle: PathBundle | None = field(default=None, repr=False, compare=False)

    @property
    def z_score(self) -> float:
        return (self.estimate - self.closed_form) / self.std_error if self.std_error > 0 else math.nan


def mc_objective(
    spec: GameSpec,
    profile: EquilibriumProfile,
    i: int,
    config: PathConfig = PathConfig(),
    plan: StrategyPlan | None = None,
) -> MCResult:
    """Penalised objective of insurer i under its worst-case measure, versus v(0, y0, z0)."""
    if config.worst_case != i:
        config = PathConfig(**{**config.__dict__, "worst_case": i})
    strategies = plan if plan is not None else profile
    bundle = simulate(spec, strategies, config, objective_for=i, profile_for_objective=profile)
    samples = bundle.objective_samples
    y0 = spec.initial_relative_wealth(i)
    closed = profile.value_function(i).value(0.0, y0, spec.market.z0)
    se = float(samples.std(ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else 0.0
    return MCResult(float(samples.mean()), se, float(closed), samples.size, bundle)
