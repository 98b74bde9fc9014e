"""Market and insurer parameter types, derived quantities, validation and config loading."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DomainError

MARKET_KEYS = {
    "r": "r",
    "kappa": "kappa",
    "zbar": "zbar",
    "nu": "nu",
    "rho": "rho",
    "m": "m",
    "a": "a",
    "b": "b",
    "z0": "z0",
    "T": "horizon",
    "lambda_hat": "lambda_hat",
    "eta_hat": "eta_hat",
}

INSURER_KEYS = {
    "x0": "x0",
    "lambda": "lam",
    "mu1": "mu1",
    "mu2": "mu2",
    "eta": "eta",
    "theta": "theta",
    "delta": "delta",
    "psi1": "psi1",
    "psi2": "psi2",
    "psi3": "psi3",
    "psi4": "psi4",
}


@dataclass(frozen=True)
class MarketParams:
    """Financial market, variance process, reinsurer and common-shock constants."""

    r: float
    kappa: float
    zbar: float
    nu: float
    rho: float
    m: float
    a: float
    b: float
    z0: float
    horizon: float
    lambda_hat: float
    eta_hat: float

    def feller_sides(self) -> tuple[float, float]:
        return 2.0 * self.kappa * self.zbar, self.nu**2

    def discount(self, t):
        """g(t) = exp(r (T - t)), the accumulation factor from t to the horizon."""
        return np.exp(self.r * (self.horizon - np.asarray(t, dtype=float)))


@dataclass(frozen=True)
class InsurerType:
    """One insurer's claims, preferences, competition weight and ambiguity aversion."""

    x0: float
    lam: float
    mu1: float
    mu2: float
    eta: float
    theta: float
    delta: float
    psi1: float = 0.0
    psi2: float = 0.0
    psi3: float = 0.0
    psi4: float = 0.0

    @property
    def psi(self) -> tuple[float, float, float, float]:
        return (self.psi1, self.psi2, self.psi3, self.psi4)

    @property
    def beta(self) -> tuple[float, float, float, float]:
        """beta_j = -psi_j / delta, the scaled ambiguity coefficients (all <= 0)."""
        return tuple(-p / self.delta if p != 0 else 0.0 for p in self.psi)

    def total_intensity(self, market: MarketParams) -> float:
        return self.lam + market.lambda_hat

    def premium_rate(self, market: MarketParams) -> float:
        """Expected-value premium (1 + eta)(lambda + lambda_hat) mu1."""
        return (1.0 + self.eta) * self.total_intensity(market) * self.mu1

    def idiosyncratic_scale(self, market: MarketParams) -> float:
        """Loading of the insurer's own claim noise after the common shock is removed."""
        var = self.total_intensity(market) * self.mu2 - market.lambda_hat * self.mu1**2
        return math.sqrt(max(var, 0.0))


@dataclass(frozen=True)
class GameSpec:
    market: MarketParams
    insurers: tuple[InsurerType, ...]

    def __post_init__(self):
        object.__setattr__(self, "insurers", tuple(self.insurers))
        if len(self.insurers) < 1:
            raise ConfigError("a game needs at least one insurer")

    @property
    def n(self) -> int:
        return len(self.insurers)

    @property
    def theta_sum(self) -> float:
        return float(sum(ins.theta for ins in self.insurers))

    def initial_relative_wealth(self, i: int) -> float:
        """y0 = x0_i - theta_i * mean(x0)."""
        xbar = sum(ins.x0 for ins in self.insurers) / self.n
        return self.insurers[i].x0 - self.insurers[i].theta * xbar


def vol(z, market: MarketParams):
    """4/2 instantaneous volatility a sqrt(z) + b / sqrt(z)."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DomainError("vol requires z > 0")
    root = np.sqrt(z)
    out = market.a * root + market.b / root
    return float(out) if out.ndim == 0 else out


def claim_correlation(ins_i: InsurerType, ins_k: InsurerType, market: MarketParams) -> float:
    """Correlation of the diffusion claim noises of two insurers, driven by the common shock."""
    num = market.lambda_hat * ins_i.mu1 * ins_k.mu1
    if num == 0.0:
        return 0.0
    den = math.sqrt(
        ins_i.total_intensity(market) * ins_k.total_intensity(market) * ins_i.mu2 * ins_k.mu2
    )
    return num / den


# --------------------------------------------------------------------------- validation


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    lhs: float
    rhs: float
    detail: str = ""
    advisory: bool = False

    def line(self) -> str:
        tag = "PASS" if self.passed else ("WARN" if self.advisory else "FAIL")
        extra = f"  ({self.detail})" if self.detail else ""
        return f"[{tag}] {self.name}: lhs={self.lhs:.6g} rhs={self.rhs:.6g}{extra}"


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return all(c.passed or c.advisory for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed and not c.advisory]

    def get(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def render(self) -> str:
        return "\n".join(c.line() for c in self.checks)


def _gt(name, lhs, rhs, detail="", advisory=False):
    return Check(name, bool(lhs > rhs), float(lhs), float(rhs), detail, advisory)


def _lt(name, lhs, rhs, detail="", advisory=False):
    return Check(name, bool(lhs < rhs), float(lhs), float(rhs), detail, advisory)


def _ge(name, lhs, rhs, detail="", advisory=False):
    return Check(name, bool(lhs >= rhs), float(lhs), float(rhs), detail, advisory)


def validate(spec: GameSpec, variant: str = "corrected") -> ValidationReport:
    """Evaluate every parameter precondition; never raises for bad values."""
    from .value_function import h_of_t, riccati_constants

    mk = spec.market
    out: list[Check] = []
    out.append(_ge("market.r>=0", mk.r, 0.0))
    out.append(_gt("market.kappa>0", mk.kappa, 0.0))
    out.append(_gt("market.zbar>0", mk.zbar, 0.0))
    out.append(_gt("market.nu>0", mk.nu, 0.0))
    out.append(_lt("market.|rho|<1", abs(mk.rho), 1.0))
    out.append(_gt("market.z0>0", mk.z0, 0.0))
    out.append(_gt("market.T>0", mk.horizon, 0.0))
    out.append(_gt("market.lambda_hat>0", mk.lambda_hat, 0.0))
    out.append(_gt("market.eta_hat>0", mk.eta_hat, 0.0))
    out.append(_ge("market.a>=0", mk.a, 0.0))
    out.append(_ge("market.b>=0", mk.b, 0.0))
    out.append(_gt("market.a^2+b^2>0", mk.a**2 + mk.b**2, 0.0))
    feller_l, feller_r = mk.feller_sides()
    out.append(_gt("feller", feller_l, feller_r, "2 kappa zbar > nu^2"))
    out.append(
        _gt(
            "kappa+m*nu*rho>0",
            mk.kappa + mk.m * mk.nu * mk.rho,
            0.0,
            "sign of the adjusted mean reversion; advisory",
            advisory=True,
        )
    )

    bound = mk.kappa**2 / (2.0 * mk.nu**2) if mk.nu > 0 else math.inf
    cond1 = 0.0
    cond2 = 0.0
    for idx, ins in enumerate(spec.insurers, start=1):
        tag = f"insurer{idx}"
        out.append(_gt(f"{tag}.lambda>0", ins.lam, 0.0))
        out.append(_gt(f"{tag}.mu1>0", ins.mu1, 0.0))
        out.append(_ge(f"{tag}.mu2>=mu1^2", ins.mu2, ins.mu1**2))
        out.append(_gt(f"{tag}.eta>0", ins.eta, 0.0))
        out.append(Check(f"{tag}.theta in [0,1]", 0.0 <= ins.theta <= 1.0, ins.theta, 1.0))
        out.append(_gt(f"{tag}.delta>0", ins.delta, 0.0))
        out.append(Check(f"{tag}.psi>=0", min(ins.psi) >= 0.0, min(ins.psi), 0.0))
        out.append(_gt(f"{tag}.premium>0", ins.premium_rate(mk), 0.0))
        if ins.delta <= 0 or min(ins.psi) < 0:
            continue
        b1, b2 = ins.beta[0], ins.beta[1]
        cond1 = max(cond1, b1**2 * mk.m**2 / (1.0 - b1) ** 2)
        if abs(mk.rho) < 1 and mk.nu > 0:
            try:
                consts = riccati_constants(ins, mk, variant=variant)
                ok_pos = consts.c1 > 0 and consts.c2 > 0 and consts.c3 > 0
                out.append(
                    Check(
                        f"{tag}.riccati_constants>0",
                        ok_pos,
                        min(consts.c1, consts.c2, consts.c3),
                        0.0,
                        f"c1={consts.c1:.6g} c2={consts.c2:.6g} c3={consts.c3:.6g}",
                    )
                )
                h0 = h_of_t(consts, 0.0)
                cond2 = max(cond2, h0**2 * mk.nu**2 * b2**2 * (1.0 - mk.rho**2))
            except DomainError as exc:
                out.append(Check(f"{tag}.riccati_constants>0", False, math.nan, 0.0, str(exc)))
    out.append(_lt("condition_I", cond1, bound, "sup beta1^2 m^2/(1-beta1)^2 < kappa^2/(2 nu^2)"))
    out.append(_lt("condition_II", cond2, bound, "sup h(0)^2 nu^2 beta2^2 (1-rho^2) < kappa^2/(2 nu^2)"))
    gap = spec.n - spec.theta_sum
    out.append(
        Check("existence: sum(theta)!=n", abs(gap) > 1e-12, spec.theta_sum, float(spec.n))
    )
    return ValidationReport(tuple(out))


# --------------------------------------------------------------------------- config


def _node_line(node) -> int:
    return node.start_mark.line + 1


def _scalar(node, where: str) -> float:
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"line {_node_line(node)}: {where} must be a number")
    try:
        value = float(node.value)
    except ValueError:
        raise ConfigError(f"line {_node_line(node)}: {where} = {node.value!r} is not a number") from None
    if not math.isfinite(value):
        raise ConfigError(f"line {_node_line(node)}: {where} must be finite")
    return value


def _record(node, allowed: dict[str, str], where: str, required: set[str]) -> dict[str, float]:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"line {_node_line(node)}: {where} must be a mapping")
    out: dict[str, float] = {}
    for key_node, val_node in node.value:
        key = key_node.value
        if key not in allowed:
            raise ConfigError(f"line {_node_line(key_node)}: unknown key {where}.{key}")
        if allowed[key] in out:
            raise ConfigError(f"line {_node_line(key_node)}: duplicate key {where}.{key}")
        out[allowed[key]] = _scalar(val_node, f"{where}.{key}")
    missing = sorted(k for k in required if allowed[k] not in out)
    if missing:
        raise ConfigError(f"line {_node_line(node)}: {where} is missing {', '.join(missing)}")
    return out


def parse_config(text: str, source: str = "<config>") -> GameSpec:
    """Parse a YAML game configuration; errors carry the offending line number."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{source}: {line}{getattr(exc, 'problem', exc)}") from None
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{source}: line 1: top level must be a mapping with market and insurers")
    sections = {}
    for key_node, val_node in root.value:
        if key_node.value not in ("market", "insurers"):
            raise ConfigError(f"{source}: line {_node_line(key_node)}: unknown section {key_node.value}")
        sections[key_node.value] = val_node
    for name in ("market", "insurers"):
        if name not in sections:
            raise ConfigError(f"{source}: line 1: missing section {name}")
    try:
        market = MarketParams(**_record(sections["market"], MARKET_KEYS, "market", set(MARKET_KEYS)))
        ins_node = sections["insurers"]
        if not isinstance(ins_node, yaml.SequenceNode) or not ins_node.value:
            raise ConfigError(f"line {_node_line(ins_node)}: insurers must be a non-empty list")
        required = set(INSURER_KEYS) - {"psi1", "psi2", "psi3", "psi4"}
        insurers = [
            InsurerType(**_record(node, INSURER_KEYS, f"insurers[{j}]", required))
            for j, node in enumerate(ins_node.value)
        ]
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return GameSpec(market, tuple(insurers))


def load_config(path) -> GameSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))


def dump_config(spec: GameSpec) -> str:
    inv_m = {v: k for k, v in MARKET_KEYS.items()}
    inv_i = {v: k for k, v in INSURER_KEYS.items()}
    doc = {
        "market": {inv_m[f.name]: getattr(spec.market, f.name) for f in fields(MarketParams)},
        "insurers": [
            {inv_i[f.name]: getattr(ins, f.name) for f in fields(InsurerType)} for ins in spec.insurers
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


def baseline_spec() -> GameSpec:
    """The two-insurer market calibration used for the sensitivity study."""
    here = Path(__file__).parent / "data" / "baseline.yaml"
    return load_config(here)


# --------------------------------------------------------------------------- parameter paths

_PATH_RE = re.compile(r"^(?:(market)\.)?([A-Za-z_][A-Za-z0-9_]*)$|^insurers\[(\d+)\]\.([A-Za-z_][A-Za-z0-9_]*)$")


def resolve_path(spec: GameSpec, target: str) -> tuple[str, int | None, str]:
    """Map a config path such as ``insurers[0].psi3`` or ``lambda_hat`` to (section, index, field)."""
    match = _PATH_RE.match(target.strip())
    if not match:
        raise ConfigError(f"cannot parse parameter path {target!r}")
    if match.group(2) is not None:
        key = match.group(2)
        if key not in MARKET_KEYS:
            raise ConfigError(f"unknown market parameter {key!r}")
        return "market", None, MARKET_KEYS[key]
    idx, key = int(match.group(3)), match.group(4)
    if idx >= spec.n:
        raise ConfigError(f"insurer index {idx} out of range for n={spec.n}")
    if key not in INSURER_KEYS:
        raise ConfigError(f"unknown insurer parameter {key!r}")
    return "insurers", idx, INSURER_KEYS[key]


def with_value(spec: GameSpec, target: str, value: float) -> GameSpec:
    """Return a copy of spec with one numeric parameter replaced."""
    from dataclasses import replace

    if not math.isfinite(value):
        raise ConfigError(f"sweep value {value!r} is not finite")
    section, idx, name = resolve_path(spec, target)
    if section == "market":
        return GameSpec(replace(spec.market, **{name: value}), spec.insurers)
    insurers = list(spec.insurers)
    insurers[idx] = replace(insurers[idx], **{name: value})
    return GameSpec(spec.market, tuple(insurers))
