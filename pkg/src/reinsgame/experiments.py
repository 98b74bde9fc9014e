"""Parameter sweeps of the equilibrium retention and investment coefficient, with CSV/SVG output."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .equilibrium import investment_coefficients, reinsurance_fixed_point, write_rows
from .errors import ConfigError, ValidationError
from .params import GameSpec, resolve_path, validate, with_value
from .value_function import riccati_coeffs

QUANTITIES = ("a", "Pi")


@dataclass(frozen=True)
class SweepSpec:
    target: str
    values: tuple[float, ...]
    quantity: str = "a"
    insurer: int = 0
    n_grid: int = 501

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ConfigError("a sweep needs at least one value")
        if not all(np.isfinite(self.values)):
            raise ConfigError("sweep values must be finite")
        if self.quantity not in QUANTITIES:
            raise ConfigError(f"quantity must be one of {QUANTITIES}")

    def label(self, value: float) -> str:
        return f"{self.target}={value:g}"


@dataclass(frozen=True)
class SweepResult:
    sweep: SweepSpec
    times: np.ndarray
    curves: np.ndarray  # (len(values), len(times))

    @property
    def labels(self) -> list[str]:
        return [self.sweep.label(v) for v in self.sweep.values]

    def direction(self) -> str:
        return monotone_direction(self.sweep.values, self.curves)


def curve(spec: GameSpec, quantity: str, insurer: int, times: np.ndarray) -> np.ndarray:
    """a*_i(t) or Pi_i(t) for a validated spec."""
    report = validate(spec)
    if not report.ok:
        raise ValidationError(report)
    if quantity == "a":
        return reinsurance_fixed_point(spec, times).a[insurer]
    coeffs = [riccati_coeffs(ins, spec.market) for ins in spec.insurers]
    return investment_coefficients(spec, coeffs, times)[insurer]


def _point(args):
    spec, sweep, value, times = args
    return curve(with_value(spec, sweep.target, value), sweep.quantity, sweep.insurer, times)


def run_sweep(spec: GameSpec, sweep: SweepSpec, workers: int = 1) -> SweepResult:
    resolve_path(spec, sweep.target)
    times = np.linspace(0.0, spec.market.horizon, sweep.n_grid)
    jobs = [(spec, sweep, v, times) for v in sweep.values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_point, jobs))
    else:
        rows = [_point(job) for job in jobs]
    return SweepResult(sweep, times, np.vstack(rows))


def monotone_direction(values, curves, rel_tol: float = 1e-12) -> str:
    """Pointwise ordering of curves as the swept value increases.

    ``increasing`` if every consecutive difference is >= 0 on the grid and somewhere > 0;
    ``decreasing`` symmetrically; ``flat`` if all differences vanish; otherwise ``mixed``.
    """
    order = np.argsort(values)
    c = np.asarray(curves)[order]
    diffs = np.diff(c, axis=0)
    tol = rel_tol * max(1.0, float(np.max(np.abs(c))))
    if np.all(np.abs(diffs) <= tol):
        return "flat"
    if np.all(diffs >= -tol):
        return "increasing"
    if np.all(diffs <= tol):
        return "decreasing"
    return "mixed"


def write_sweep(result: SweepResult, out_dir, basename: str, svg: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    header = ["t"] + result.labels
    rows = zip(result.times, *result.curves)
    paths = [write_rows(out_dir / f"{basename}.csv", header, rows)]
    if svg:
        paths.append(plot_curves(result, out_dir / f"{basename}.svg"))
    return paths


def plot_curves(result: SweepResult, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "reinsgame"
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for lab, y in zip(result.labels, result.curves):
        ax.plot(result.times, y, label=lab)
    name = "a*" if result.sweep.quantity == "a" else "Pi"
    ax.set_xlabel("t")
    ax.set_ylabel(f"{name}_{result.sweep.insurer + 1}(t)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)
    tmp.replace(path)
    return path


# name, quantity, target, values, expected direction (None means report only)
FIGURES = (
    ("a_vs_lambda_hat", "a", "lambda_hat", (0.3, 0.6, 0.9, 1.2), "increasing"),
    ("a_vs_eta_hat", "a", "eta_hat", (0.15, 0.25, 0.35, 0.45), "increasing"),
    ("a_vs_theta1", "a", "insurers[0].theta", (0.1, 0.4, 0.7, 0.9), "increasing"),
    ("a_vs_theta2", "a", "insurers[1].theta", (0.1, 0.4, 0.7, 0.9), "increasing"),
    ("a_vs_delta1", "a", "insurers[0].delta", (1.0, 1.5, 2.0, 2.5), "decreasing"),
    ("a_vs_delta2", "a", "insurers[1].delta", (0.8, 1.3, 1.8, 2.3), "decreasing"),
    ("a_vs_psi13", "a", "insurers[0].psi3", (3.0, 5.0, 7.0, 9.0), "decreasing"),
    ("a_vs_psi23", "a", "insurers[1].psi3", (3.0, 5.0, 7.0, 9.0), None),
    ("a_vs_psi14", "a", "insurers[0].psi4", (5.0, 7.0, 9.0, 11.0), "decreasing"),
    ("a_vs_psi24", "a", "insurers[1].psi4", (5.0, 7.0, 9.0, 11.0), None),
    ("Pi_vs_theta1", "Pi", "insurers[0].theta", (0.1, 0.4, 0.7, 0.9), "increasing"),
    ("Pi_vs_theta2", "Pi", "insurers[1].theta", (0.1, 0.4, 0.7, 0.9), "increasing"),
    ("Pi_vs_delta1", "Pi", "insurers[0].delta", (1.0, 1.5, 2.0, 2.5), "decreasing"),
    ("Pi_vs_delta2", "Pi", "insurers[1].delta", (0.8, 1.3, 1.8, 2.3), "decreasing"),
    ("Pi_vs_psi11", "Pi", "insurers[0].psi1", (3.0, 5.0, 7.0, 9.0), "decreasing"),
    ("Pi_vs_psi21", "Pi", "insurers[1].psi1", (3.0, 5.0, 7.0, 9.0), "decreasing"),
    ("Pi_vs_psi12", "Pi", "insurers[0].psi2", (5.0, 7.0, 9.0, 11.0), "decreasing"),
    ("Pi_vs_psi22", "Pi", "insurers[1].psi2", (5.0, 7.0, 9.0, 11.0), "decreasing"),
)


@dataclass(frozen=True)
class FigureOutcome:
    name: str
    quantity: str
    target: str
    values: tuple[float, ...]
    computed: str
    expected: str | None

    @property
    def agrees(self) -> bool | None:
        return None if self.expected is None else self.computed == self.expected


def reproduce_figures(spec: GameSpec, out_dir=None, n_grid: int = 501, svg: bool = True, workers: int = 1) -> list[FigureOutcome]:
    """Run every sensitivity sweep; optionally write one CSV (and SVG) per figure plus a summary."""
    outcomes = []
    for name, quantity, target, values, expected in FIGURES:
        res = run_sweep(spec, SweepSpec(target, values, quantity, 0, n_grid), workers)
        outcomes.append(FigureOutcome(name, quantity, target, values, res.direction(), expected))
        if out_dir is not None:
            write_sweep(res, out_dir, name, svg)
    if out_dir is not None:
        rows = [
            (o.name, o.quantity, o.target, " ".join(f"{v:g}" for v in o.values), o.computed, o.expected or "report-only",
             "" if o.agrees is None else str(o.agrees).lower())
            for o in outcomes
        ]
        write_rows(Path(out_dir) / "summary.csv", ["figure", "quantity", "parameter", "values", "computed", "expected", "agrees"], rows)
    return outcomes
