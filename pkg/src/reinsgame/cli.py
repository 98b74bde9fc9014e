"""Command-line front end. Exit codes: 0 ok, 1 bad config, 2 validation failure, 3 convergence failure."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .equilibrium import solve_equilibrium, write_rows
from .errors import ConfigError, ConvergenceError, DegeneracyError, NoEquilibriumError, ValidationError
from .experiments import SweepSpec, reproduce_figures, run_sweep, write_sweep
from .hamiltonian import default_state_grid, residual_grid
from .mean_field import TypeDistribution, solve_mean_field
from .params import load_config, validate
from .simulator import PathConfig, mc_objective, parse_measure, simulate

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_CONVERGENCE = 0, 1, 2, 3


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None


def _checked(spec, variant="corrected"):
    report = validate(spec, variant)
    if not report.ok:
        raise ValidationError(report)
    return report


def cmd_validate(args) -> int:
    spec = load_config(args.config)
    report = validate(spec, args.variant)
    print(report.render())
    print("all checks pass" if report.ok else "validation FAILED")
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_equilibrium(args) -> int:
    spec = load_config(args.config)
    _checked(spec, args.variant)
    prof = solve_equilibrium(spec, n_grid=args.grid, variant=args.variant)
    path = prof.to_csv(Path(args.out) / "equilibrium.csv")
    print(f"wrote {path}")
    if args.svg:
        _plot_profile(prof, Path(args.out) / "equilibrium.svg")
    return EXIT_OK


def _plot_profile(prof, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "reinsgame"
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for i in range(prof.n):
        ax1.plot(prof.time_grid, prof.Pi[i], label=f"insurer {i + 1}")
        ax2.plot(prof.time_grid, prof.a_star[i], label=f"insurer {i + 1}")
    ax1.set_title("Pi_i(t)")
    ax2.set_title("a*_i(t)")
    for ax in (ax1, ax2):
        ax.set_xlabel("t")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_meanfield(args) -> int:
    spec = load_config(args.config)
    _checked(spec, args.variant)
    if args.weights:
        w = _floats(args.weights)
        if len(w) != spec.n:
            raise ConfigError(f"--weights needs {spec.n} entries")
        dist = TypeDistribution(tuple(zip(spec.insurers, w)))
    else:
        dist = TypeDistribution.uniform(spec.insurers)
    mf = solve_mean_field(dist, spec.market, n_grid=args.grid, variant=args.variant, literal_n=args.literal_n)
    path = mf.to_csv(Path(args.out) / "meanfield.csv")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_residual(args) -> int:
    spec = load_config(args.config)
    _checked(spec)
    prof = solve_equilibrium(spec)
    ts, ys, zs = default_state_grid(spec, args.size)
    insurers = range(spec.n) if args.insurer is None else [args.insurer - 1]
    header = ["insurer", "t", "y", "z", "residual", "max_gradient", "curvature_flags"]
    rows, worst = [], 0.0
    for i in insurers:
        for r in residual_grid(prof, i, ts, ys, zs):
            rows.append((i + 1, r["t"], r["y"], r["z"], r["residual"], r["max_gradient"], r["curvature_flags"]))
            worst = max(worst, r["residual"])
    path = write_rows(Path(args.out) / "residual_check.csv", header, rows)
    print(f"wrote {path}; max relative residual {worst:.3e}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = load_config(args.config)
    _checked(spec)
    worst = parse_measure(args.measure)
    if worst is not None and worst >= spec.n:
        raise ConfigError(f"measure refers to insurer {worst + 1} but n={spec.n}")
    prof = solve_equilibrium(spec)
    cfg = PathConfig(
        dt=args.dt,
        n_paths=args.paths,
        seed=args.seed,
        worst_case=worst,
        mode=args.mode,
        claim_model=args.claims,
        record_every=args.record_every,
    )
    out = Path(args.out)
    rows = []
    if worst is not None:
        res = mc_objective(spec, prof, worst, cfg)
        rows += [("objective_estimate", res.estimate), ("objective_std_error", res.std_error), ("closed_form_value", res.closed_form)]
        bundle = res.bundle
    else:
        bundle = simulate(spec, prof, cfg)
    rows += [("truncated_fraction", bundle.truncated_fraction), ("mean_Z_T", float(bundle.terminal_Z.mean()))]
    for i in range(spec.n):
        k = i + 1
        rows += [
            (f"mean_X{k}_T", float(bundle.terminal_X[i].mean())),
            (f"std_X{k}_T", float(bundle.terminal_X[i].std(ddof=1)) if cfg.n_paths > 1 else 0.0),
            (f"mean_Y{k}_T", float(bundle.terminal_Y[i].mean())),
            (f"mean_claims{k}_T", float(bundle.claims[i, :, -1].mean())),
        ]
    write_rows(out / "simulation_summary.csv", ["quantity", "value"], rows)
    if args.dump_paths:
        m = min(args.dump_paths, cfg.n_paths)
        header = ["t", "path", "Z"] + [f"X_{i + 1}" for i in range(spec.n)] + [f"Y_{i + 1}" for i in range(spec.n)]
        dump = []
        for p in range(m):
            for j, t in enumerate(bundle.times):
                dump.append([t, p, bundle.Z[p, j], *bundle.X[:, p, j], *bundle.Y[:, p, j]])
        write_rows(out / "paths.csv", header, dump)
    for name, val in rows:
        print(f"{name}: {val:.10g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_config(args.config)
    _checked(spec)
    sweep = SweepSpec(args.target, tuple(_floats(args.values)), args.quantity, args.insurer - 1, args.grid)
    res = run_sweep(spec, sweep, args.workers)
    base = args.name or f"sweep_{args.quantity}_{args.target.replace('[', '').replace(']', '').replace('.', '_')}"
    for p in write_sweep(res, args.out, base, not args.no_svg):
        print(f"wrote {p}")
    print(f"direction: {res.direction()}")
    return EXIT_OK


def cmd_figures(args) -> int:
    spec = load_config(args.config)
    _checked(spec)
    for o in reproduce_figures(spec, args.out, n_grid=args.grid, svg=not args.no_svg, workers=args.workers):
        tag = "report" if o.agrees is None else ("ok" if o.agrees else "MISMATCH")
        print(f"{o.name:18s} {o.computed:10s} expected={o.expected or '-':10s} {tag}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reinsgame", description=__doc__)
    ap.add_argument("--seed", type=int, default=0, help="master random seed")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("config", help="YAML game configuration")
        if out:
            p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("validate", help="check all parameter conditions")
    common(p, out=False)
    p.add_argument("--variant", default="corrected", choices=["corrected", "literal"])
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("equilibrium", help="tabulate the n-insurer equilibrium")
    common(p)
    p.add_argument("--grid", type=int, default=2001)
    p.add_argument("--variant", default="corrected", choices=["corrected", "literal"])
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("meanfield", help="mean-field equilibrium with the insurers as type atoms")
    common(p)
    p.add_argument("--weights", help="comma-separated atom weights (default uniform)")
    p.add_argument("--grid", type=int, default=2001)
    p.add_argument("--variant", default="corrected", choices=["corrected", "literal"])
    p.add_argument("--literal-n", type=int, default=None, help="keep a (1 - theta/n) factor in R")
    p.set_defaults(func=cmd_meanfield)

    p = sub.add_parser("residual-check", help="HJBI residual and saddle checks on a state grid")
    common(p)
    p.add_argument("--insurer", type=int, default=None, help="1-based insurer (default all)")
    p.add_argument("--size", type=int, default=5)
    p.set_defaults(func=cmd_residual)

    p = sub.add_parser("simulate", help="Monte Carlo simulation")
    common(p)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--measure", default="reference", help="reference or worst-case:i")
    p.add_argument("--mode", default="diffusion", choices=["diffusion", "cpoisson"])
    p.add_argument("--claims", default="exponential", choices=["exponential", "gamma"])
    p.add_argument("--record-every", type=int, default=None)
    p.add_argument("--dump-paths", type=int, default=0, help="write the first K recorded paths")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="sweep one parameter")
    common(p)
    p.add_argument("--target", required=True, help="e.g. insurers[0].theta or lambda_hat")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--quantity", default="a", choices=["a", "Pi"])
    p.add_argument("--insurer", type=int, default=1, help="1-based insurer whose curve is reported")
    p.add_argument("--grid", type=int, default=501)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--name", default=None)
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("figures", help="all sensitivity sweeps plus a direction summary")
    common(p)
    p.add_argument("--grid", type=int, default=501)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(func=cmd_figures)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, NoEquilibriumError) as exc:
        if isinstance(exc, ValidationError):
            print(exc.report.render(), file=sys.stderr)
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, DegeneracyError, FloatingPointError) as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
