"""Command-line interface.  Exit codes: 0 ok, 2 bad input, 3 numerical failure, 4 bad configuration."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, SplitcopError
from .estimation import GridSpec, fit_grid
from .marginals import fit_garch, fit_report, select_ar_order
from .pipeline import (BOND_YIELD, MOMENTS_HEADER, STOCK, TABLE2_ROWS, McConfig, RunConfig, _g, _load_table,
                       _write, load_csv, moments_rows, read_pit, rolling_stage, run_critical_values, run_empirical,
                       run_moments, to_returns)
from .simulation import simulate_uniform_pairs


def _floats(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pairs(text):
    out = []
    for item in text.split(";"):
        if item.strip():
            v = _floats(item)
            if len(v) != 2:
                raise argparse.ArgumentTypeError(f"expected 'rho_u,rho_l' pairs separated by ';', got {item!r}")
            out.append(v)
    return tuple(out)


def _grid_args(p, step):
    p.add_argument("--grid-step", type=float, default=step)
    p.add_argument("--grid-lo", type=float, default=-0.95)
    p.add_argument("--grid-hi", type=float, default=0.95)
    p.add_argument("--m-points", type=int, default=50)


def _mc_args(p):
    p.add_argument("--n", type=int, default=100, help="sample size per replicate")
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    _grid_args(p, 0.02)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splitcop", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="empirical pipeline on stock-index and bond-yield CSVs")
    p.add_argument("--stock", required=True)
    p.add_argument("--bond", required=True)
    p.add_argument("--window", type=int, default=100)
    _grid_args(p, 0.01)
    p.add_argument("--cv-table", default=None, help="critical-value CSV (default: shipped table)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--density-mode", choices=("analytic", "spline"), default="analytic")

    p = sub.add_parser("mc-moments", help="sampling moments of the lower-tail estimate")
    _mc_args(p)
    p.add_argument("--pairs", type=_pairs, default=None,
                   help="true 'rho_u,rho_l' pairs separated by ';' (default: 7x7 grid over -0.6..0.6)")

    p = sub.add_parser("mc-critical-values", help="null percentiles of the lower-tail estimate")
    _mc_args(p)
    p.add_argument("--rho-other", type=_floats, default=TABLE2_ROWS, help="comma-separated other-tail values")

    p = sub.add_parser("simulate", help="write synthetic copula samples")
    p.add_argument("--rho-u", type=float, required=True)
    p.add_argument("--rho-l", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m-points", type=int, default=50)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="grid fit of a PIT CSV (date,u_stock,u_bond)")
    p.add_argument("--pit", required=True)
    p.add_argument("--window", type=int, default=None, help="rolling fit with this window instead of one fit")
    _grid_args(p, 0.01)
    p.add_argument("--cv-table", default=None)
    p.add_argument("--out", default=None, help="output directory for the rolling CSV")

    p = sub.add_parser("garch", help="AR(p)-GARCH(1,1)-t fit of one price or yield series")
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=(STOCK, BOND_YIELD), default=STOCK)
    p.add_argument("--max-p", type=int, default=5)
    p.add_argument("--scaling", choices=("unit_variance", "unit_scale"), default="unit_variance")
    p.add_argument("--out", default=None, help="report CSV path (default: stdout)")
    return ap


def _grid(a):
    try:
        return GridSpec(a.grid_lo, a.grid_hi, a.grid_step)
    except SplitcopError as e:
        raise ConfigError(str(e)) from None


def _mc_config(a, **kw):
    return McConfig(out=str(Path(a.out).parent), n=a.n, reps=a.reps, grid_step=a.grid_step, grid_lo=a.grid_lo,
                    grid_hi=a.grid_hi, m_points=a.m_points, seed=a.seed, **kw)


def _cmd_run(a):
    cfg = RunConfig(stock=a.stock, bond=a.bond, out=a.out, window=a.window, grid_step=a.grid_step,
                    grid_lo=a.grid_lo, grid_hi=a.grid_hi, m_points=a.m_points, seed=a.seed, cv_table=a.cv_table,
                    density_mode=a.density_mode)
    for name, path in run_empirical(cfg).items():
        print(f"{name}: {path}")


def _cmd_mc_moments(a):
    kw = {} if a.pairs is None else {"moment_pairs": a.pairs}
    rows = run_moments(_mc_config(a, **kw))
    _write(Path(a.out), MOMENTS_HEADER, moments_rows(rows))
    print(Path(a.out).read_text(), end="")


def _cmd_mc_cv(a):
    table = run_critical_values(_mc_config(a, cv_rows=a.rho_other))
    print(table.to_csv(a.out), end="")


def _cmd_simulate(a):
    u = simulate_uniform_pairs(a.rho_u, a.rho_l, a.n, 1, a.seed, a.m_points)[0]
    _write(Path(a.out), ("x", "y"), [[_g(x), _g(y)] for x, y in u])


def _cmd_fit(a):
    dates, u = read_pit(a.pit)
    grid = _grid(a)
    if a.window is None:
        f = fit_grid(u, grid, m=a.m_points)
        print(f"rho_u={f.rho_u_hat:.2f} rho_l={f.rho_l_hat:.2f} loglik={f.loglik:.6f} "
              f"unique={f.grid_argmax_unique} failed_cells={f.n_failed}")
        return
    out = Path(a.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig(stock="", bond="", out=str(out), window=a.window, grid_step=a.grid_step, grid_lo=a.grid_lo,
                    grid_hi=a.grid_hi, m_points=a.m_points, cv_table=a.cv_table)
    _, path = rolling_stage(dates, u, cfg, out, _load_table(a.cv_table))
    print(f"rolling_correlations: {path}")


def _cmd_garch(a):
    r = np.asarray(to_returns(load_csv(a.input, a.kind)).values)
    spec = select_ar_order(r, a.max_p, scaling=a.scaling)
    text = fit_report({Path(a.input).stem: fit_garch(r, spec, scaling=a.scaling)})
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    print(text, end="")


_COMMANDS = {"run": _cmd_run, "mc-moments": _cmd_mc_moments, "mc-critical-values": _cmd_mc_cv,
             "simulate": _cmd_simulate, "fit": _cmd_fit, "garch": _cmd_garch}


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _COMMANDS[a.command](a)
    except SplitcopError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
