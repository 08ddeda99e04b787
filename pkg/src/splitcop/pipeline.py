"""End-to-end empirical workflow: prices -> returns -> AR-GARCH-t marginals ->
PIT -> rolling copula fits -> one-sided tests, plus the Monte Carlo tables.

Every stage writes one CSV; floats are written with 17 significant digits so
any later stage can be rerun from the saved files with identical results.
"""

from __future__ import annotations

import contextlib
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .copula import DEFAULT_M
from .errors import ConfigError, InputError, NumericalError, ParameterError, SplitcopError
from .estimation import GridSpec, RollingResult, fit_rolling
from .marginals import GarchFit, fit_garch, fit_report, select_ar_order, simulate_garch
from .simulation import (CriticalValueTable, MomentsRow, mc_critical_values, mc_moments, one_sided_test,
                         simulate_uniform_pairs)

log = logging.getLogger(__name__)

STOCK = "stock"
BOND_YIELD = "bond_yield"
KINDS = (STOCK, BOND_YIELD)
MAX_BAD_FRACTION = 0.05
TABLE2_ROWS = (0.8, 0.6, 0.4, 0.2, 0.0, -0.2, -0.4, -0.6, -0.8)
TABLE1_VALUES = (0.6, 0.4, 0.2, 0.0, -0.2, -0.4, -0.6)


def _g(x) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class PriceSeries:
    dates: tuple
    values: np.ndarray
    kind: str = STOCK
    n_missing: int = 0
    n_bad: int = 0

    def __len__(self):
        return len(self.dates)


@dataclass(frozen=True)
class ReturnSeries:
    dates: tuple
    values: np.ndarray
    kind: str = STOCK

    def __len__(self):
        return len(self.dates)


@dataclass(frozen=True)
class AlignedReturns:
    dates: tuple
    stock: np.ndarray
    bond: np.ndarray
    dropped_stock: tuple = ()
    dropped_bond: tuple = ()

    def __len__(self):
        return len(self.dates)


def _check_kind(kind):
    if kind not in KINDS:
        raise ParameterError(f"kind must be one of {KINDS}, got {kind!r}")


def parse_price_csv(text: str, kind: str = STOCK, source: str = "<string>") -> PriceSeries:
    """Parse ``date,value`` rows; see :func:`load_csv`."""
    _check_kind(kind)
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip().lower() for h in header] != ["date", "value"]:
        raise InputError(f"{source}: expected header 'date,value', got {header}")
    dates, values = [], []
    n_rows = n_missing = 0
    bad = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not f.strip() for f in rec):
            continue
        n_rows += 1
        if len(rec) != 2:
            bad.append(lineno)
            continue
        ds, vs = rec[0].strip(), rec[1].strip()
        try:
            d = dt.date.fromisoformat(ds)
        except ValueError:
            bad.append(lineno)
            continue
        if vs == "" or vs.lower() in ("na", "nan", "null"):
            n_missing += 1
            continue
        try:
            v = float(vs)
        except ValueError:
            bad.append(lineno)
            continue
        if not math.isfinite(v):
            bad.append(lineno)
            continue
        dates.append(d)
        values.append(v)
    if n_rows and len(bad) > MAX_BAD_FRACTION * n_rows:
        raise InputError(f"{source}: {len(bad)} of {n_rows} rows unparseable (first at line {bad[0]})")
    for i in range(1, len(dates)):
        if dates[i] <= dates[i - 1]:
            raise InputError(f"{source}: dates not strictly increasing at {dates[i].isoformat()} "
                             f"(after {dates[i - 1].isoformat()})")
    vals = np.array(values, dtype=float)
    if kind == BOND_YIELD and np.any(vals <= -100.0):
        i = int(np.flatnonzero(vals <= -100.0)[0])
        raise InputError(f"{source}: yield {vals[i]} on {dates[i].isoformat()} is not above -100%")
    if kind == BOND_YIELD and np.any(vals < 0):
        log.warning("%s: %d negative yields", source, int(np.sum(vals < 0)))
    if n_missing or bad:
        log.info("%s: dropped %d rows with missing values and %d unparseable rows", source, n_missing, len(bad))
    vals.setflags(write=False)
    return PriceSeries(tuple(dates), vals, kind, n_missing, len(bad))


def load_csv(path, kind: str = STOCK) -> PriceSeries:
    """Read a ``date,value`` CSV (ISO dates, strictly increasing).

    Rows with an empty value are dropped and counted; up to 5% unparseable
    rows are dropped as well, more is an error.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    return parse_price_csv(text, kind, str(path))


def bond_price(yield_percent):
    """Price of a 10-period discount bond, 1 / (1 + y/100)^10, for a quoted percentage yield."""
    y = np.asarray(yield_percent, dtype=float)
    base = 1.0 + y / 100.0
    if np.any(~np.isfinite(y)) or np.any(base <= 0):
        raise ParameterError("yields must be finite and above -100%")
    out = base ** -10.0
    return out if out.ndim else float(out)


def to_returns(series: PriceSeries) -> ReturnSeries:
    """Percent log returns 100 (log P(t) - log P(t-1)), dated at t; yields are priced first."""
    if len(series) < 2:
        raise ParameterError("need at least two prices for a return")
    prices = bond_price(series.values) if series.kind == BOND_YIELD else np.asarray(series.values, dtype=float)
    if np.any(prices <= 0):
        i = int(np.flatnonzero(prices <= 0)[0])
        raise ParameterError(f"non-positive price {prices[i]} on {series.dates[i].isoformat()}")
    r = 100.0 * np.diff(np.log(prices))
    r.setflags(write=False)
    return ReturnSeries(series.dates[1:], r, series.kind)


def align(stock: ReturnSeries, bond: ReturnSeries) -> AlignedReturns:
    """Inner join on dates; the dates dropped from each side are reported."""
    if len(stock) == 0 or len(bond) == 0:
        raise ParameterError("cannot align an empty series")
    common = sorted(set(stock.dates) & set(bond.dates))
    if not common:
        raise InputError("stock and bond series share no dates")
    keep = set(common)
    si = [i for i, d in enumerate(stock.dates) if d in keep]
    bi = [i for i, d in enumerate(bond.dates) if d in keep]
    ds = tuple(d for d in stock.dates if d not in keep)
    db = tuple(d for d in bond.dates if d not in keep)
    if ds or db:
        log.info("alignment dropped %d stock and %d bond dates", len(ds), len(db))
    s = np.asarray(stock.values)[si]
    b = np.asarray(bond.values)[bi]
    return AlignedReturns(tuple(common), s, b, ds, db)


def summary_stats(aligned: AlignedReturns) -> dict:
    """Mean, SD (ddof 1), skewness, excess kurtosis per series and Kendall's tau-b between them."""
    out = {}
    for name, x in ((STOCK, aligned.stock), ("bond", aligned.bond)):
        x = np.asarray(x, dtype=float)
        out[name] = {"n": int(x.size), "mean": float(np.mean(x)), "sd": float(np.std(x, ddof=1)),
                     "skew": float(stats.skew(x)), "kurt": float(stats.kurtosis(x))}
    out["tau"] = float(stats.kendalltau(aligned.stock, aligned.bond).statistic)
    return out


@dataclass(frozen=True)
class RunConfig:
    stock: str
    bond: str
    out: str = "out"
    window: int = 100
    grid_step: float = 0.01
    grid_lo: float = -0.95
    grid_hi: float = 0.95
    m_points: int = DEFAULT_M
    seed: int = 0
    cv_table: str | None = None
    max_p: int = 5
    density_mode: str = "analytic"
    scaling: str = "unit_variance"

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 50:
            raise ConfigError(f"window must be an integer >= 50, got {self.window}")
        if not 0.01 - 1e-12 <= self.grid_step <= 0.1 + 1e-12:
            raise ConfigError(f"grid step must lie in [0.01, 0.1], got {self.grid_step}")
        if int(self.m_points) != self.m_points or self.m_points < 10:
            raise ConfigError(f"m_points must be an integer >= 10, got {self.m_points}")
        if not 0 <= self.max_p <= 5:
            raise ConfigError(f"max_p must lie in [0, 5], got {self.max_p}")
        if self.density_mode not in ("analytic", "spline"):
            raise ConfigError(f"unknown density mode {self.density_mode!r}")
        if self.scaling not in ("unit_variance", "unit_scale"):
            raise ConfigError(f"unknown innovation scaling {self.scaling!r}")
        try:
            self.grid()
        except ParameterError as e:
            raise ConfigError(str(e)) from None

    def grid(self) -> GridSpec:
        return GridSpec(self.grid_lo, self.grid_hi, self.grid_step)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


@contextlib.contextmanager
def _stage(name):
    try:
        yield
    except SplitcopError as e:
        if str(e).startswith("["):
            raise
        if isinstance(e, NumericalError):
            raise NumericalError(f"[{name}] {e}", best=e.best) from e
        raise type(e)(f"[{name}] {e}") from e


def _write(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_summary(path, s: dict):
    rows = [[k, s[k]["n"], _g(s[k]["mean"]), _g(s[k]["sd"]), _g(s[k]["skew"]), _g(s[k]["kurt"]),
             _g(s["tau"])] for k in (STOCK, "bond")]
    return _write(Path(path), ("series", "n", "mean", "sd", "skew", "kurt", "tau"), rows)


def pit_pairs(aligned: AlignedReturns, fs: GarchFit, fb: GarchFit):
    """Dates and (n, 2) PIT pairs on the dates both fits cover."""
    burn = max(fs.burn, fb.burn)
    dates = aligned.dates[burn:]
    u = np.column_stack([np.asarray(fs.pit_values)[burn - fs.burn:], np.asarray(fb.pit_values)[burn - fb.burn:]])
    return dates, u


def write_pit(path, dates, u):
    return _write(Path(path), ("date", "u_stock", "u_bond"),
                  [[d.isoformat(), _g(a), _g(b)] for d, (a, b) in zip(dates, u)])


def read_pit(path):
    """Read a PIT CSV written by :func:`write_pit`; returns (dates, (n, 2) array)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["date", "u_stock", "u_bond"]:
        raise InputError(f"{path}: expected header 'date,u_stock,u_bond'")
    dates, rows = [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        try:
            dates.append(dt.date.fromisoformat(rec[0].strip()))
            rows.append((float(rec[1]), float(rec[2])))
        except (ValueError, IndexError):
            raise InputError(f"{path}:{lineno}: cannot parse {rec}") from None
    if not rows:
        raise InputError(f"{path}: no rows")
    return tuple(dates), np.array(rows)


ROLLING_HEADER = ("center_date", "rho_u", "rho_l", "loglik", "verdict_u", "verdict_l")


def rolling_rows(res: RollingResult, table: CriticalValueTable):
    """One row per window: estimates, loglik and the upper/lower one-sided verdicts."""
    rows = []
    with warnings.catch_warnings():
        # estimates beyond the tabulated range are clamped; one notice per run is enough
        warnings.simplefilter("ignore", RuntimeWarning)
        for c, f in zip(res.window_centers, res.fits):
            vu = one_sided_test(f.rho_u_hat, f.rho_l_hat, table).verdict
            vl = one_sided_test(f.rho_l_hat, f.rho_u_hat, table).verdict
            label = c.isoformat() if isinstance(c, dt.date) else str(c)
            rows.append([label, f"{f.rho_u_hat:.2f}", f"{f.rho_l_hat:.2f}", _g(f.loglik), vu, vl])
    lo, hi = min(table.rho_other), max(table.rho_other)
    n_out = sum(1 for f in res.fits for x in (f.rho_u_hat, f.rho_l_hat) if x < lo or x > hi)
    if n_out:
        log.warning("%d estimates outside the critical-value range [%g, %g]; nearest row used", n_out, lo, hi)
    return rows


def rolling_stage(dates, u, cfg: RunConfig, out_dir: Path, table: CriticalValueTable):
    with _stage("rolling"):
        res = fit_rolling(u, cfg.window, cfg.grid(), dates=dates, m=cfg.m_points, density_mode=cfg.density_mode)
    with _stage("tests"):
        rows = rolling_rows(res, table)
    return res, _write(out_dir / "rolling_correlations.csv", ROLLING_HEADER, rows)


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_table(path):
    return CriticalValueTable.default() if path is None else CriticalValueTable.read_csv(path)


def run_empirical(cfg: RunConfig) -> dict:
    """Run every stage and write its CSV to ``cfg.out``; returns {artifact name: path}."""
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {out}: {e}") from e
    with _stage("load"):
        table = _load_table(cfg.cv_table)
        ps = load_csv(cfg.stock, STOCK)
        pb = load_csv(cfg.bond, BOND_YIELD)
    with _stage("returns"):
        aligned = align(to_returns(ps), to_returns(pb))
    paths = {"returns": _write(out / "returns.csv", ("date", "stock_return", "bond_return"),
                               [[d.isoformat(), _g(a), _g(b)]
                                for d, a, b in zip(aligned.dates, aligned.stock, aligned.bond)])}
    with _stage("summary"):
        paths["summary"] = write_summary(out / "summary.csv", summary_stats(aligned))
    with _stage("garch"):
        fits = {}
        for name, x in ((STOCK, aligned.stock), ("bond", aligned.bond)):
            spec = select_ar_order(x, cfg.max_p, scaling=cfg.scaling)
            fits[name] = fit_garch(x, spec, scaling=cfg.scaling, seed=cfg.seed)
        (out / "garch_params.csv").write_text(fit_report(fits), encoding="utf-8")
        paths["garch_params"] = out / "garch_params.csv"
    with _stage("pit"):
        dates, u = pit_pairs(aligned, fits[STOCK], fits["bond"])
        paths["pit"] = write_pit(out / "pit.csv", dates, u)
    _, paths["rolling_correlations"] = rolling_stage(dates, u, cfg, out, table)
    lines = [f"splitcop {__version__}", f"config_sha256 {cfg.digest()}",
             f"config {json.dumps(asdict(cfg), sort_keys=True)}",
             f"input_stock_sha256 {_sha(cfg.stock)}", f"input_bond_sha256 {_sha(cfg.bond)}",
             f"rows_dropped stock={ps.n_missing + ps.n_bad} bond={pb.n_missing + pb.n_bad}",
             f"dates_dropped_by_alignment stock={len(aligned.dropped_stock)} bond={len(aligned.dropped_bond)}"]
    lines += [f"output {k} {Path(p).name} {_sha(p)}" for k, p in paths.items()]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["manifest"] = out / "manifest.txt"
    return paths


# --- Monte Carlo tables -------------------------------------------------------

@dataclass(frozen=True)
class McConfig:
    out: str = "mc"
    n: int = 100
    reps: int = 500
    grid_step: float = 0.02
    grid_lo: float = -0.95
    grid_hi: float = 0.95
    m_points: int = DEFAULT_M
    seed: int = 0
    moment_pairs: tuple = tuple((u, l) for u in TABLE1_VALUES for l in TABLE1_VALUES)
    cv_rows: tuple = TABLE2_ROWS

    def __post_init__(self):
        if self.n < 20:
            raise ConfigError(f"n must be at least 20, got {self.n}")
        if self.reps < 1:
            raise ConfigError(f"reps must be at least 1, got {self.reps}")
        try:
            self.grid()
        except ParameterError as e:
            raise ConfigError(str(e)) from None

    def grid(self) -> GridSpec:
        return GridSpec(self.grid_lo, self.grid_hi, self.grid_step)


MOMENTS_HEADER = ("rho_u", "rho_l", "mean", "sd", "skew", "kurt", "n", "reps", "dropped")


def moments_rows(rows):
    return [[_g(r.true_rho_u), _g(r.true_rho_l), _g(r.mean), _g(r.sd), _g(r.skew), _g(r.kurt), r.n, r.reps,
             r.n_dropped] for r in rows]


def run_moments(cfg: McConfig) -> list:
    return [mc_moments(u, l, cfg.n, cfg.reps, cfg.grid(), cfg.seed, m=cfg.m_points) for u, l in cfg.moment_pairs]


def run_critical_values(cfg: McConfig) -> CriticalValueTable:
    return CriticalValueTable.from_rows(
        {r: mc_critical_values(r, cfg.n, cfg.reps, cfg.grid(), cfg.seed, m=cfg.m_points) for r in cfg.cv_rows})


def mc_tables(cfg: McConfig) -> dict:
    """Regenerate the moments grid and the critical-value table; writes both CSVs."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.reps < 50:
        warnings.warn(f"reps={cfg.reps}: Monte Carlo summaries will be degenerate", RuntimeWarning, stacklevel=2)
    with _stage("moments"):
        rows: list[MomentsRow] = run_moments(cfg)
    with _stage("critical_values"):
        table = run_critical_values(cfg)
    p1 = _write(out / "moments.csv", MOMENTS_HEADER, moments_rows(rows))
    p2 = out / "critical_values.csv"
    table.to_csv(p2)
    return {"moments": p1, "critical_values": p2}


# --- synthetic inputs ---------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Piecewise-constant copula segments of (rho_u, rho_l, length) with GARCH-t marginals."""

    segments: tuple = ((-0.4, -0.4, 300), (-0.4, 0.6, 300))
    stock_garch: dict = field(default_factory=lambda: {"mu": 0.1, "alpha0": 0.2, "alpha1": 0.1, "beta1": 0.85,
                                                        "nu": 7.0})
    bond_garch: dict = field(default_factory=lambda: {"mu": 0.0, "alpha0": 0.005, "alpha1": 0.08,
                                                       "beta1": 0.9, "nu": 10.0})
    start: dt.date = dt.date(2005, 1, 7)
    seed: int = 0


def synthetic_returns(spec: SyntheticSpec):
    """Dates and (stock, bond) percent returns whose copula follows ``spec.segments``."""
    seq = np.random.SeedSequence(spec.seed)
    parts = []
    for (ru, rl, n), s in zip(spec.segments, seq.spawn(len(spec.segments))):
        parts.append(simulate_uniform_pairs(ru, rl, int(n), 1, s)[0])
    u = np.concatenate(parts)
    n = u.shape[0]
    out = []
    for j, g in enumerate((spec.stock_garch, spec.bond_garch)):
        nu = g["nu"]
        eps = stats.t.ppf(u[:, j], nu) * math.sqrt((nu - 2.0) / nu)
        out.append(simulate_garch(n, innovations=eps, **g))
    dates = tuple(spec.start + dt.timedelta(weeks=i) for i in range(n + 1))
    return dates, out[0], out[1]


def write_synthetic_inputs(out_dir, spec: SyntheticSpec | None = None):
    """Write stock.csv (index levels) and bond.csv (percent yields) whose returns follow ``spec``."""
    spec = SyntheticSpec() if spec is None else spec
    dates, rs, rb = synthetic_returns(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    level = 1000.0 * np.exp(np.concatenate([[0.0], np.cumsum(rs)]) / 100.0)
    price = 0.5 * np.exp(np.concatenate([[0.0], np.cumsum(rb)]) / 100.0)
    yld = 100.0 * (price ** -0.1 - 1.0)
    ps = _write(out / "stock.csv", ("date", "value"), [[d.isoformat(), _g(v)] for d, v in zip(dates, level)])
    pb = _write(out / "bond.csv", ("date", "value"), [[d.isoformat(), _g(v)] for d, v in zip(dates, yld)])
    return ps, pb
