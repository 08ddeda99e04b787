"""Monte Carlo experiments: sampling moments of the tail-correlation estimator,
null percentiles used as one-sided critical values, and the test itself.

Replicate ``r`` of an experiment with seed ``s`` draws from
``SeedSequence(s).spawn(reps)[r]``, so experiments that share a seed share
their underlying normal draws across parameter settings.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats

from .copula import DEFAULT_M, build_model
from .errors import InputError, NumericalError, ParameterError
from .estimation import MIN_OBS, GridSpec, fit_many
from .splitnormal import sample

log = logging.getLogger(__name__)

MAX_DROP_FRACTION = 0.01
MIN_REPS = 50
PERCENTILES = (5.0, 10.0, 90.0, 95.0)
CSV_HEADER = ("rho_other", "p05", "p10", "p90", "p95")

POSITIVE_5 = "Positive at 0.05"
POSITIVE_10 = "Positive at 0.10"
NEGATIVE_5 = "Negative at 0.05"
NEGATIVE_10 = "Negative at 0.10"
NOT_SIGNIFICANT = "Not Significant"
VERDICTS = (POSITIVE_5, POSITIVE_10, NEGATIVE_5, NEGATIVE_10, NOT_SIGNIFICANT)


@dataclass(frozen=True)
class MomentsRow:
    """Sampling moments of one tail's estimate; ``kurt`` is excess kurtosis."""

    true_rho_u: float
    true_rho_l: float
    mean: float
    sd: float
    skew: float
    kurt: float
    n: int = 0
    reps: int = 0
    n_dropped: int = 0


@dataclass(frozen=True)
class CriticalValues:
    p05: float
    p10: float
    p90: float
    p95: float

    def as_tuple(self):
        return (self.p05, self.p10, self.p90, self.p95)

    def __post_init__(self):
        v = self.as_tuple()
        if not all(np.isfinite(v)):
            raise ParameterError(f"non-finite critical values {v}")
        if not (v[0] <= v[1] <= v[2] <= v[3]):
            raise ParameterError(f"critical values out of order: {v}")


@dataclass(frozen=True)
class CriticalValueTable:
    """Null percentiles of a tail estimate, indexed by the other tail's correlation."""

    rho_other: tuple
    rows: tuple

    def __post_init__(self):
        if len(self.rho_other) != len(self.rows):
            raise ParameterError("one row of percentiles per rho_other value")
        if len(set(self.rho_other)) != len(self.rho_other):
            raise ParameterError("duplicate rho_other values in critical-value table")

    @classmethod
    def from_rows(cls, mapping) -> "CriticalValueTable":
        items = sorted((float(k), v if isinstance(v, CriticalValues) else CriticalValues(*v))
                       for k, v in dict(mapping).items())
        return cls(tuple(k for k, _ in items), tuple(v for _, v in items))

    def __len__(self):
        return len(self.rows)

    def row(self, rho_other: float) -> CriticalValues:
        for k, v in zip(self.rho_other, self.rows):
            if abs(k - rho_other) < 1e-12:
                return v
        raise KeyError(rho_other)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k, v in sorted(zip(self.rho_other, self.rows), reverse=True):
            w.writerow([f"{k:.6f}"] + [f"{x:.6f}" for x in v.as_tuple()])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def read_csv(cls, path) -> "CriticalValueTable":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise InputError(f"cannot read critical-value table {path}: {e}") from e
        return cls.parse_csv(text, str(path))

    @classmethod
    def parse_csv(cls, text: str, source: str = "<string>") -> "CriticalValueTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise InputError(f"{source}: expected header {','.join(CSV_HEADER)}")
        rows = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            try:
                vals = [float(f) for f in rec]
            except ValueError:
                raise InputError(f"{source}:{lineno}: non-numeric field in {rec}") from None
            if len(vals) != 5:
                raise InputError(f"{source}:{lineno}: expected 5 fields, got {len(vals)}")
            try:
                rows[vals[0]] = CriticalValues(*vals[1:])
            except ParameterError as e:
                raise InputError(f"{source}:{lineno}: {e}") from None
        if not rows:
            raise InputError(f"{source}: no rows")
        return cls.from_rows(rows)

    @classmethod
    def default(cls) -> "CriticalValueTable":
        """The shipped table (1000-replication null percentiles at n = 100)."""
        text = resources.files("splitcop").joinpath("data/critical_values.csv").read_text(encoding="utf-8")
        return cls.parse_csv(text, "default critical values")


@dataclass(frozen=True)
class TestDecision:
    estimate: float
    rho_other: float
    verdict: str
    critical: CriticalValues

    __test__ = False  # keep pytest from collecting this class


def _check_mc(n, reps):
    if n < MIN_OBS:
        raise ParameterError(f"sample size must be at least {MIN_OBS}, got {n}")
    if reps < 1:
        raise ParameterError(f"reps must be at least 1, got {reps}")
    if reps < MIN_REPS:
        warnings.warn(f"reps={reps} gives degenerate Monte Carlo summaries (recommended >= {MIN_REPS})",
                      RuntimeWarning, stacklevel=3)


def simulate_uniform_pairs(rho_u, rho_l, n: int, reps: int, seed=0, m: int = DEFAULT_M) -> np.ndarray:
    """(reps, n, 2) copula samples: split normal draws pushed through the model's own F_W table."""
    model = build_model(rho_u, rho_l, m)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(reps)
    return np.stack([model.table.cdf(sample(model.params, n, s)) for s in seeds])


def mc_estimates(rho_u, rho_l, n: int = 100, reps: int = 500, grid: GridSpec | None = None, seed=0,
                 m: int = DEFAULT_M, threads=None):
    """Grid estimates for ``reps`` simulated datasets.

    Returns (estimates, n_dropped), where estimates is a (kept, 2) array of
    (rho_u_hat, rho_l_hat).  Replicates whose likelihood fails in every cell
    are dropped; more than 1% dropped is an error.
    """
    grid = GridSpec(step=0.02) if grid is None else grid
    data = simulate_uniform_pairs(rho_u, rho_l, n, reps, seed, m)
    fits = fit_many(data, grid, m=m, threads=threads)
    kept = [f for f in fits if f is not None]
    dropped = reps - len(kept)
    if dropped > MAX_DROP_FRACTION * reps:
        raise NumericalError(f"{dropped} of {reps} replicates failed (cap {MAX_DROP_FRACTION:.0%})")
    if dropped:
        log.warning("dropped %d of %d replicates", dropped, reps)
    return np.array([(f.rho_u_hat, f.rho_l_hat) for f in kept]).reshape(-1, 2), dropped


def _moments(e):
    if e.size < 2 or np.all(e == e[0]):
        sd = float(np.std(e, ddof=1)) if e.size > 1 else 0.0
        return float(np.mean(e)), sd, math.nan, math.nan
    return (float(np.mean(e)), float(np.std(e, ddof=1)),
            float(stats.skew(e)), float(stats.kurtosis(e, fisher=True)))


def mc_moments(true_rho_u, true_rho_l, n: int = 100, reps: int = 500, grid: GridSpec | None = None, seed=0,
               *, tail: str = "lower", m: int = DEFAULT_M, threads=None) -> MomentsRow:
    """Mean, SD, skewness and excess kurtosis of one tail's estimate.

    ``tail`` picks which estimate is summarized (``"lower"`` by default).
    SD uses ddof = 1; skewness and kurtosis are the plain moment estimators.
    """
    _check_mc(n, reps)
    col = _tail_column(tail)
    est, dropped = mc_estimates(true_rho_u, true_rho_l, n, reps, grid, seed, m, threads)
    mean, sd, skew, kurt = _moments(est[:, col])
    return MomentsRow(float(true_rho_u), float(true_rho_l), mean, sd, skew, kurt, n, reps, dropped)


def _tail_column(tail):
    if tail not in ("lower", "upper"):
        raise ParameterError(f"tail must be 'lower' or 'upper', got {tail!r}")
    return 1 if tail == "lower" else 0


def percentiles(estimates) -> CriticalValues:
    return CriticalValues(*(float(x) for x in np.percentile(np.asarray(estimates, dtype=float), PERCENTILES)))


def mc_critical_values(true_rho_other, n: int = 100, reps: int = 500, grid: GridSpec | None = None, seed=0,
                       *, tail: str = "lower", m: int = DEFAULT_M, threads=None) -> CriticalValues:
    """Null percentiles of the tested tail's estimate (true value 0) given the other tail."""
    _check_mc(n, reps)
    col = _tail_column(tail)
    ru, rl = (true_rho_other, 0.0) if col == 1 else (0.0, true_rho_other)
    est, _ = mc_estimates(ru, rl, n, reps, grid, seed, m, threads)
    return percentiles(est[:, col])


def interpolate_cv(table: CriticalValueTable, rho_other: float) -> CriticalValues:
    """Componentwise linear interpolation between the rows bracketing ``rho_other``.

    Outside the tabulated range the nearest row is used, with a warning.
    """
    if table is None or len(table) == 0:
        raise ParameterError("critical-value table is empty")
    if not math.isfinite(rho_other):
        raise ParameterError(f"rho_other must be finite, got {rho_other}")
    xs = np.asarray(table.rho_other, dtype=float)
    if rho_other < xs[0] or rho_other > xs[-1]:
        warnings.warn(f"rho_other={rho_other} outside table range [{xs[0]}, {xs[-1]}]; clamped",
                      RuntimeWarning, stacklevel=2)
    if len(table) == 1:
        return table.rows[0]
    vals = np.array([r.as_tuple() for r in table.rows])
    x = min(max(rho_other, xs[0]), xs[-1])
    return CriticalValues(*(float(np.interp(x, xs, vals[:, j])) for j in range(4)))


def one_sided_test(estimate: float, rho_other_estimate: float, table: CriticalValueTable | None = None
                   ) -> TestDecision:
    """Test a tail correlation against zero with critical values for the other tail's estimate.

    A verdict needs a strict exceedance: an estimate equal to p95 is not
    significant at 5%.
    """
    if not (math.isfinite(estimate) and math.isfinite(rho_other_estimate)):
        raise ParameterError("estimates must be finite")
    table = CriticalValueTable.default() if table is None else table
    cv = interpolate_cv(table, rho_other_estimate)
    if estimate > cv.p95:
        verdict = POSITIVE_5
    elif estimate > cv.p90:
        verdict = POSITIVE_10
    elif estimate < cv.p05:
        verdict = NEGATIVE_5
    elif estimate < cv.p10:
        verdict = NEGATIVE_10
    else:
        verdict = NOT_SIGNIFICANT
    return TestDecision(float(estimate), float(rho_other_estimate), verdict, cv)
