"""AR(p)-GARCH(1,1) marginals with Student-t innovations.

    r(t) = mu + sum_i gamma_i r(t-i) + e(t),   e(t) = sigma(t) eps(t)
    sigma^2(t) = alpha0 + alpha1 e(t-1)^2 + beta1 sigma^2(t-1)

By default eps has unit variance (a t_nu variate scaled by sqrt((nu-2)/nu));
``scaling="unit_scale"`` treats eps as a plain t_nu variate instead.
The fit conditions on the first ``burn`` observations (burn >= p); the
variance recursion starts from the sample variance of the modeled returns,
which also stands in for the pre-sample e^2.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import optimize, special

from .errors import NumericalError, ParameterError
from .numerics import student_t_cdf

MIN_OBS = 150
MAX_AR = 5
N_RESTARTS = 5
PIT_CLAMP = 1e-6
_SCALINGS = ("unit_variance", "unit_scale")


@dataclass(frozen=True)
class GarchSpec:
    p: int = 0
    include_mean: bool = True

    def __post_init__(self):
        if not (0 <= int(self.p) <= MAX_AR) or int(self.p) != self.p:
            raise ParameterError(f"AR order must be an integer in [0, {MAX_AR}], got {self.p}")

    @property
    def n_params(self) -> int:
        return int(self.include_mean) + self.p + 4


@dataclass(frozen=True)
class GarchFit:
    spec: GarchSpec
    mu: float
    ar_coeffs: tuple
    alpha0: float
    alpha1: float
    beta1: float
    nu: float
    loglik: float
    aic: float
    std_residuals: np.ndarray = field(repr=False)
    sigma2: np.ndarray = field(repr=False)
    pit_values: np.ndarray = field(repr=False)
    burn: int = 0
    scaling: str = "unit_variance"
    stderr: dict = field(default_factory=dict)
    n_obs: int = 0


@njit(cache=True)
def _garch_filter(r, mu, gam, a0, a1, b1, burn, var0, e, s2):
    """Residuals e and conditional variances s2 for t >= burn (entries before burn untouched)."""
    p = gam.shape[0]
    prev_e2 = var0
    prev_s2 = var0
    for t in range(burn, r.shape[0]):
        m = mu
        for i in range(p):
            m += gam[i] * r[t - 1 - i]
        e[t] = r[t] - m
        if t == burn:
            s2[t] = var0
        else:
            s2[t] = a0 + a1 * prev_e2 + b1 * prev_s2
        prev_e2 = e[t] * e[t]
        prev_s2 = s2[t]


@njit(cache=True)
def _lgamma_half_step(a):
    """log Gamma(a + 1/2) - log Gamma(a), without cancellation for large a."""
    if a < 1e4:
        return math.lgamma(a + 0.5) - math.lgamma(a)
    return 0.5 * math.log(a) - 1.0 / (8.0 * a) + 1.0 / (192.0 * a ** 3)


@njit(cache=True)
def _garch_loglik(r, mu, gam, a0, a1, b1, nu, burn, var0, unit_var):
    n = r.shape[0]
    e = np.empty(n)
    s2 = np.empty(n)
    _garch_filter(r, mu, gam, a0, a1, b1, burn, var0, e, s2)
    scale = nu - 2.0 if unit_var else nu
    if not scale > 0.0:  # nu = 2 + exp(x) rounds to 2 for very negative x
        return -np.inf
    const = _lgamma_half_step(0.5 * nu) - 0.5 * math.log(math.pi * scale)
    ll = 0.0
    for t in range(burn, n):
        if not s2[t] > 0.0:
            return -np.inf
        ll += const - 0.5 * math.log(s2[t]) - 0.5 * (nu + 1.0) * math.log1p(e[t] * e[t] / (s2[t] * scale))
    return ll


def _check_returns(returns):
    r = np.ascontiguousarray(np.asarray(returns, dtype=float))
    if r.ndim != 1:
        raise ParameterError("returns must be one-dimensional")
    if r.size < MIN_OBS:
        raise ParameterError(f"need at least {MIN_OBS} returns, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise ParameterError(f"non-finite return at index {int(np.flatnonzero(~np.isfinite(r))[0])}")
    if np.var(r) <= 0:
        raise ParameterError("returns have zero variance")
    return r


def _logit(x):
    return math.log(x / (1.0 - x))


class _Model:
    """Maps between the unconstrained vector and (mu, gamma, a0, a1, b1, nu)."""

    def __init__(self, r, spec, burn, scaling):
        self.r = r
        self.spec = spec
        self.burn = burn
        self.unit_var = scaling == "unit_variance"
        self.var0 = float(np.var(r[burn:]))
        self.k = spec.n_params

    def natural(self, th):
        i = 0
        mu = th[0] if self.spec.include_mean else 0.0
        i += int(self.spec.include_mean)
        gam = np.asarray(th[i:i + self.spec.p], dtype=float)
        i += self.spec.p
        a0 = math.exp(th[i])
        pers = special.expit(th[i + 1])
        share = special.expit(th[i + 2])
        nu = 2.0 + math.exp(th[i + 3])
        return mu, gam, a0, pers * share, pers * (1.0 - share), nu

    def transformed(self, mu, gam, a0, a1, b1, nu):
        pers = a1 + b1
        head = [mu] if self.spec.include_mean else []
        return np.array(head + list(gam) + [math.log(a0), _logit(pers), _logit(a1 / pers), math.log(nu - 2.0)])

    def loglik_natural(self, mu, gam, a0, a1, b1, nu):
        return _garch_loglik(self.r, mu, np.ascontiguousarray(gam, dtype=float), a0, a1, b1, nu,
                             self.burn, self.var0, self.unit_var)

    def nll(self, th):
        if not np.all(np.isfinite(th)) or np.max(np.abs(th)) > 50:
            return 1e300
        ll = self.loglik_natural(*self.natural(th))
        return -ll if math.isfinite(ll) else 1e300

    def start(self):
        r, p, b = self.r, self.spec.p, self.burn
        y = r[b:]
        cols = [np.ones_like(y)] if self.spec.include_mean else []
        cols += [r[b - 1 - i:r.size - 1 - i] for i in range(p)]
        if cols:
            coef = np.linalg.lstsq(np.column_stack(cols), y, rcond=None)[0]
        else:
            coef = np.zeros(0)
        mu = coef[0] if self.spec.include_mean else 0.0
        gam = coef[int(self.spec.include_mean):]
        return self.transformed(mu, gam, 0.05 * self.var0, 0.05, 0.90, 8.0)


def _hessian(f, x, rel=1e-4):
    k = x.size
    h = rel * np.maximum(np.abs(x), 1e-2)
    H = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
    return H


def _stderr(model, mu, gam, a0, a1, b1, nu):
    """Standard errors of the natural parameters from the numerical Hessian of -loglik."""
    names = (["mu"] if model.spec.include_mean else []) + [f"ar{i + 1}" for i in range(model.spec.p)]
    names += ["alpha0", "alpha1", "beta1", "nu"]
    x = np.array(([mu] if model.spec.include_mean else []) + list(gam) + [a0, a1, b1, nu])
    p = model.spec.p
    im = int(model.spec.include_mean)

    def f(v):
        m = v[0] if im else 0.0
        return -model.loglik_natural(m, v[im:im + p], *v[im + p:])

    try:
        cov = np.linalg.inv(_hessian(f, x))
        d = np.diag(cov)
        se = np.where(d > 0, np.sqrt(np.abs(d)), np.nan)
    except np.linalg.LinAlgError:
        se = np.full(x.size, np.nan)
    return {k: float(v) for k, v in zip(names, se)}


def fit_garch(returns, spec: GarchSpec | None = None, *, burn: int | None = None,
              scaling: str = "unit_variance", restarts: int = N_RESTARTS, seed: int = 0) -> GarchFit:
    """Maximum likelihood AR(p)-GARCH(1,1)-t fit.

    The optimizer (L-BFGS) runs on transformed parameters from a least-squares
    start plus ``restarts`` perturbed starts; the best converged optimum wins.
    Raises NumericalError carrying the best parameters when none converges.
    """
    spec = GarchSpec() if spec is None else spec
    if scaling not in _SCALINGS:
        raise ParameterError(f"scaling must be one of {_SCALINGS}, got {scaling!r}")
    r = _check_returns(returns)
    burn = spec.p if burn is None else int(burn)
    if burn < spec.p:
        raise ParameterError(f"burn {burn} shorter than AR order {spec.p}")
    model = _Model(r, spec, burn, scaling)
    x0 = model.start()
    rng = np.random.default_rng(seed)
    starts = [x0] + [x0 + rng.normal(0.0, 0.5, x0.size) for _ in range(restarts)]
    best = None
    best_any = None
    for s in starts:
        res = optimize.minimize(model.nll, s, method="L-BFGS-B", options={"maxiter": 2000})
        if best_any is None or res.fun < best_any.fun:
            best_any = res
        ok = res.success or (res.status == 2 and res.fun < 1e299)  # status 2: line search stalled at optimum
        if ok and res.fun < 1e299 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise NumericalError("GARCH optimization did not converge", best=model.natural(best_any.x))
    mu, gam, a0, a1, b1, nu = model.natural(best.x)
    if not (a0 > 0 and a1 >= 0 and b1 >= 0 and a1 + b1 < 1 and nu > 2):
        raise NumericalError(f"GARCH optimum violates constraints: a0={a0}, a1={a1}, b1={b1}, nu={nu}",
                             best=(mu, gam, a0, a1, b1, nu))
    ll = -best.fun
    e = np.empty(r.size)
    s2 = np.empty(r.size)
    _garch_filter(r, mu, np.ascontiguousarray(gam), a0, a1, b1, burn, model.var0, e, s2)
    z = e[burn:] / np.sqrt(s2[burn:])
    for a in (z, s2):
        a.setflags(write=False)
    u = _pit(z, nu, scaling)
    return GarchFit(spec, float(mu), tuple(float(g) for g in gam), float(a0), float(a1), float(b1), float(nu),
                    float(ll), float(2 * spec.n_params - 2 * ll), z, s2[burn:].copy(), u, burn, scaling,
                    _stderr(model, mu, gam, a0, a1, b1, nu), r.size)


def _pit(z, nu, scaling):
    x = z * math.sqrt(nu / (nu - 2.0)) if scaling == "unit_variance" else z
    u = np.clip(student_t_cdf(x, nu), PIT_CLAMP, 1.0 - PIT_CLAMP)
    u.setflags(write=False)
    return u


def pit(fit: GarchFit) -> np.ndarray:
    """Uniforms F_t(eps_hat * sqrt(nu / (nu - 2)); nu), clamped to [1e-6, 1 - 1e-6]."""
    return _pit(np.asarray(fit.std_residuals), fit.nu, fit.scaling)


def ar_order_search(returns, max_p: int = MAX_AR, include_mean: bool = True, scaling: str = "unit_variance"):
    """Fit p = 0..max_p on a common sample (the first max_p observations are conditioned on).

    Returns {p: GarchFit or NumericalError}.
    """
    if not 0 <= max_p <= MAX_AR:
        raise ParameterError(f"max_p must be in [0, {MAX_AR}]")
    r = _check_returns(returns)
    out = {}
    for p in range(max_p + 1):
        try:
            out[p] = fit_garch(r, GarchSpec(p, include_mean), burn=max_p, scaling=scaling)
        except NumericalError as e:
            out[p] = e
    return out


def select_ar_order(returns, max_p: int = MAX_AR, include_mean: bool = True,
                    scaling: str = "unit_variance") -> GarchSpec:
    """AR order minimizing AIC = 2k - 2 loglik; ties go to the smaller order."""
    fits = ar_order_search(returns, max_p, include_mean, scaling)
    good = [(f.aic, p) for p, f in fits.items() if isinstance(f, GarchFit)]
    if not good:
        raise NumericalError(f"all AR orders 0..{max_p} failed to fit")
    return GarchSpec(min(good)[1], include_mean)


def simulate_garch(n: int, *, mu: float = 0.0, ar=(), alpha0: float = 0.05, alpha1: float = 0.1,
                   beta1: float = 0.85, nu: float = 6.0, seed=None, innovations=None,
                   burn_in: int = 500) -> np.ndarray:
    """Simulate n returns; ``innovations`` (unit variance, length n) overrides the t draws.

    Without ``innovations`` a burn-in period is simulated and discarded.
    """
    if not (alpha0 > 0 and alpha1 >= 0 and beta1 >= 0 and alpha1 + beta1 < 1 and nu > 2):
        raise ParameterError("GARCH parameters must satisfy alpha0 > 0, alpha1, beta1 >= 0, "
                             "alpha1 + beta1 < 1, nu > 2")
    ar = np.asarray(ar, dtype=float)
    if innovations is None:
        rng = np.random.default_rng(seed)
        eps = rng.standard_t(nu, n + burn_in) * math.sqrt((nu - 2.0) / nu)
        skip = burn_in
    else:
        eps = np.asarray(innovations, dtype=float)
        if eps.shape != (n,):
            raise ParameterError(f"innovations must have shape ({n},)")
        skip = 0
    return _simulate(eps, mu, ar, alpha0, alpha1, beta1)[skip:]


@njit(cache=True)
def _simulate(eps, mu, ar, a0, a1, b1):
    n = eps.shape[0]
    p = ar.shape[0]
    r = np.zeros(n)
    s2 = a0 / (1.0 - a1 - b1)
    e_prev = 0.0
    mean_r = mu / (1.0 - ar.sum()) if p else mu
    for t in range(n):
        if t > 0:
            s2 = a0 + a1 * e_prev * e_prev + b1 * s2
        m = mu
        for i in range(p):
            m += ar[i] * (r[t - 1 - i] if t - 1 - i >= 0 else mean_r)
        e_prev = math.sqrt(s2) * eps[t]
        r[t] = m + e_prev
    return r


REPORT_FIELDS = ("series", "p", "mu", "alpha0", "se_alpha0", "alpha1", "se_alpha1", "beta1", "se_beta1",
                 "nu", "se_nu", "loglik", "aic", "n_obs")


def fit_report(fits: dict) -> str:
    """CSV with one row per named fit: AR order, GARCH parameters with standard errors, nu."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for name, f in fits.items():
        se = f.stderr
        w.writerow([name, f.spec.p] + [repr(float(x)) for x in (
            f.mu, f.alpha0, se.get("alpha0", math.nan), f.alpha1, se.get("alpha1", math.nan),
            f.beta1, se.get("beta1", math.nan), f.nu, se.get("nu", math.nan), f.loglik, f.aic)] + [f.n_obs])
    return buf.getvalue()
