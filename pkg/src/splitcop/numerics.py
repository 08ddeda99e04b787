"""Scalar numerical kernels shared by the rest of the package.

Univariate and bivariate normal probabilities, the Student-t CDF, and a
monotone (Fritsch-Carlson) cubic Hermite spline.  The hot paths are
compiled with numba; the public wrappers validate arguments and accept
scalars or arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import special

from .errors import ParameterError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_TWOPI = 2.0 * math.pi

# Gauss-Legendre half-rules (abscissae in (0, 1) and weights) for n = 6, 12, 20.
_GL_X6 = np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970])
_GL_W6 = np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904])
_GL_X12 = np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                    0.5873179542866171, 0.3678314989981802, 0.1252334085114692])
_GL_W12 = np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                    0.2031674267230659, 0.2334925365383547, 0.2491470458134029])
_GL_X20 = np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                    0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                    0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                    0.07652652113349733])
_GL_W20 = np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                    0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                    0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                    0.1527533871307259])


@njit(cache=True)
def _phi(x):
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


@njit(cache=True)
def _Phi(x):
    return 0.5 * math.erfc(-x / _SQRT2)


@njit(cache=True)
def _bvn_upper(dh, dk, r):
    """P(X > dh, Y > dk) for a standard bivariate normal with correlation r.

    Drezner-Wesolowsky with Genz's double-precision treatment of |r| near 1.
    """
    if dh == np.inf or dk == np.inf:
        return 0.0
    if dh == -np.inf:
        if dk == -np.inf:
            return 1.0
        return _Phi(-dk)
    if dk == -np.inf:
        return _Phi(-dh)
    if r == 0.0:
        return _Phi(-dh) * _Phi(-dk)

    ar = abs(r)
    if ar < 0.3:
        x = _GL_X6
        w = _GL_W6
    elif ar < 0.75:
        x = _GL_X12
        w = _GL_W12
    else:
        x = _GL_X20
        w = _GL_W20
    lg = x.shape[0]

    h = dh
    k = dk
    hk = h * k
    bvn = 0.0
    if ar < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(r)
        for i in range(lg):
            sn = math.sin(asr * (1.0 - x[i]) / 2.0)
            bvn += w[i] * math.exp((sn * hk - hs) / (1.0 - sn * sn))
            sn = math.sin(asr * (1.0 + x[i]) / 2.0)
            bvn += w[i] * math.exp((sn * hk - hs) / (1.0 - sn * sn))
        bvn = bvn * asr / (4.0 * math.pi) + _Phi(-h) * _Phi(-k)
    else:
        if r < 0.0:
            k = -k
            hk = -hk
        if ar < 1.0:
            a2 = (1.0 - r) * (1.0 + r)
            a = math.sqrt(a2)
            bs = (h - k) ** 2
            c = (4.0 - hk) / 8.0
            d = (12.0 - hk) / 16.0
            asr = -(bs / a2 + hk) / 2.0
            if asr > -100.0:
                bvn = a * math.exp(asr) * (
                    1.0 - c * (bs - a2) * (1.0 - d * bs / 5.0) / 3.0
                    + c * d * a2 * a2 / 5.0
                )
            if -hk < 100.0:
                b = math.sqrt(bs)
                sp = math.sqrt(_TWOPI) * _Phi(-b / a)
                bvn -= math.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
            a = a / 2.0
            for i in range(lg):
                for sgn in (-1.0, 1.0):
                    xs = (a * (sgn * x[i] + 1.0)) ** 2
                    rs = math.sqrt(1.0 - xs)
                    asr = -(bs / xs + hk) / 2.0
                    if asr > -100.0:
                        sp = 1.0 + c * xs * (1.0 + d * xs)
                        ep = math.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                        bvn += a * w[i] * math.exp(asr) * (ep - sp)
            bvn = -bvn / _TWOPI
        if r > 0.0:
            bvn += _Phi(-max(h, k))
        else:
            bvn = -bvn + max(0.0, _Phi(-h) - _Phi(-k))
    return min(1.0, max(0.0, bvn))


@njit(cache=True)
def _bvn_cdf(h, k, r):
    return _bvn_upper(-h, -k, r)


@njit(cache=True)
def _bvn_cdf_vec(h, k, r, out):
    for i in range(h.shape[0]):
        out[i] = _bvn_upper(-h[i], -k[i], r[i])
    return out


def std_normal_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return out if out.ndim else float(out)


def std_normal_cdf(x):
    """Standard normal CDF, computed as erfc(-x/sqrt 2)/2."""
    out = 0.5 * special.erfc(-np.asarray(x, dtype=float) / _SQRT2)
    return out if out.ndim else float(out)


def bivariate_normal_cdf(h, k, r):
    """P(Z1 <= h, Z2 <= k) for standard normals with correlation ``r``.

    ``h`` and ``k`` may be +/-inf to express half-plane probabilities.
    All three arguments broadcast.
    """
    h, k, r = np.broadcast_arrays(np.asarray(h, dtype=float),
                                  np.asarray(k, dtype=float),
                                  np.asarray(r, dtype=float))
    if np.any(~(np.abs(r) < 1.0)):
        raise ParameterError("bivariate normal correlation must lie in (-1, 1)")
    if np.any(np.isnan(h)) or np.any(np.isnan(k)):
        raise ParameterError("bivariate normal limits must not be NaN")
    shape = h.shape
    out = np.empty(h.size)
    _bvn_cdf_vec(h.ravel().copy(), k.ravel().copy(), r.ravel().copy(), out)
    out = out.reshape(shape)
    return out if out.ndim else float(out)


def student_t_cdf(x, nu):
    """CDF of the unit-scale Student-t with ``nu`` degrees of freedom.

    Uses the regularized incomplete beta function
    I_{nu/(nu+x^2)}(nu/2, 1/2).
    """
    nu = np.asarray(nu, dtype=float)
    if np.any(~(nu > 0)):
        raise ParameterError("degrees of freedom must be positive")
    x = np.asarray(x, dtype=float)
    tail = 0.5 * special.betainc(nu / 2.0, 0.5, nu / (nu + x * x))
    out = np.where(x > 0, 1.0 - tail, tail)
    return out if out.ndim else float(out)


# --- monotone cubic Hermite spline -------------------------------------------


@njit(cache=True)
def _fc_limit(knots, values, m):
    """Fritsch-Carlson limiter: forces each interval's cubic to be monotone."""
    n = knots.shape[0]
    for i in range(n - 1):
        delta = (values[i + 1] - values[i]) / (knots[i + 1] - knots[i])
        if delta == 0.0:
            m[i] = 0.0
            m[i + 1] = 0.0
            continue
        a = m[i] / delta
        b = m[i + 1] / delta
        if a < 0.0:
            m[i] = 0.0
            a = 0.0
        if b < 0.0:
            m[i + 1] = 0.0
            b = 0.0
        s = a * a + b * b
        if s > 9.0:
            t = 3.0 / math.sqrt(s)
            m[i] = t * a * delta
            m[i + 1] = t * b * delta
    return m


@njit(cache=True)
def _fc_slopes(knots, values):
    n = knots.shape[0]
    h = np.empty(n - 1)
    d = np.empty(n - 1)
    for i in range(n - 1):
        h[i] = knots[i + 1] - knots[i]
        d[i] = (values[i + 1] - values[i]) / h[i]
    m = np.empty(n)
    for i in range(1, n - 1):
        if d[i - 1] * d[i] <= 0.0:
            m[i] = 0.0
        else:
            # three-point (non-uniform) estimate
            m[i] = (h[i] * d[i - 1] + h[i - 1] * d[i]) / (h[i - 1] + h[i])
    m[0] = ((2.0 * h[0] + h[1]) * d[0] - h[0] * d[1]) / (h[0] + h[1])
    if m[0] * d[0] <= 0.0:
        m[0] = 0.0
    m[n - 1] = ((2.0 * h[n - 2] + h[n - 3]) * d[n - 2] - h[n - 2] * d[n - 3]) / (h[n - 2] + h[n - 3])
    if m[n - 1] * d[n - 2] <= 0.0:
        m[n - 1] = 0.0
    return _fc_limit(knots, values, m)


@njit(cache=True)
def _locate(knots, x):
    """Index i with knots[i] <= x < knots[i+1], x assumed inside the range."""
    lo = 0
    hi = knots.shape[0] - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if knots[mid] <= x:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def _hermite_eval(knots, values, slopes, x):
    n = knots.shape[0]
    if x <= knots[0]:
        return values[0]
    if x >= knots[n - 1]:
        return values[n - 1]
    i = _locate(knots, x)
    h = knots[i + 1] - knots[i]
    t = (x - knots[i]) / h
    t2 = t * t
    t3 = t2 * t
    return ((2.0 * t3 - 3.0 * t2 + 1.0) * values[i]
            + (t3 - 2.0 * t2 + t) * h * slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * values[i + 1]
            + (t3 - t2) * h * slopes[i + 1])


@njit(cache=True)
def _hermite_deriv(knots, values, slopes, x):
    n = knots.shape[0]
    if x < knots[0] or x > knots[n - 1]:
        return 0.0
    if x == knots[n - 1]:
        return slopes[n - 1]
    i = _locate(knots, x)
    h = knots[i + 1] - knots[i]
    t = (x - knots[i]) / h
    t2 = t * t
    return ((6.0 * t2 - 6.0 * t) * (values[i] - values[i + 1]) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * slopes[i]
            + (3.0 * t2 - 2.0 * t) * slopes[i + 1])


@njit(cache=True)
def _hermite_eval_vec(knots, values, slopes, x, out):
    for j in range(x.shape[0]):
        out[j] = _hermite_eval(knots, values, slopes, x[j])
    return out


@njit(cache=True)
def _hermite_deriv_vec(knots, values, slopes, x, out):
    for j in range(x.shape[0]):
        out[j] = _hermite_deriv(knots, values, slopes, x[j])
    return out


@dataclass(frozen=True)
class Spline:
    """Piecewise cubic Hermite interpolant with monotonicity-limited slopes.

    Construct through :func:`spline_fit`.  Outside the knot range the
    interpolant is clamped to the end values and its derivative is zero.
    """

    knots: np.ndarray
    values: np.ndarray
    slopes: np.ndarray

    def __call__(self, x):
        return spline_eval(self, x)

    def derivative(self, x):
        return spline_deriv(self, x)


def spline_fit(knots, values, slopes=None) -> Spline:
    """Fit a monotonicity-preserving cubic Hermite spline.

    Parameters
    ----------
    knots, values : array_like
        Strictly increasing abscissae (at least 4) and ordinates.
    slopes : array_like, optional
        Known derivatives at the knots.  When omitted they are estimated by
        three-point differences.  In both cases the Fritsch-Carlson limiter is
        applied, so monotone data always give a monotone interpolant.
    """
    knots = np.array(knots, dtype=float)
    values = np.array(values, dtype=float)
    if knots.ndim != 1 or values.shape != knots.shape:
        raise ParameterError("knots and values must be 1-D arrays of equal length")
    if knots.size < 4:
        raise ParameterError("spline needs at least 4 knots")
    if not np.all(np.isfinite(knots)) or not np.all(np.isfinite(values)):
        raise ParameterError("spline knots and values must be finite")
    if np.any(np.diff(knots) <= 0):
        raise ParameterError("spline knots must be strictly increasing")
    if slopes is None:
        m = _fc_slopes(knots, values)
    else:
        m = np.array(slopes, dtype=float)
        if m.shape != knots.shape:
            raise ParameterError("slopes must match knots in length")
        m = _fc_limit(knots, values, m)
    for arr in (knots, values, m):
        arr.setflags(write=False)
    return Spline(knots, values, m)


def spline_eval(s: Spline, x):
    x = np.asarray(x, dtype=float)
    flat = np.ascontiguousarray(x.ravel())
    out = _hermite_eval_vec(s.knots, s.values, s.slopes, flat, np.empty(flat.size)).reshape(x.shape)
    return out if out.ndim else float(out)


def spline_deriv(s: Spline, x):
    x = np.asarray(x, dtype=float)
    flat = np.ascontiguousarray(x.ravel())
    out = _hermite_deriv_vec(s.knots, s.values, s.slopes, flat, np.empty(flat.size)).reshape(x.shape)
    return out if out.ndim else float(out)
