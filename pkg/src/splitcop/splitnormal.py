"""Bivariate split normal distribution.

Two zero-mean exchangeable bivariate normal halves joined along the line
w + v = 0.  The lower half has unit variance; the upper half's variance
and the two weights are implied by the correlations through the
height-matching and normalization conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ParameterError
from .numerics import _bvn_cdf, _Phi, _phi, bivariate_normal_cdf, std_normal_cdf, std_normal_pdf

RHO_BOUND = 0.995


@dataclass(frozen=True)
class SplitNormalParams:
    """Full parameterization of the split normal under sigma_L = 1.

    Build with :func:`complete_params`; the derived fields are not checked
    when the class is instantiated directly.
    """

    rho_u: float
    rho_l: float
    sigma_u_sq: float
    a_u: float
    a_l: float
    sigma_l_sq: float = 1.0

    @property
    def sigma_u(self) -> float:
        return math.sqrt(self.sigma_u_sq)


def _check_rho(name, rho):
    if not np.isfinite(rho) or abs(rho) > RHO_BOUND:
        raise ParameterError(f"{name}={rho!r} outside [-{RHO_BOUND}, {RHO_BOUND}]")


def complete_params(rho_u: float, rho_l: float) -> SplitNormalParams:
    """Derive sigma_U^2, a_U and a_L from the two tail correlations."""
    rho_u = float(rho_u)
    rho_l = float(rho_l)
    _check_rho("rho_u", rho_u)
    _check_rho("rho_l", rho_l)
    sigma_u_sq = (1.0 - rho_l) / (1.0 - rho_u)
    ratio = math.sqrt(1.0 - rho_l * rho_l) / (sigma_u_sq * math.sqrt(1.0 - rho_u * rho_u))
    a_u = 2.0 / (1.0 + ratio)
    return SplitNormalParams(rho_u, rho_l, sigma_u_sq, a_u, 2.0 - a_u)


@njit(cache=True)
def _log_joint_density(w, v, a_u, a_l, rho_u, rho_l, s2u):
    if w + v > 0.0:
        q = 1.0 - rho_u * rho_u
        return (math.log(a_u / (2.0 * math.pi * s2u * math.sqrt(q)))
                - ((w * w + v * v) - 2.0 * rho_u * (w * v)) / (2.0 * q * s2u))
    q = 1.0 - rho_l * rho_l
    return (math.log(a_l / (2.0 * math.pi * math.sqrt(q)))
            - ((w * w + v * v) - 2.0 * rho_l * (w * v)) / (2.0 * q))


@njit(cache=True)
def _marginal_density(w, a_u, a_l, rho_u, rho_l, s2u):
    su = math.sqrt(s2u)
    up = a_u / su * _phi(w / su) * _Phi(w * (1.0 + rho_u) / (su * math.sqrt(1.0 - rho_u * rho_u)))
    lo = a_l * _phi(w) * _Phi(-w * (1.0 + rho_l) / math.sqrt(1.0 - rho_l * rho_l))
    return up + lo


@njit(cache=True)
def _tail_upper(w, a_u, rho_u, s2u):
    su = math.sqrt(s2u)
    r = math.sqrt((1.0 + rho_u) / 2.0)
    z = w / su
    return a_u * max(0.0, _Phi(z) - _bvn_cdf(z, 0.0, r))


@njit(cache=True)
def _tail_lower(w, a_l, rho_l):
    return a_l * _bvn_cdf(w, 0.0, math.sqrt((1.0 + rho_l) / 2.0))


@njit(cache=True)
def _marginal_cdf_vec(w, a_u, a_l, rho_u, rho_l, s2u, out):
    for i in range(w.shape[0]):
        out[i] = _tail_upper(w[i], a_u, rho_u, s2u) + _tail_lower(w[i], a_l, rho_l)
    return out


def _unpack(p: SplitNormalParams):
    return p.a_u, p.a_l, p.rho_u, p.rho_l, p.sigma_u_sq


def _scalar(out):
    return out if out.ndim else float(out)


def joint_density(p: SplitNormalParams, w, v):
    """Split normal density f(w, v); broadcasts over ``w`` and ``v``."""
    w, v = np.broadcast_arrays(np.asarray(w, dtype=float), np.asarray(v, dtype=float))
    upper = w + v > 0
    rho = np.where(upper, p.rho_u, p.rho_l)
    s2 = np.where(upper, p.sigma_u_sq, p.sigma_l_sq)
    a = np.where(upper, p.a_u, p.a_l)
    q = 1.0 - rho * rho
    out = a / (2.0 * np.pi * s2 * np.sqrt(q)) * np.exp(-((w * w + v * v) - 2.0 * rho * (w * v)) / (2.0 * q * s2))
    return _scalar(out)


def tail_prob_upper(p: SplitNormalParams, w):
    """P(W < w, W + V > 0).

    The pair (Z1, Z1 + Z2) of the upper normal piece is standardized to a
    unit bivariate normal with correlation sqrt((1 + rho_U) / 2), so the
    event is P(Z1/sigma_U < w/sigma_U) - P(Z1/sigma_U < w/sigma_U, S < 0).
    """
    z = np.asarray(w, dtype=float) / p.sigma_u
    r = math.sqrt((1.0 + p.rho_u) / 2.0)
    out = p.a_u * np.maximum(0.0, std_normal_cdf(z) - bivariate_normal_cdf(z, 0.0, r))
    return _scalar(np.asarray(out))


def tail_prob_lower(p: SplitNormalParams, w):
    """P(W < w, W + V <= 0)."""
    r = math.sqrt((1.0 + p.rho_l) / 2.0)
    out = p.a_l * np.asarray(bivariate_normal_cdf(np.asarray(w, dtype=float), 0.0, r))
    return _scalar(out)


def marginal_cdf(p: SplitNormalParams, w):
    """F_W(w) as the sum of the two tail probabilities."""
    w = np.asarray(w, dtype=float)
    flat = np.ascontiguousarray(w.ravel())
    out = _marginal_cdf_vec(flat, *_unpack(p), np.empty(flat.size)).reshape(w.shape)
    return _scalar(out)


def marginal_density_analytic(p: SplitNormalParams, w):
    """Closed-form marginal density f_W(w).

    Integrating each half over v with the conditional normal
    V | W = w ~ N(rho w, sigma^2 (1 - rho^2)) gives
    a_U/sigma_U phi(w/sigma_U) Phi(w (1+rho_U) / (sigma_U sqrt(1-rho_U^2)))
    + a_L phi(w) Phi(-w (1+rho_L) / sqrt(1-rho_L^2)).
    """
    w = np.asarray(w, dtype=float)
    su = p.sigma_u
    up = p.a_u / su * std_normal_pdf(w / su) * std_normal_cdf(
        w * (1.0 + p.rho_u) / (su * math.sqrt(1.0 - p.rho_u**2)))
    lo = p.a_l * std_normal_pdf(w) * std_normal_cdf(-w * (1.0 + p.rho_l) / math.sqrt(1.0 - p.rho_l**2))
    return _scalar(np.asarray(up + lo))


def _piece_draws(rng, n, rho, s2):
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    s = math.sqrt(s2)
    w = s * z1
    v = s * (rho * z1 + math.sqrt(1.0 - rho * rho) * z2)
    return w, v


def sample(p: SplitNormalParams, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` i.i.d. pairs from the split normal; returns an (n, 2) array.

    The half is chosen with probability a_U/2 (upper) or a_L/2 (lower); a
    draw from that half's full normal which falls on the wrong side of
    w + v = 0 is reflected through the origin, which is exact because each
    piece is symmetric about the origin.
    """
    if n < 1:
        raise ParameterError("sample size must be at least 1")
    rng = np.random.default_rng(seed)
    upper = rng.random(n) < p.a_u / 2.0
    wu, vu = _piece_draws(rng, n, p.rho_u, p.sigma_u_sq)
    wl, vl = _piece_draws(rng, n, p.rho_l, p.sigma_l_sq)
    w = np.where(upper, wu, wl)
    v = np.where(upper, vu, vl)
    flip = np.where(upper, w + v <= 0, w + v > 0)
    w = np.where(flip, -w, w)
    v = np.where(flip, -v, v)
    return np.column_stack([w, v])
