"""Doubly-robust estimation of the treatment coefficient in a partially
linear logistic model.

The model is logit P(Y = 1 | A, X) = theta * A + m0(X) with binary Y and a
real (possibly continuous) treatment A.  With v(X) = E(A | Y = 0, X), theta
solves the population moment

    E[(A - v(X)) (Y e^{-theta A - m0(X)} - (1 - Y))] = 0.

:func:`plm_moment` evaluates the empirical moment minus a pairwise kernel
correction that plays the same role as the corrections in
:mod:`drustat.estimators`: it localizes in the fitted nuisance coordinates
(v_hat, m_hat) with a product kernel, normalized by the leave-self-out
kernel density of Y = 0 units.  :func:`solve_theta` finds the root by
Brent's method and reports a sandwich standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .core import fit_logistic, fit_ols, is_binary, _read_csv_columns, _covariate_columns
from .estimators import _argmin_smallest
from .errors import (
    ALL_QHAT_ZERO,
    BAD_INPUT,
    DEGENERATE_MOMENT,
    MISMATCHED_LENGTH,
    NO_SIGN_CHANGE,
    NONFINITE_VALUE,
    EstimationError,
    ValidationError,
)
from .kernels import DEFAULT_QFLOOR, MODE_2D, KernelSpec, PairStats, kh, pair_stats

_BRACKET_START = 5.0
_BRACKET_MAX = 50.0
_MOMENT_TOL = 1e-10


@dataclass(frozen=True)
class PlmData:
    """Observations (y, a, x) with per-unit nuisance values v_hat and m_hat.

    ``v_hat`` estimates E(A | Y = 0, X); ``m_hat`` estimates the log-odds
    function m0(X).
    """

    y: np.ndarray
    a: np.ndarray
    x: np.ndarray
    v_hat: np.ndarray
    m_hat: np.ndarray

    def __post_init__(self):
        for name in ("y", "a", "v_hat", "m_hat"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "x", np.atleast_2d(np.asarray(self.x, dtype=float)))
        n = len(self.y)
        if not (len(self.a) == n == len(self.v_hat) == len(self.m_hat) == self.x.shape[0]):
            raise ValidationError(MISMATCHED_LENGTH, "plm columns have differing lengths")
        if n < 2:
            raise ValidationError(BAD_INPUT, "need n >= 2")
        if not is_binary(self.y):
            raise ValidationError(BAD_INPUT, "y must be binary 0/1")
        for name in ("y", "a", "v_hat", "m_hat"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(NONFINITE_VALUE, f"{name} contains NaN/Inf")
        if not np.all(np.isfinite(self.x)):
            raise ValidationError(NONFINITE_VALUE, "x contains NaN/Inf")

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class PlmReport:
    """Root, sandwich standard error, and solver diagnostics."""

    theta_hat: float
    se: float
    ci: tuple[float, float]
    alpha: float
    bracket: tuple[float, float]
    iterations: int
    correction: float
    moment_at_solution: float
    h_used: float
    min_qhat: float
    clamp_count: int
    n: int

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat,
            "se": self.se,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "alpha": self.alpha,
            "bracket_lo": self.bracket[0],
            "bracket_hi": self.bracket[1],
            "iterations": self.iterations,
            "correction": self.correction,
            "moment_at_solution": self.moment_at_solution,
            "h_used": self.h_used,
            "min_qhat": None if np.isnan(self.min_qhat) else self.min_qhat,
            "clamp_count": self.clamp_count,
            "n": self.n,
        }


def _left_residual(theta: float, data: PlmData) -> np.ndarray:
    # e^{-theta a - m_hat} y - (1 - y)
    return np.exp(-theta * data.a - data.m_hat) * data.y - (1.0 - data.y)


def _right_residual(data: PlmData) -> np.ndarray:
    return (1.0 - data.y) * (data.a - data.v_hat)


def _correction_stats(
    theta: float,
    data: PlmData,
    spec: KernelSpec,
    qfloor: float,
    force_naive: bool,
) -> PairStats:
    return pair_stats(
        MODE_2D,
        (data.v_hat, data.m_hat),
        1.0 - data.y,
        _left_residual(theta, data),
        _right_residual(data),
        spec,
        qfloor=qfloor,
        force_naive=force_naive,
    )


def pn_moment(theta: float, data: PlmData) -> float:
    """The uncorrected empirical moment P_n[(A - v_hat)(Y e^{-theta A - m_hat} - (1-Y))]."""
    return float(np.mean((data.a - data.v_hat) * _left_residual(theta, data)))


def pn_moment_derivative(theta: float, data: PlmData) -> float:
    """Closed-form theta-derivative of the uncorrected moment."""
    return float(
        -np.mean(data.a * (data.a - data.v_hat) * data.y * np.exp(-theta * data.a - data.m_hat))
    )


def plm_moment(
    theta: float,
    data: PlmData,
    spec: KernelSpec,
    qfloor: float = DEFAULT_QFLOOR,
    force_naive: bool = False,
) -> float:
    """Corrected moment: the empirical moment minus the pairwise correction."""
    stats = _correction_stats(theta, data, spec, qfloor, force_naive)
    if stats.all_qhat_zero:
        raise EstimationError(
            ALL_QHAT_ZERO, "every kernel density normalizer is zero; bandwidth too small"
        )
    n = data.n
    return pn_moment(theta, data) - stats.total / (n * (n - 1))


def moment_is_degenerate(data: PlmData) -> bool:
    """True when the moment cannot pin down theta.

    The moment depends on theta only through units with Y = 1 and A != 0;
    it is identically zero when A coincides with v_hat everywhere (both the
    mean term and the correction's right residual vanish).
    """
    theta_free = not np.any((data.y == 1.0) & (data.a != 0.0))
    residual_free = bool(np.all(data.a == data.v_hat))
    return theta_free or residual_free


def default_plm_bandwidth(data: PlmData) -> float:
    """Rate default matching the two-kernel correction: n^{-1/4} times the
    geometric-mean interquartile range of (v_hat, m_hat)."""

    def scale(v):
        q75, q25 = np.percentile(v, [75, 25])
        s = float(q75 - q25)
        if s > 0:
            return s
        s = float(np.std(v))
        return s if s > 0 else 1.0

    return data.n ** -0.25 * math.sqrt(scale(data.v_hat) * scale(data.m_hat))


def select_plm_bandwidth_cv(data: PlmData, grid=None, family: str = "box") -> float:
    """Leave-one-out CV bandwidth for the local regression of the Y = 0
    residual (A - v_hat) on (v_hat, m_hat); ties (up to floating-point
    noise) break toward the smallest h."""
    controls = data.y == 0.0
    if int(controls.sum()) < 2:
        raise ValidationError(BAD_INPUT, "bandwidth CV needs >= 2 units with y = 0")
    resid = (data.a - data.v_hat)[controls]
    c1 = data.v_hat[controls]
    c2 = data.m_hat[controls]
    if grid is None:
        h0 = default_plm_bandwidth(data)
        grid = np.geomspace(0.1 * h0, 2.0 * h0, 16)
    hs = np.sort(np.asarray(list(grid), dtype=float))
    fallback = float(np.mean(resid))
    d1 = np.abs(c1[None, :] - c1[:, None])
    d2 = np.abs(c2[None, :] - c2[:, None])
    cheb = np.maximum(d1, d2)
    np.fill_diagonal(cheb, np.inf)
    if family == "box":
        order = np.argsort(cheb, axis=1)
        cheb_sorted = np.take_along_axis(cheb, order, axis=1)
        resid_cum = np.cumsum(resid[order], axis=1)
        scores = np.empty(len(hs))
        for g, h in enumerate(hs):
            counts = (cheb_sorted <= h).sum(axis=1)
            sums = np.where(
                counts > 0,
                resid_cum[np.arange(len(resid)), np.maximum(counts - 1, 0)],
                0.0,
            )
            pred = np.where(counts > 0, sums / np.maximum(counts, 1), fallback)
            scores[g] = np.mean((resid - pred) ** 2)
    else:
        scores = np.empty(len(hs))
        eye = np.eye(len(resid), dtype=bool)
        for g, h in enumerate(hs):
            spec = KernelSpec(family=family, h=float(h))
            w = np.asarray(kh(spec, d1)) * np.asarray(kh(spec, d2))
            w[eye] = 0.0
            den = w.sum(axis=1)
            pred = np.where(den > 0, (w @ resid) / np.where(den > 0, den, 1.0), fallback)
            scores[g] = np.mean((resid - pred) ** 2)
    return float(hs[_argmin_smallest(scores)])


def solve_theta(
    data: PlmData,
    spec: Optional[KernelSpec] = None,
    bracket: Optional[tuple[float, float]] = None,
    alpha: float = 0.05,
    qfloor: float = DEFAULT_QFLOOR,
    force_naive: bool = False,
    family: str = "box",
    h=None,
) -> PlmReport:
    """Solve the corrected moment for theta by Brent's method.

    The bracket defaults to [-5, 5] and is doubled geometrically up to
    [-50, 50] until the moment changes sign.  The standard error is the
    sandwich sd(zeta) / (sqrt(n) |d moment / d theta|), where zeta are the
    per-observation moment contributions with the correction's empirical
    Hajek projection removed and the derivative is a central difference.
    """
    if moment_is_degenerate(data):
        raise EstimationError(
            DEGENERATE_MOMENT, "the moment does not depend on theta for these inputs"
        )
    if spec is None:
        if h == "cv":
            h_used = select_plm_bandwidth_cv(data, family=family)
        elif h is None:
            h_used = default_plm_bandwidth(data)
        else:
            h_used = float(h)
        spec = KernelSpec(family=family, h=h_used)

    # the kernel weights and normalizers do not depend on theta, so hoist
    # them out of the root-finding loop: with unit left weights the row sums
    # give w_i = Q~_i^{-1} sum_{j != i} K_ij right_j, and the correction at
    # any theta is sum_i left_i(theta) w_i / (n (n-1))
    n = data.n
    ones_stats = pair_stats(
        MODE_2D, (data.v_hat, data.m_hat), 1.0 - data.y, np.ones(n),
        _right_residual(data), spec, qfloor=qfloor, force_naive=force_naive,
    )
    if ones_stats.all_qhat_zero:
        raise EstimationError(
            ALL_QHAT_ZERO, "every kernel density normalizer is zero; bandwidth too small"
        )
    row_weights = ones_stats.row

    def f(theta: float) -> float:
        correction = float(np.dot(_left_residual(theta, data), row_weights)) / (n * (n - 1))
        return pn_moment(theta, data) - correction

    if bracket is None:
        lo, hi = -_BRACKET_START, _BRACKET_START
    else:
        lo, hi = float(bracket[0]), float(bracket[1])
    flo, fhi = f(lo), f(hi)
    while flo * fhi > 0.0:
        if lo <= -_BRACKET_MAX and hi >= _BRACKET_MAX:
            raise EstimationError(
                NO_SIGN_CHANGE,
                f"moment has no sign change on [{lo}, {hi}]",
            )
        # double the bracket width about its center, capped at +/- 50
        center, half = 0.5 * (lo + hi), hi - lo
        lo = max(center - half, -_BRACKET_MAX)
        hi = min(center + half, _BRACKET_MAX)
        flo, fhi = f(lo), f(hi)

    theta_hat, res = brentq(
        f, lo, hi, xtol=1e-14, rtol=4.0 * np.finfo(float).eps, full_output=True
    )
    iterations = int(res.iterations)
    moment_val = f(theta_hat)
    # polish if the bracket converged in x but not in |moment|
    for _ in range(10):
        if abs(moment_val) <= _MOMENT_TOL:
            break
        step = 1e-6 * (1.0 + abs(theta_hat))
        deriv = (f(theta_hat + step) - f(theta_hat - step)) / (2.0 * step)
        if deriv == 0.0 or not np.isfinite(deriv):
            break
        theta_hat -= moment_val / deriv
        moment_val = f(theta_hat)
        iterations += 1

    stats = _correction_stats(theta_hat, data, spec, qfloor, force_naive)
    t_value = stats.total / (n * (n - 1))
    contrib = (data.a - data.v_hat) * _left_residual(theta_hat, data)
    u = (stats.row + stats.col) / (n - 1) - t_value
    zeta = contrib - u
    fd = 1e-5 * (1.0 + abs(theta_hat))
    slope = (f(theta_hat + fd) - f(theta_hat - fd)) / (2.0 * fd)
    if slope == 0.0 or not np.isfinite(slope):
        raise EstimationError(DEGENERATE_MOMENT, "moment derivative vanishes at the root")
    se = float(np.std(zeta, ddof=1)) / (math.sqrt(n) * abs(slope))
    z = float(norm.ppf(1.0 - alpha / 2.0))
    return PlmReport(
        theta_hat=float(theta_hat),
        se=se,
        ci=(theta_hat - z * se, theta_hat + z * se),
        alpha=alpha,
        bracket=(lo, hi),
        iterations=iterations,
        correction=t_value,
        moment_at_solution=float(moment_val),
        h_used=spec.h,
        min_qhat=stats.min_qhat,
        clamp_count=stats.clamp_count,
        n=n,
    )


def fit_v_hat(y: np.ndarray, a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Regress A on X among Y = 0 units: logistic for binary A, else least squares."""
    controls = np.asarray(y, dtype=float) == 0.0
    if not np.any(controls):
        raise ValidationError(BAD_INPUT, "no y = 0 units to fit v_hat")
    a = np.asarray(a, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if is_binary(a):
        return fit_logistic(x[controls], a[controls]).predict_proba(x)
    coef = fit_ols(x[controls], a[controls])
    return coef[0] + x @ coef[1:]


def fit_m_hat(y: np.ndarray, a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Fitted log-odds of Y on X among A = 0 units; requires binary A."""
    a = np.asarray(a, dtype=float)
    if not is_binary(a):
        raise ValidationError(
            BAD_INPUT, "m_hat must be supplied when the treatment is not binary"
        )
    untreated = a == 0.0
    if not np.any(untreated):
        raise ValidationError(BAD_INPUT, "no a = 0 units to fit m_hat")
    y = np.asarray(y, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return fit_logistic(x[untreated], y[untreated]).linear_index(x)


def load_plm_csv(path: str) -> PlmData:
    """Read columns ``y, a, x1..xd`` plus optional ``v_hat, m_hat``.

    Either nuisance column may be omitted, in which case it is fitted with
    the built-in learner (:func:`fit_v_hat` / :func:`fit_m_hat`).
    """
    cols = _read_csv_columns(path, required=("y", "a"))
    xcols = _covariate_columns(list(cols))
    x = np.column_stack([cols[c] for c in xcols])
    v_hat = cols["v_hat"] if "v_hat" in cols else fit_v_hat(cols["y"], cols["a"], x)
    m_hat = cols["m_hat"] if "m_hat" in cols else fit_m_hat(cols["y"], cols["a"], x)
    return PlmData(y=cols["y"], a=cols["a"], x=x, v_hat=v_hat, m_hat=m_hat)
