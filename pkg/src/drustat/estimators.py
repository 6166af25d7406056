"""Counterfactual-mean estimators with kernel U-statistic bias corrections.

Four estimators of psi = E{mu(X)} are provided.  ``aipw`` is the classical
augmented-IPW estimator, the sample mean of

    phi_i = a_i * omega_hat_i * (y_i - mu_hat_i) + mu_hat_i.

The ``omega``, ``mu`` and ``main`` methods subtract a pairwise correction
T = [n(n-1)]^{-1} sum_{i != j} kappa_ij from the AIPW value, where

    kappa_ij = (a_i omega_hat_i - 1) * kernelterm_ij * a_j (y_j - mu_hat_j)

and the kernel term localizes in omega_hat (``omega``), in mu_hat with a
leave-i-out normalizer centered at j (``mu``), or in both coordinates with a
product kernel (``main``).  Standard errors come from the empirical Hajek
projection of the U-statistic: with u_i the projected contribution of
observation i, the influence values zeta_i = phi_i - u_i satisfy
mean(zeta) = psi_hat exactly, and se = sd(zeta) / sqrt(n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import norm

from .core import Dataset, NuisanceValues, validate
from .errors import (
    ALL_QHAT_ZERO,
    BAD_INPUT,
    TOO_FEW_TREATED,
    EstimationError,
    ValidationError,
)
from .kernels import (
    DEFAULT_QFLOOR,
    MODE_2D,
    MODE_MU_LOO,
    MODE_OMEGA,
    KernelSpec,
    PairStats,
    kh,
    pair_stats,
)

METHODS = ("aipw", "omega", "mu", "main")
CORRECTED_METHODS = ("omega", "mu", "main")

_METHOD_MODE = {"omega": MODE_OMEGA, "mu": MODE_MU_LOO, "main": MODE_2D}


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate, Wald interval and correction diagnostics."""

    method: str
    psi_hat: float
    se: float
    ci: tuple[float, float]
    alpha: float
    h_used: Optional[float]
    correction: float
    min_qhat: float
    clamp_count: int
    n: int

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "psi_hat": self.psi_hat,
            "se": self.se,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "alpha": self.alpha,
            "h_used": self.h_used,
            "correction": self.correction,
            "min_qhat": None if np.isnan(self.min_qhat) else self.min_qhat,
            "clamp_count": self.clamp_count,
            "n": self.n,
        }


def phi_values(data: Dataset, nuis: NuisanceValues) -> np.ndarray:
    """Uncentered influence-function values a*omega*(y - mu) + mu."""
    return data.a * nuis.omega_hat * (data.y - nuis.mu_hat) + nuis.mu_hat


def aipw(data: Dataset, nuis: NuisanceValues) -> float:
    """Augmented-IPW (doubly-robust) estimate: the sample mean of phi."""
    validate(data, nuis)
    return float(np.mean(phi_values(data, nuis)))


def _method_pair_stats(
    method: str,
    data: Dataset,
    nuis: NuisanceValues,
    spec: KernelSpec,
    qfloor: float,
    force_naive: bool,
) -> PairStats:
    left = data.a * nuis.omega_hat - 1.0
    right = data.a * (data.y - nuis.mu_hat)
    if method == "omega":
        centers: object = nuis.omega_hat
    elif method == "mu":
        centers = nuis.mu_hat
    elif method == "main":
        centers = (nuis.omega_hat, nuis.mu_hat)
    else:
        raise ValidationError(BAD_INPUT, f"unknown corrected method '{method}'")
    return pair_stats(
        _METHOD_MODE[method], centers, data.a, left, right, spec,
        qfloor=qfloor, force_naive=force_naive,
    )


def _correction_from_stats(stats: PairStats, n: int) -> float:
    if stats.all_qhat_zero:
        raise EstimationError(
            ALL_QHAT_ZERO, "every kernel density normalizer is zero; bandwidth too small"
        )
    return stats.total / (n * (n - 1))


def correction_omega(
    data: Dataset,
    nuis: NuisanceValues,
    spec: KernelSpec,
    qfloor: float = DEFAULT_QFLOOR,
    force_naive: bool = False,
) -> float:
    """Bias correction localized in omega_hat with normalizer Q_hat(omega_hat_i)."""
    stats = _method_pair_stats("omega", data, nuis, spec, qfloor, force_naive)
    return _correction_from_stats(stats, data.n)


def correction_mu(
    data: Dataset,
    nuis: NuisanceValues,
    spec: KernelSpec,
    qfloor: float = DEFAULT_QFLOOR,
    force_naive: bool = False,
) -> float:
    """Bias correction localized in mu_hat with leave-i-out normalizer at j."""
    stats = _method_pair_stats("mu", data, nuis, spec, qfloor, force_naive)
    return _correction_from_stats(stats, data.n)


def correction_main(
    data: Dataset,
    nuis: NuisanceValues,
    spec: KernelSpec,
    qfloor: float = DEFAULT_QFLOOR,
    force_naive: bool = False,
) -> float:
    """Product-kernel bias correction localized at (omega_hat_i, mu_hat_i)."""
    stats = _method_pair_stats("main", data, nuis, spec, qfloor, force_naive)
    return _correction_from_stats(stats, data.n)


def influence_values(
    method: str,
    data: Dataset,
    nuis: NuisanceValues,
    spec: Optional[KernelSpec] = None,
    qfloor: float = DEFAULT_QFLOOR,
    force_naive: bool = False,
) -> np.ndarray:
    """Per-observation influence contributions zeta with mean(zeta) = psi_hat.

    For the corrected methods, zeta_i = phi_i - u_i where
    u_i = (n-1)^{-1} sum_{j != i} [kappa_ij + kappa_ji] - T is the empirical
    Hajek projection of the correction U-statistic around its value T.
    """
    phi = phi_values(data, nuis)
    if method == "aipw":
        return phi
    if method not in CORRECTED_METHODS:
        raise ValidationError(BAD_INPUT, f"unknown method '{method}'")
    if spec is None:
        raise ValidationError(BAD_INPUT, "corrected methods need a kernel spec")
    stats = _method_pair_stats(method, data, nuis, spec, qfloor, force_naive)
    n = data.n
    t_value = _correction_from_stats(stats, n)
    u = (stats.row + stats.col) / (n - 1) - t_value
    return phi - u


def _robust_scale(values: np.ndarray) -> float:
    q75, q25 = np.percentile(values, [75, 25])
    scale = float(q75 - q25)
    if scale > 0:
        return scale
    scale = float(np.std(values))
    return scale if scale > 0 else 1.0


def default_bandwidth(method: str, data: Dataset, nuis: NuisanceValues) -> float:
    """Rate-driven default bandwidths, scaled by nuisance interquartile ranges.

    h = n^{-1/2} IQR(omega_hat) for ``omega``, n^{-1/2} IQR(mu_hat) for
    ``mu``, and n^{-1/4} sqrt(IQR(omega_hat) IQR(mu_hat)) for ``main``.
    """
    n = data.n
    if method == "omega":
        return n ** -0.5 * _robust_scale(nuis.omega_hat)
    if method == "mu":
        return n ** -0.5 * _robust_scale(nuis.mu_hat)
    if method == "main":
        scale = np.sqrt(_robust_scale(nuis.omega_hat) * _robust_scale(nuis.mu_hat))
        return n ** -0.25 * scale
    raise ValidationError(BAD_INPUT, f"no default bandwidth for method '{method}'")


def default_cv_grid(data: Dataset, nuis: NuisanceValues, size: int = 16) -> np.ndarray:
    """16 geometrically spaced bandwidths spanning [0.1, 2] x the main default."""
    h0 = default_bandwidth("main", data, nuis)
    return np.geomspace(0.1 * h0, 2.0 * h0, size)


def _argmin_smallest(scores: np.ndarray) -> int:
    # indistinguishable scores (floating-point noise) tie toward index 0,
    # i.e. the smallest bandwidth of an ascending grid
    best = float(np.min(scores))
    eligible = scores <= best * (1.0 + 1e-9) + 1e-30
    return int(np.flatnonzero(eligible)[0])


def select_bandwidth_cv(
    data: Dataset,
    nuis: NuisanceValues,
    grid: Optional[Sequence[float]] = None,
    family: str = "box",
) -> float:
    """Leave-one-out CV bandwidth for the local regression behind the
    corrections.

    The score for each candidate h is the mean squared leave-one-out error
    of a Nadaraya-Watson regression of the residual y - mu_hat on
    (omega_hat, mu_hat) among treated units, with the product kernel and a
    single shared h on both axes.  Units whose leave-one-out window is empty
    are predicted by the global treated-mean residual.  Ties (up to
    floating-point noise) break toward the smallest h.
    """
    treated = data.a == 1.0
    if int(treated.sum()) < 2:
        raise ValidationError(TOO_FEW_TREATED, "bandwidth CV needs >= 2 treated units")
    resid = (data.y - nuis.mu_hat)[treated]
    w_coord = nuis.omega_hat[treated]
    m_coord = nuis.mu_hat[treated]
    if grid is None:
        grid = default_cv_grid(data, nuis)
    hs = np.sort(np.asarray(list(grid), dtype=float))
    if hs.size == 0 or np.any(hs <= 0):
        raise ValidationError(BAD_INPUT, "bandwidth grid must be positive and nonempty")
    fallback = float(np.mean(resid))

    d1 = np.abs(w_coord[None, :] - w_coord[:, None])
    d2 = np.abs(m_coord[None, :] - m_coord[:, None])
    scores = np.empty(len(hs))
    if family == "box":
        # the box product kernel is constant on its support, so the NW ratio
        # only needs windowed counts/sums ordered by Chebyshev distance
        cheb = np.maximum(d1, d2)
        np.fill_diagonal(cheb, np.inf)
        order = np.argsort(cheb, axis=1)
        cheb_sorted = np.take_along_axis(cheb, order, axis=1)
        resid_cum = np.cumsum(resid[order], axis=1)
        for g, h in enumerate(hs):
            counts = (cheb_sorted <= h).sum(axis=1)
            sums = np.where(counts > 0, resid_cum[np.arange(len(resid)), np.maximum(counts - 1, 0)], 0.0)
            pred = np.where(counts > 0, sums / np.maximum(counts, 1), fallback)
            scores[g] = np.mean((resid - pred) ** 2)
    else:
        big = np.eye(len(resid), dtype=bool)
        for g, h in enumerate(hs):
            spec = KernelSpec(family=family, h=float(h))
            w = np.asarray(kh(spec, d1)) * np.asarray(kh(spec, d2))
            w[big] = 0.0
            den = w.sum(axis=1)
            num = w @ resid
            pred = np.where(den > 0, num / np.where(den > 0, den, 1.0), fallback)
            scores[g] = np.mean((resid - pred) ** 2)
    return float(hs[_argmin_smallest(scores)])


def estimate(
    method: str,
    data: Dataset,
    nuis: NuisanceValues,
    h: Union[float, str, None] = None,
    alpha: float = 0.05,
    family: str = "box",
    cv_grid: Optional[Sequence[float]] = None,
    qfloor: float = DEFAULT_QFLOOR,
    force_naive: bool = False,
) -> EstimateReport:
    """Estimate psi by the requested method with a Wald confidence interval.

    ``h`` may be a positive number, a full :class:`KernelSpec`, the string
    ``"cv"`` for the leave-one-out selector, or ``None`` for the rate-driven
    default.  It is ignored by ``aipw``.
    """
    if method not in METHODS:
        raise ValidationError(BAD_INPUT, f"method must be one of {METHODS}")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(BAD_INPUT, f"alpha must be in (0, 1), got {alpha}")
    validate(data, nuis)
    n = data.n
    phi = phi_values(data, nuis)

    if method == "aipw":
        t_value = 0.0
        zeta = phi
        h_used = None
        min_q = float("nan")
        clamp = 0
    else:
        if isinstance(h, KernelSpec):
            spec = h
        else:
            if h == "cv":
                h_used = select_bandwidth_cv(data, nuis, grid=cv_grid, family=family)
            elif h is None:
                h_used = default_bandwidth(method, data, nuis)
            else:
                h_used = float(h)
            spec = KernelSpec(family=family, h=h_used)
        h_used = spec.h
        stats = _method_pair_stats(method, data, nuis, spec, qfloor, force_naive)
        t_value = _correction_from_stats(stats, n)
        u = (stats.row + stats.col) / (n - 1) - t_value
        zeta = phi - u
        min_q = stats.min_qhat
        clamp = stats.clamp_count

    psi_hat = float(np.mean(phi)) - t_value
    se = float(np.std(zeta, ddof=1)) / math.sqrt(n)
    z = float(norm.ppf(1.0 - alpha / 2.0))
    ci = (psi_hat - z * se, psi_hat + z * se)
    return EstimateReport(
        method=method,
        psi_hat=psi_hat,
        se=se,
        ci=ci,
        alpha=alpha,
        h_used=h_used,
        correction=t_value,
        min_qhat=min_q,
        clamp_count=clamp,
        n=n,
    )
