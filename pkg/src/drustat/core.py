"""Data model, validation, cross-fitting folds, and the built-in nuisance learner.

The estimators consume a :class:`Dataset` of (y, a, x) triples together with
per-observation :class:`NuisanceValues` (inverse-propensity evaluations
``omega_hat`` and outcome-regression evaluations ``mu_hat``).  Nuisances can
be supplied externally or produced by :func:`crossfit_nuisances`, which fits
the built-in logistic/least-squares learner on out-of-fold data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    BAD_INPUT,
    BOUND_EXCEEDED,
    K_OUT_OF_RANGE,
    MISMATCHED_LENGTH,
    NO_TREATED,
    NONFINITE_VALUE,
    OMEGA_BELOW_ONE,
    ONE_CLASS,
    SEPARATION_OR_SINGULAR,
    EstimationError,
    ValidationError,
)

DEFAULT_M_OMEGA = 100.0
DEFAULT_M_MU = 100.0

# Propensities are clamped into [max(1/m_omega, PI_FLOOR), PI_CEIL] before
# inversion so that omega_hat always lands in [1, m_omega].
PI_FLOOR = 1e-3
PI_CEIL = 1.0 - 1e-6


@dataclass(frozen=True)
class Observation:
    """A single data point: outcome, binary treatment, covariate vector."""

    y: float
    a: int
    x: tuple

    def __post_init__(self):
        if self.a not in (0, 1):
            raise ValidationError(BAD_INPUT, f"treatment must be 0 or 1, got {self.a}")
        if not np.isfinite(self.y) or not np.all(np.isfinite(self.x)):
            raise ValidationError(NONFINITE_VALUE, "observation contains NaN/Inf")


@dataclass(frozen=True)
class Dataset:
    """Column-wise container for n observations of (y, a, x).

    Parameters
    ----------
    y : ndarray, shape (n,)
        Real-valued outcomes.
    a : ndarray, shape (n,)
        Treatment indicators in {0, 1}.
    x : ndarray, shape (n, d)
        Covariates.
    """

    y: np.ndarray
    a: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        a = np.asarray(self.a, dtype=float)
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if x.shape[0] != y.shape[0]:
            x = x.T
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "x", x)
        if y.ndim != 1 or a.ndim != 1 or x.ndim != 2:
            raise ValidationError(BAD_INPUT, "y, a must be 1-d and x 2-d")
        if not (len(y) == len(a) == x.shape[0]):
            raise ValidationError(MISMATCHED_LENGTH, "y, a, x lengths differ")
        if len(y) < 2:
            raise ValidationError(BAD_INPUT, "need at least 2 observations")
        if not np.all(np.isin(a, (0.0, 1.0))):
            raise ValidationError(BAD_INPUT, "treatment must be binary 0/1")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValidationError(NONFINITE_VALUE, "dataset contains NaN/Inf")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "Dataset":
        y = np.array([o.y for o in observations], dtype=float)
        a = np.array([o.a for o in observations], dtype=float)
        x = np.array([o.x for o in observations], dtype=float)
        return cls(y=y, a=a, x=x)

    def observations(self) -> list[Observation]:
        return [
            Observation(y=float(self.y[i]), a=int(self.a[i]), x=tuple(self.x[i]))
            for i in range(self.n)
        ]


@dataclass(frozen=True)
class NuisanceValues:
    """Per-observation nuisance evaluations with their boundedness constants.

    ``omega_hat[i]`` is the estimated inverse propensity 1/pi_hat(x_i), which
    must be >= 1; ``mu_hat[i]`` is the estimated outcome regression at x_i.
    """

    omega_hat: np.ndarray
    mu_hat: np.ndarray
    m_omega: float = DEFAULT_M_OMEGA
    m_mu: float = DEFAULT_M_MU

    def __post_init__(self):
        object.__setattr__(self, "omega_hat", np.asarray(self.omega_hat, dtype=float))
        object.__setattr__(self, "mu_hat", np.asarray(self.mu_hat, dtype=float))
        if self.omega_hat.ndim != 1 or self.mu_hat.ndim != 1:
            raise ValidationError(BAD_INPUT, "nuisance vectors must be 1-d")
        if len(self.omega_hat) != len(self.mu_hat):
            raise ValidationError(MISMATCHED_LENGTH, "omega_hat and mu_hat lengths differ")


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of {0, ..., n-1} into K nonempty folds."""

    fold_of: np.ndarray
    n_folds: int

    def __post_init__(self):
        fold_of = np.asarray(self.fold_of, dtype=int)
        object.__setattr__(self, "fold_of", fold_of)
        sizes = np.bincount(fold_of, minlength=self.n_folds)
        if len(sizes) != self.n_folds or np.any(sizes == 0):
            raise ValidationError(BAD_INPUT, "every fold must be nonempty")


@dataclass(frozen=True)
class LogisticModel:
    """Fitted logistic regression; ``beta[0]`` is the intercept."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "beta", beta)
        if not np.all(np.isfinite(beta)):
            raise ValidationError(NONFINITE_VALUE, "non-finite coefficient")

    def linear_index(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.beta[0] + x @ self.beta[1:]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return expit(self.linear_index(x))


def validate(
    data: Dataset,
    nuisance: NuisanceValues,
    m_y: float = np.inf,
) -> tuple[Dataset, NuisanceValues]:
    """Check the joint invariants of a dataset and its nuisance values.

    Returns the pair unchanged when every invariant holds.

    Raises
    ------
    ValidationError
        MISMATCHED_LENGTH if lengths differ; OMEGA_BELOW_ONE if some
        omega_hat < 1; NO_TREATED if no unit has a = 1; NONFINITE_VALUE on
        NaN/Inf; BOUND_EXCEEDED if |y| > m_y, omega_hat > m_omega or
        |mu_hat| > m_mu.
    """
    if len(nuisance.omega_hat) != data.n:
        raise ValidationError(
            MISMATCHED_LENGTH,
            f"dataset has n={data.n} but nuisances have n={len(nuisance.omega_hat)}",
        )
    if not (np.all(np.isfinite(nuisance.omega_hat)) and np.all(np.isfinite(nuisance.mu_hat))):
        raise ValidationError(NONFINITE_VALUE, "nuisance values contain NaN/Inf")
    bad = np.flatnonzero(nuisance.omega_hat < 1.0)
    if bad.size:
        raise ValidationError(
            OMEGA_BELOW_ONE,
            f"omega_hat must be >= 1 (rows {bad[:5].tolist()} violate, "
            f"first value {nuisance.omega_hat[bad[0]]:.6g})",
        )
    if not np.any(data.a == 1.0):
        raise ValidationError(NO_TREATED, "no treated unit (a = 1) in dataset")
    if np.any(nuisance.omega_hat > nuisance.m_omega):
        raise ValidationError(BOUND_EXCEEDED, f"omega_hat exceeds m_omega={nuisance.m_omega}")
    if np.any(np.abs(nuisance.mu_hat) > nuisance.m_mu):
        raise ValidationError(BOUND_EXCEEDED, f"|mu_hat| exceeds m_mu={nuisance.m_mu}")
    if np.any(np.abs(data.y) > m_y):
        raise ValidationError(BOUND_EXCEEDED, f"|y| exceeds m_y={m_y}")
    return data, nuisance


def make_folds(n: int, n_folds: int, seed: int) -> FoldAssignment:
    """Randomly partition n indices into ``n_folds`` folds of near-equal size.

    Deterministic given ``seed``; fold sizes differ by at most one.
    """
    if not 2 <= n_folds <= n:
        raise ValidationError(K_OUT_OF_RANGE, f"need 2 <= K <= n, got K={n_folds}, n={n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[perm] = np.arange(n) % n_folds
    return FoldAssignment(fold_of=fold_of, n_folds=n_folds)


def _log_likelihood(eta: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    # y*eta - log(1 + e^eta), numerically stable
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def fit_logistic(
    x: np.ndarray,
    labels: np.ndarray,
    weights: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> LogisticModel:
    """Maximum-likelihood logistic regression by Newton/IRLS with step halving.

    An intercept column is prepended internally; ``beta`` has length d+1.
    Convergence requires the score (gradient) to satisfy
    ``max |score| <= tol``.  Rank-deficient designs (e.g. a constant-zero
    covariate) are handled by a minimum-norm least-squares step, which pins
    the uninformative coefficients at zero.

    Raises
    ------
    ValidationError
        ONE_CLASS when all labels are equal.
    EstimationError
        SEPARATION_OR_SINGULAR when the solver does not converge within
        ``max_iter`` iterations or the coefficients diverge.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = np.asarray(labels, dtype=float)
    if x.shape[0] != len(labels):
        x = x.T
    n = len(labels)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if not np.all(np.isin(labels[w > 0], (0.0, 1.0))):
        raise ValidationError(BAD_INPUT, "labels must be binary 0/1")
    active = labels[w > 0]
    if active.size == 0 or np.all(active == active[0]):
        raise ValidationError(ONE_CLASS, "labels are all identical; no MLE exists")

    design = np.column_stack([np.ones(n), x])
    beta = np.zeros(design.shape[1])
    eta = design @ beta
    ll = _log_likelihood(eta, labels, w)
    wsum = float(np.sum(w))
    for _ in range(max_iter):
        p = expit(eta)
        if ll / wsum > -1e-6:
            # the likelihood is flat at its supremum of 0: every fitted
            # probability matches its label, so the MLE is at infinity
            raise EstimationError(
                SEPARATION_OR_SINGULAR, "perfect separation; no finite MLE"
            )
        score = design.T @ (w * (labels - p))
        if np.max(np.abs(score)) <= tol:
            return LogisticModel(beta=beta)
        wdiag = w * p * (1.0 - p)
        hess = design.T @ (wdiag[:, None] * design)
        try:
            step = np.linalg.solve(hess, score)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, score, rcond=None)[0]
        # step halving: never accept a likelihood decrease
        for _ in range(40):
            cand = beta + step
            eta_cand = design @ cand
            ll_cand = _log_likelihood(eta_cand, labels, w)
            if ll_cand >= ll - 1e-12:
                break
            step = step / 2.0
        beta, eta, ll = cand, eta_cand, ll_cand
        if np.max(np.abs(beta)) > 1e4:
            raise EstimationError(
                SEPARATION_OR_SINGULAR, "coefficients diverged (separation?)"
            )
    raise EstimationError(
        SEPARATION_OR_SINGULAR, f"IRLS did not converge in {max_iter} iterations"
    )


def fit_ols(x: np.ndarray, targets: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Least-squares fit of targets on [1, x]; returns coefficients (d+1,)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    targets = np.asarray(targets, dtype=float)
    design = np.column_stack([np.ones(len(targets)), x])
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float))
        design = design * sw[:, None]
        targets = targets * sw
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    return coef


@dataclass(frozen=True)
class CrossfitResult:
    """Cross-fitted nuisances plus clamping diagnostics."""

    nuisances: NuisanceValues
    pi_clamp_count: int = 0
    mu_clamp_count: int = 0


def is_binary(values: np.ndarray) -> bool:
    return bool(np.all(np.isin(values, (0.0, 1.0))))


def crossfit_nuisances(
    data: Dataset,
    folds: FoldAssignment,
    m_omega: float = DEFAULT_M_OMEGA,
    m_mu: float = DEFAULT_M_MU,
) -> CrossfitResult:
    """Cross-fitted nuisance values from the built-in parametric learner.

    For each fold k the propensity model (logistic a ~ x) and the outcome
    model (logistic y ~ x among treated when y is binary, else least squares)
    are fitted on all other folds and evaluated on fold k, so no observation's
    nuisance value depends on its own fold.  Fitted propensities are clamped
    into [max(1/m_omega, 1e-3), 1 - 1e-6] before inversion.
    """
    n = data.n
    if len(folds.fold_of) != n:
        raise ValidationError(MISMATCHED_LENGTH, "fold assignment does not match dataset")
    omega_hat = np.empty(n)
    mu_hat = np.empty(n)
    pi_lo = max(1.0 / m_omega, PI_FLOOR)
    pi_clamps = 0
    mu_clamps = 0
    binary_outcome = is_binary(data.y)
    for k in range(folds.n_folds):
        test = folds.fold_of == k
        train = ~test
        pi_model = fit_logistic(data.x[train], data.a[train])
        pi_pred = pi_model.predict_proba(data.x[test])
        clamped = np.clip(pi_pred, pi_lo, PI_CEIL)
        pi_clamps += int(np.sum(clamped != pi_pred))
        omega_hat[test] = 1.0 / clamped

        treated = train & (data.a == 1.0)
        if not np.any(treated):
            raise ValidationError(NO_TREATED, f"training folds for fold {k} have no treated unit")
        if binary_outcome:
            mu_model = fit_logistic(data.x[treated], data.y[treated])
            mu_pred = mu_model.predict_proba(data.x[test])
        else:
            coef = fit_ols(data.x[treated], data.y[treated])
            mu_pred = coef[0] + data.x[test] @ coef[1:]
        mu_clip = np.clip(mu_pred, -m_mu, m_mu)
        mu_clamps += int(np.sum(mu_clip != mu_pred))
        mu_hat[test] = mu_clip
    nuis = NuisanceValues(omega_hat=omega_hat, mu_hat=mu_hat, m_omega=m_omega, m_mu=m_mu)
    return CrossfitResult(nuisances=nuis, pi_clamp_count=pi_clamps, mu_clamp_count=mu_clamps)


# ---------------------------------------------------------------------------
# CSV interface
# ---------------------------------------------------------------------------

def _covariate_columns(header: list[str]) -> list[str]:
    cols = [c for c in header if c.startswith("x") and c[1:].isdigit()]
    cols.sort(key=lambda c: int(c[1:]))
    if not cols:
        raise ValidationError(BAD_INPUT, "no covariate columns x1..xd found")
    expected = [f"x{i}" for i in range(1, len(cols) + 1)]
    if cols != expected:
        raise ValidationError(BAD_INPUT, f"covariate columns must be x1..xd, got {cols}")
    return cols


def _read_csv_columns(path: str, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError(BAD_INPUT, f"{path}: missing header row")
        header = [c.strip() for c in reader.fieldnames]
        rows = list(reader)
    for col in required:
        if col not in header:
            raise ValidationError(BAD_INPUT, f"{path}: required column '{col}' missing")
    out: dict[str, np.ndarray] = {}
    for col in header:
        try:
            out[col] = np.array([float(r[col]) for r in rows], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ValidationError(BAD_INPUT, f"{path}: non-numeric value in column '{col}'") from exc
    return out


def load_dataset_csv(
    path: str,
    m_omega: float = DEFAULT_M_OMEGA,
    m_mu: float = DEFAULT_M_MU,
) -> tuple[Dataset, Optional[NuisanceValues]]:
    """Read a dataset CSV with columns ``y, a, x1..xd`` and optional nuisances.

    Nuisances are accepted either as ``omega_hat, mu_hat`` or as
    ``pi_hat, mu_hat`` (converted via omega_hat = 1/pi_hat).  When the
    nuisance columns are absent, returns ``None`` for the nuisances so the
    caller can cross-fit them.
    """
    cols = _read_csv_columns(path, required=("y", "a"))
    xcols = _covariate_columns(list(cols))
    data = Dataset(y=cols["y"], a=cols["a"], x=np.column_stack([cols[c] for c in xcols]))
    nuis = None
    if "omega_hat" in cols and "mu_hat" in cols:
        nuis = NuisanceValues(cols["omega_hat"], cols["mu_hat"], m_omega=m_omega, m_mu=m_mu)
    elif "pi_hat" in cols and "mu_hat" in cols:
        with np.errstate(divide="ignore"):
            omega = np.where(cols["pi_hat"] > 0, 1.0 / cols["pi_hat"], np.inf)
        nuis = NuisanceValues(omega, cols["mu_hat"], m_omega=m_omega, m_mu=m_mu)
    return data, nuis
