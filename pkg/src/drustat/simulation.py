"""Monte Carlo study of coverage and error for the counterfactual-mean estimators.

The data-generating process draws covariates uniformly on the unit square,
assigns treatment with a logistic propensity and binary potential outcomes
with a logistic outcome regression.  Nuisance estimates handed to the
estimators are the true logistic coefficients plus a normal perturbation
whose mean and standard deviation are n^{-r}, so r = 0 yields persistent
misspecification and larger r yields consistent estimation at rate n^{-r}.

Replicates use counter-based random streams derived from
(seed, sample size, replicate index), so serial and parallel runs produce
identical results.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .core import PI_CEIL, PI_FLOOR, Dataset, NuisanceValues
from .errors import BAD_INPUT, DrustatError, ValidationError
from .estimators import CORRECTED_METHODS, estimate, select_bandwidth_cv

SIM_METHODS = ("aipw", "omega", "mu", "main", "oracle")


@dataclass(frozen=True)
class DgpSpec:
    """Constants of the simulation data-generating process.

    Covariates are independent Uniform(x_low, x_high); treatment follows
    Bernoulli(expit([1 x] beta_pi)); the treated potential outcome is
    Bernoulli(expit([1 x] beta_mu)) and the control one Bernoulli(y0_prob).
    """

    beta_pi: tuple = (-0.5, 2.0, 0.5)
    beta_mu: tuple = (-2.5, 5.0, 2.0)
    y0_prob: float = 0.5
    x_low: float = 0.0
    x_high: float = 1.0

    def __post_init__(self):
        if len(self.beta_pi) != len(self.beta_mu):
            raise ValidationError(BAD_INPUT, "beta_pi and beta_mu must have equal length")
        if not self.x_low < self.x_high:
            raise ValidationError(BAD_INPUT, "need x_low < x_high")

    @property
    def d(self) -> int:
        return len(self.beta_pi) - 1

    def pi(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        b = np.asarray(self.beta_pi)
        return expit(b[0] + x @ b[1:])

    def mu(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        b = np.asarray(self.beta_mu)
        return expit(b[0] + x @ b[1:])


def gauss_legendre_grid(low: float, high: float, d: int, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre rule on [low, high]^d with the uniform density."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    pts = (t + 1.0) / 2.0 * (high - low) + low
    wts = w / 2.0  # normalized to the uniform density on [low, high]
    grids = np.meshgrid(*([pts] * d), indexing="ij")
    points = np.column_stack([g.ravel() for g in grids])
    wgrids = np.meshgrid(*([wts] * d), indexing="ij")
    weights = np.ones(points.shape[0])
    for g in wgrids:
        weights = weights * g.ravel()
    return points, weights


def true_psi(dgp: DgpSpec = DgpSpec(), nodes: int = 64) -> float:
    """E{mu(X)} by tensor Gauss-Legendre quadrature (>= 64 nodes per axis)."""
    nodes = max(nodes, 64)
    if dgp.d > 4:
        raise ValidationError(BAD_INPUT, "tensor quadrature supports up to 4 covariates")
    points, weights = gauss_legendre_grid(dgp.x_low, dgp.x_high, dgp.d, nodes)
    return float(np.dot(weights, dgp.mu(points)))


def generate_dataset(
    dgp: DgpSpec, n: int, rng: np.random.Generator, m_omega: float = 100.0
) -> tuple[Dataset, NuisanceValues]:
    """Draw a dataset of size n; also return the true nuisance values.

    The true nuisances back the oracle estimator: omega = 1/pi(X) (after the
    standard propensity clamp) and mu = mu(X).
    """
    if n < 1:
        raise ValidationError(BAD_INPUT, "need n >= 1")
    x = rng.uniform(dgp.x_low, dgp.x_high, size=(n, dgp.d))
    pi = dgp.pi(x)
    mu = dgp.mu(x)
    a = rng.binomial(1, pi).astype(float)
    y1 = rng.binomial(1, mu).astype(float)
    y0 = rng.binomial(1, dgp.y0_prob, size=n).astype(float)
    y = a * y1 + (1.0 - a) * y0
    pi_clamped = np.clip(pi, max(1.0 / m_omega, PI_FLOOR), PI_CEIL)
    nuis = NuisanceValues(omega_hat=1.0 / pi_clamped, mu_hat=mu, m_omega=m_omega)
    return Dataset(y=y, a=a, x=x), nuis


@dataclass(frozen=True)
class PerturbedNuisanceModel:
    """Logistic nuisance models with perturbed coefficients, drawn once."""

    beta_pi_hat: np.ndarray
    beta_mu_hat: np.ndarray
    m_omega: float = 100.0

    def evaluate(self, x: np.ndarray) -> NuisanceValues:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        bp = np.asarray(self.beta_pi_hat)
        bm = np.asarray(self.beta_mu_hat)
        pi = expit(bp[0] + x @ bp[1:])
        pi = np.clip(pi, max(1.0 / self.m_omega, PI_FLOOR), PI_CEIL)
        mu = expit(bm[0] + x @ bm[1:])
        return NuisanceValues(omega_hat=1.0 / pi, mu_hat=mu, m_omega=self.m_omega)


def perturbed_nuisance(
    dgp: DgpSpec,
    n: int,
    r_pi: float,
    r_mu: float,
    rng: np.random.Generator,
    common_scalar: bool = False,
    m_omega: float = 100.0,
) -> PerturbedNuisanceModel:
    """Draw perturbed nuisance coefficients beta_hat = beta + Normal(n^-r, n^-2r).

    By default each coordinate receives an independent draw; with
    ``common_scalar`` a single shared draw is added to every coordinate.
    r = 0 gives a persistent Normal(1, 1) misspecification; r -> inf
    recovers the true coefficients.
    """
    if r_pi < 0 or r_mu < 0:
        raise ValidationError(BAD_INPUT, "perturbation rates must be >= 0")
    k = dgp.d + 1

    def _shift(r: float) -> np.ndarray:
        loc = float(n) ** -r if not math.isinf(r) else 0.0
        if common_scalar:
            return np.full(k, loc + loc * rng.standard_normal())
        return loc + loc * rng.standard_normal(k)

    beta_pi_hat = np.asarray(dgp.beta_pi, dtype=float) + _shift(r_pi)
    beta_mu_hat = np.asarray(dgp.beta_mu, dtype=float) + _shift(r_mu)
    return PerturbedNuisanceModel(beta_pi_hat, beta_mu_hat, m_omega=m_omega)


@dataclass(frozen=True)
class SimulationConfig:
    """Full description of one Monte Carlo coverage study."""

    n_values: tuple = (500, 1000, 1500, 2000)
    reps: int = 500
    r_pi: float = 0.3
    r_mu: float = 0.3
    alpha: float = 0.05
    seed: int = 0
    methods: tuple = ("aipw", "omega", "mu", "main")
    dgp: DgpSpec = field(default_factory=DgpSpec)
    bandwidth: object = "cv"  # "cv" or a positive float shared by all methods
    family: str = "box"
    threads: int = 1
    common_scalar_perturbation: bool = False

    def __post_init__(self):
        if self.reps < 1:
            raise ValidationError(BAD_INPUT, "reps must be >= 1")
        if any(n < 2 for n in self.n_values):
            raise ValidationError(BAD_INPUT, "all sample sizes must be >= 2")
        bad = [m for m in self.methods if m not in SIM_METHODS]
        if bad:
            raise ValidationError(BAD_INPUT, f"unknown methods {bad}")


@dataclass(frozen=True)
class ReplicateRecord:
    method: str
    n: int
    rep: int
    psi_hat: float
    error: float
    ci_lo: float
    ci_hi: float
    hit: bool
    width: float
    h_used: Optional[float]
    clamp_count: int
    failed: bool = False
    fail_code: str = ""

    @property
    def sqrt_n_error(self) -> float:
        return math.sqrt(self.n) * self.error


@dataclass(frozen=True)
class CellSummary:
    method: str
    n: int
    coverage: float
    mean_error: float
    sd_sqrt_n_error: float
    mean_width: float
    mean_clamp_count: float
    failures: int
    n_success: int


@dataclass(frozen=True)
class SimResults:
    config: SimulationConfig
    psi_true: float
    records: tuple
    summaries: tuple

    def summary(self, method: str, n: int) -> CellSummary:
        for s in self.summaries:
            if s.method == method and s.n == n:
                return s
        raise KeyError((method, n))


def _failure_record(method: str, n: int, rep: int, code: str) -> ReplicateRecord:
    nan = float("nan")
    return ReplicateRecord(
        method=method, n=n, rep=rep, psi_hat=nan, error=nan, ci_lo=nan, ci_hi=nan,
        hit=False, width=nan, h_used=None, clamp_count=0, failed=True, fail_code=code,
    )


def _replicate_task(config: SimulationConfig, psi0: float, task: tuple[int, int]) -> list[ReplicateRecord]:
    n, rep = task
    ss = np.random.SeedSequence(entropy=config.seed, spawn_key=(n, rep))
    rng = np.random.default_rng(ss)
    data, true_nuis = generate_dataset(config.dgp, n, rng)
    model = perturbed_nuisance(
        config.dgp, n, config.r_pi, config.r_mu, rng,
        common_scalar=config.common_scalar_perturbation,
    )
    nuis = model.evaluate(data.x)

    h_shared: Optional[float] = None
    cv_fail = ""
    if any(m in CORRECTED_METHODS for m in config.methods):
        if config.bandwidth == "cv":
            try:
                h_shared = select_bandwidth_cv(data, nuis, family=config.family)
            except DrustatError as exc:
                cv_fail = exc.code
        else:
            h_shared = float(config.bandwidth)

    records = []
    for method in config.methods:
        try:
            if method == "oracle":
                report = estimate("aipw", data, true_nuis, alpha=config.alpha)
            elif method == "aipw":
                report = estimate("aipw", data, nuis, alpha=config.alpha)
            else:
                if cv_fail:
                    raise DrustatError(cv_fail, "bandwidth selection failed")
                report = estimate(
                    method, data, nuis, h=h_shared, alpha=config.alpha,
                    family=config.family,
                )
            err = report.psi_hat - psi0
            records.append(
                ReplicateRecord(
                    method=method, n=n, rep=rep, psi_hat=report.psi_hat, error=err,
                    ci_lo=report.ci[0], ci_hi=report.ci[1],
                    hit=bool(report.ci[0] <= psi0 <= report.ci[1]),
                    width=report.ci[1] - report.ci[0], h_used=report.h_used,
                    clamp_count=report.clamp_count,
                )
            )
        except DrustatError as exc:
            records.append(_failure_record(method, n, rep, exc.code))
    return records


def _summarize(config: SimulationConfig, records: Sequence[ReplicateRecord]) -> tuple:
    out = []
    for method in config.methods:
        for n in config.n_values:
            cell = [r for r in records if r.method == method and r.n == n]
            ok = [r for r in cell if not r.failed]
            failures = len(cell) - len(ok)
            if ok:
                errors = np.array([r.error for r in ok])
                sqrt_n_err = np.array([r.sqrt_n_error for r in ok])
                summary = CellSummary(
                    method=method, n=n,
                    coverage=float(np.mean([r.hit for r in ok])),
                    mean_error=float(errors.mean()),
                    sd_sqrt_n_error=float(sqrt_n_err.std(ddof=1)) if len(ok) > 1 else 0.0,
                    mean_width=float(np.mean([r.width for r in ok])),
                    mean_clamp_count=float(np.mean([r.clamp_count for r in ok])),
                    failures=failures, n_success=len(ok),
                )
            else:
                nan = float("nan")
                summary = CellSummary(method, n, nan, nan, nan, nan, nan, failures, 0)
            out.append(summary)
    return tuple(out)


def run_monte_carlo(config: SimulationConfig) -> SimResults:
    """Run the full coverage study described by ``config``.

    Replicate failures (for example a bandwidth too small for any kernel
    window) are recorded and excluded from the coverage aggregates rather
    than aborting the run.  Results are reproducible for a given seed and do
    not depend on the number of worker processes.
    """
    psi0 = true_psi(config.dgp)
    tasks = [(n, rep) for n in config.n_values for rep in range(config.reps)]
    worker = partial(_replicate_task, config, psi0)
    if config.threads > 1 and len(tasks) > 1:
        chunk = max(1, len(tasks) // (config.threads * 8))
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            chunks = list(pool.map(worker, tasks, chunksize=chunk))
    else:
        chunks = [worker(t) for t in tasks]
    records = tuple(r for chunk_records in chunks for r in chunk_records)
    return SimResults(
        config=config, psi_true=psi0, records=records,
        summaries=_summarize(config, records),
    )


def write_errors_csv(results: SimResults, path: str) -> None:
    """Long-form per-replicate errors; failed replicates are omitted."""
    with open(path, "w", newline="") as fh:
        fh.write("method,n,rep,error,sqrt_n_error,ci_lo,ci_hi,hit\n")
        for r in results.records:
            if r.failed:
                continue
            fh.write(
                f"{r.method},{r.n},{r.rep},{r.error!r},{r.sqrt_n_error!r},"
                f"{r.ci_lo!r},{r.ci_hi!r},{int(r.hit)}\n"
            )


def write_coverage_csv(results: SimResults, path: str) -> None:
    """Per (method, n) coverage, mean interval width, and failure counts."""
    with open(path, "w", newline="") as fh:
        fh.write("method,n,coverage,mean_width,failures\n")
        for s in results.summaries:
            fh.write(f"{s.method},{s.n},{s.coverage!r},{s.mean_width!r},{s.failures}\n")
