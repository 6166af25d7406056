"""Shared test fixtures and independent oracles.

The oracle functions here deliberately re-derive every quantity with plain
loops and their own kernel arithmetic so they stay independent of the
library's pairwise engine.
"""

import os

import numpy as np
import pytest
from scipy.special import expit

from drustat.core import Dataset, NuisanceValues
from drustat.simulation import DgpSpec, SimulationConfig, generate_dataset, perturbed_nuisance, run_monte_carlo


def oracle_kh(u, h, family="box"):
    """Scaled kernel evaluated from scratch."""
    t = u / h
    if abs(t) > 1.0:
        return 0.0
    if family == "box":
        return 0.5 / h
    return 0.75 * (1.0 - t * t) / h


def oracle_correction(method, y, a, omega, mu, h, family="box", qfloor=1e-3):
    """Triple-loop transcription of the three correction double sums."""
    n = len(y)
    left = [a[i] * omega[i] - 1.0 for i in range(n)]
    right = [a[j] * (y[j] - mu[j]) for j in range(n)]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if method == "omega":
                kern = oracle_kh(omega[j] - omega[i], h, family)
                q = sum(
                    a[s] * oracle_kh(omega[s] - omega[i], h, family)
                    for s in range(n) if s != i
                ) / (n - 1)
            elif method == "mu":
                kern = oracle_kh(mu[j] - mu[i], h, family)
                q = sum(
                    a[s] * oracle_kh(mu[s] - mu[j], h, family)
                    for s in range(n) if s != i
                ) / (n - 1)
            else:  # main
                kern = oracle_kh(omega[j] - omega[i], h, family) * oracle_kh(
                    mu[j] - mu[i], h, family
                )
                q = sum(
                    a[s]
                    * oracle_kh(omega[s] - omega[i], h, family)
                    * oracle_kh(mu[s] - mu[i], h, family)
                    for s in range(n) if s != i
                ) / (n - 1)
            total += left[i] * kern * right[j] / max(q, qfloor)
    return total / (n * (n - 1))


def oracle_plm_correction(theta, y, a, v, m, h, family="box", qfloor=1e-3):
    """Triple-loop transcription of the partially-linear-logistic correction."""
    n = len(y)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            kern = oracle_kh(v[j] - v[i], h, family) * oracle_kh(m[j] - m[i], h, family)
            q = sum(
                (1.0 - y[s])
                * oracle_kh(v[s] - v[i], h, family)
                * oracle_kh(m[s] - m[i], h, family)
                for s in range(n) if s != i
            ) / (n - 1)
            left = np.exp(-theta * a[i] - m[i]) * y[i] - (1.0 - y[i])
            right = (1.0 - y[j]) * (a[j] - v[j])
            total += left * kern * right / max(q, qfloor)
    return total / (n * (n - 1))


def random_estimation_instance(seed, n, omega_scale=0.5):
    """A generic validated (data, nuisances) pair for randomized checks."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, size=(n, 2))
    pi = expit(-0.5 + 2 * x[:, 0] + 0.5 * x[:, 1])
    a = (rng.uniform(size=n) < pi).astype(float)
    if not a.any():
        a[0] = 1.0
    y = (rng.uniform(size=n) < 0.5).astype(float)
    omega = 1.0 + np.abs(rng.normal(1.0, omega_scale, size=n))
    mu = rng.uniform(0.05, 0.95, size=n)
    return Dataset(y=y, a=a, x=x), NuisanceValues(omega, mu)


def draw_sim_instance(n, r_pi, r_mu, seed):
    """One replicate-style draw from the simulation DGP with perturbed nuisances."""
    rng = np.random.default_rng(seed)
    dgp = DgpSpec()
    data, true_nuis = generate_dataset(dgp, n, rng)
    model = perturbed_nuisance(dgp, n, r_pi, r_mu, rng)
    return data, model.evaluate(data.x), true_nuis


def worker_count():
    return max(1, min(8, os.cpu_count() or 1))


@pytest.fixture(scope="session")
def mc_runner():
    """Session-cached Monte Carlo runner so heavy cells are computed once."""
    cache = {}

    def run(r_pi, r_mu, n_values, reps=500, methods=("aipw", "omega", "mu", "main"),
            seed=2027, bandwidth="cv"):
        key = (r_pi, r_mu, tuple(n_values), reps, tuple(methods), seed, str(bandwidth))
        if key not in cache:
            config = SimulationConfig(
                n_values=tuple(n_values), reps=reps, r_pi=r_pi, r_mu=r_mu,
                seed=seed, methods=tuple(methods), bandwidth=bandwidth,
                threads=worker_count(),
            )
            cache[key] = run_monte_carlo(config)
        return cache[key]

    return run
