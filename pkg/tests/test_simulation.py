import numpy as np
import pytest
from scipy.special import expit

from drustat.errors import ValidationError
from drustat.simulation import (
    DgpSpec,
    SimulationConfig,
    generate_dataset,
    perturbed_nuisance,
    run_monte_carlo,
    true_psi,
    write_coverage_csv,
    write_errors_csv,
)


class TestTruePsi:
    def test_reference_value(self):
        assert true_psi() == pytest.approx(0.66, abs=0.01)

    def test_zero_coefficients(self):
        dgp = DgpSpec(beta_mu=(0.0, 0.0, 0.0))
        assert true_psi(dgp) == pytest.approx(0.5, abs=1e-12)

    def test_matches_monte_carlo_oracle(self):
        dgp = DgpSpec()
        rng = np.random.default_rng(0)
        x = rng.uniform(dgp.x_low, dgp.x_high, size=(10_000_000, 2))
        draws = dgp.mu(x)
        mc = float(draws.mean())
        mc_se = float(draws.std() / np.sqrt(len(draws)))
        assert abs(true_psi(dgp) - mc) < 3 * mc_se

    def test_quadrature_resolution_stable(self):
        assert true_psi(nodes=64) == pytest.approx(true_psi(nodes=128), abs=1e-12)


class TestGenerateDataset:
    def test_known_points(self):
        dgp = DgpSpec()
        x0 = np.zeros((1, 2))
        assert dgp.pi(x0)[0] == pytest.approx(expit(-0.5), abs=1e-12)
        assert float(dgp.pi(x0)[0]) == pytest.approx(0.37754, abs=5e-6)
        assert dgp.mu(x0)[0] == pytest.approx(expit(-2.5), abs=1e-12)
        assert float(dgp.mu(x0)[0]) == pytest.approx(0.07586, abs=5e-6)

    def test_treated_fraction_matches_quadrature(self):
        dgp = DgpSpec()
        from drustat.simulation import gauss_legendre_grid

        pts, wts = gauss_legendre_grid(dgp.x_low, dgp.x_high, 2, 64)
        expected = float(np.dot(wts, dgp.pi(pts)))
        rng = np.random.default_rng(123)
        data, _ = generate_dataset(dgp, 1_000_000, rng)
        mc_se = np.sqrt(expected * (1 - expected) / data.n)
        assert abs(data.a.mean() - expected) < 3 * mc_se

    def test_true_nuisances_returned(self):
        dgp = DgpSpec()
        rng = np.random.default_rng(5)
        data, nuis = generate_dataset(dgp, 500, rng)
        np.testing.assert_allclose(nuis.omega_hat, 1.0 / dgp.pi(data.x), rtol=1e-12)
        np.testing.assert_allclose(nuis.mu_hat, dgp.mu(data.x), rtol=1e-12)

    def test_outcomes_binary(self):
        data, _ = generate_dataset(DgpSpec(), 1000, np.random.default_rng(1))
        assert set(np.unique(data.y)) <= {0.0, 1.0}
        assert set(np.unique(data.a)) <= {0.0, 1.0}


class TestPerturbedNuisance:
    def test_perturbation_moments(self):
        dgp = DgpSpec()
        n = 1000
        shifts = []
        for rep in range(4000):
            rng = np.random.default_rng(rep)
            model = perturbed_nuisance(dgp, n, 0.3, 0.3, rng)
            shifts.append(model.beta_pi_hat - np.asarray(dgp.beta_pi))
        shifts = np.array(shifts)
        target = n ** -0.3
        assert np.allclose(shifts.mean(axis=0), target, atol=4 * target / np.sqrt(4000))
        assert np.allclose(shifts.std(axis=0), target, rtol=0.1)

    def test_coordinates_perturbed_independently(self):
        dgp = DgpSpec()
        model = perturbed_nuisance(dgp, 100, 0.0, 0.0, np.random.default_rng(3))
        shifts = model.beta_pi_hat - np.asarray(dgp.beta_pi)
        assert len(np.unique(np.round(shifts, 12))) == 3

    def test_common_scalar_option(self):
        dgp = DgpSpec()
        model = perturbed_nuisance(
            dgp, 100, 0.0, 0.0, np.random.default_rng(3), common_scalar=True
        )
        shifts = model.beta_pi_hat - np.asarray(dgp.beta_pi)
        assert len(np.unique(shifts)) == 1

    def test_infinite_rate_recovers_truth(self):
        dgp = DgpSpec()
        rng = np.random.default_rng(0)
        model = perturbed_nuisance(dgp, 100, np.inf, np.inf, rng)
        np.testing.assert_array_equal(model.beta_pi_hat, dgp.beta_pi)
        np.testing.assert_array_equal(model.beta_mu_hat, dgp.beta_mu)
        x = rng.uniform(0, 1, size=(50, 2))
        nuis = model.evaluate(x)
        np.testing.assert_allclose(nuis.mu_hat, dgp.mu(x), rtol=1e-12)

    def test_omega_clamped_into_bounds(self):
        dgp = DgpSpec()
        for rep in range(50):
            model = perturbed_nuisance(dgp, 100, 0.0, 0.0, np.random.default_rng(rep))
            nuis = model.evaluate(np.random.default_rng(rep).uniform(0, 1, (200, 2)))
            assert np.all(nuis.omega_hat >= 1.0)
            assert np.all(nuis.omega_hat <= 100.0)


class TestRunMonteCarlo:
    @staticmethod
    def tiny_config(**kw):
        base = dict(
            n_values=(120,), reps=6, r_pi=0.3, r_mu=0.3, seed=99,
            methods=("aipw", "main", "oracle"), threads=1,
        )
        base.update(kw)
        return SimulationConfig(**base)

    def test_reproducible_across_thread_counts(self):
        serial = run_monte_carlo(self.tiny_config(threads=1))
        parallel = run_monte_carlo(self.tiny_config(threads=2))
        assert len(serial.records) == len(parallel.records)
        for a, b in zip(serial.records, parallel.records):
            assert a == b

    def test_record_shape(self):
        res = run_monte_carlo(self.tiny_config())
        assert len(res.records) == 6 * 3
        assert len(res.summaries) == 3
        # psi_hat - error = psi_true for every successful record
        for r in res.records:
            if not r.failed:
                assert r.psi_hat - r.error == pytest.approx(res.psi_true, abs=1e-12)

    def test_failure_recorded_not_fatal(self):
        # a fixed microscopic bandwidth makes every kernel window empty
        cfg = self.tiny_config(bandwidth=1e-12, methods=("aipw", "main"))
        res = run_monte_carlo(cfg)
        aipw_cell = res.summary("aipw", 120)
        main_cell = res.summary("main", 120)
        assert aipw_cell.failures == 0
        assert main_cell.failures == 6
        assert main_cell.n_success == 0

    def test_invalid_config_rejected(self):
        with pytest.raises(ValidationError):
            SimulationConfig(reps=0)
        with pytest.raises(ValidationError):
            SimulationConfig(methods=("aipw", "tmle"))

    def test_csv_outputs(self, tmp_path):
        res = run_monte_carlo(self.tiny_config())
        errors = tmp_path / "errors.csv"
        coverage = tmp_path / "coverage.csv"
        write_errors_csv(res, str(errors))
        write_coverage_csv(res, str(coverage))
        err_lines = errors.read_text().strip().splitlines()
        assert err_lines[0] == "method,n,rep,error,sqrt_n_error,ci_lo,ci_hi,hit"
        assert len(err_lines) == 1 + 6 * 3
        cov_lines = coverage.read_text().strip().splitlines()
        assert cov_lines[0] == "method,n,coverage,mean_width,failures"
        assert len(cov_lines) == 1 + 3

    def test_csv_byte_identical_across_runs(self, tmp_path):
        paths = []
        for tag in ("a", "b"):
            res = run_monte_carlo(self.tiny_config(threads=1 if tag == "a" else 2))
            p = tmp_path / f"errors_{tag}.csv"
            write_errors_csv(res, str(p))
            paths.append(p.read_bytes())
        assert paths[0] == paths[1]
