import numpy as np
import pytest
from scipy.special import expit, logit

from drustat.core import (
    CrossfitResult,
    Dataset,
    NuisanceValues,
    Observation,
    crossfit_nuisances,
    fit_logistic,
    load_dataset_csv,
    make_folds,
    validate,
)
from drustat.errors import EstimationError, ValidationError


def small_dataset():
    return Dataset(y=np.array([1.0, 0.0]), a=np.array([1.0, 0.0]), x=np.array([[0.1], [0.2]]))


class TestValidate:
    def test_valid_pair_accepted(self):
        data = small_dataset()
        nuis = NuisanceValues(np.array([2.0, 3.0]), np.array([0.5, 0.5]))
        out_data, out_nuis = validate(data, nuis)
        assert out_data is data and out_nuis is nuis

    def test_omega_below_one(self):
        data = small_dataset()
        nuis = NuisanceValues(np.array([0.9, 2.0]), np.array([0.5, 0.5]))
        with pytest.raises(ValidationError) as err:
            validate(data, nuis)
        assert err.value.code == "OMEGA_BELOW_ONE"
        assert "0" in str(err.value)  # names the offending row

    def test_no_treated(self):
        data = Dataset(y=np.array([1.0, 0.0]), a=np.array([0.0, 0.0]), x=np.array([[0.1], [0.2]]))
        nuis = NuisanceValues(np.array([2.0, 3.0]), np.array([0.5, 0.5]))
        with pytest.raises(ValidationError) as err:
            validate(data, nuis)
        assert err.value.code == "NO_TREATED"

    def test_mismatched_length(self):
        data = small_dataset()
        nuis = NuisanceValues(np.array([2.0, 3.0, 4.0]), np.array([0.5, 0.5, 0.5]))
        with pytest.raises(ValidationError) as err:
            validate(data, nuis)
        assert err.value.code == "MISMATCHED_LENGTH"

    def test_nonfinite(self):
        data = small_dataset()
        nuis = NuisanceValues(np.array([2.0, np.nan]), np.array([0.5, 0.5]))
        with pytest.raises(ValidationError) as err:
            validate(data, nuis)
        assert err.value.code == "NONFINITE_VALUE"

    def test_bound_exceeded(self):
        data = small_dataset()
        nuis = NuisanceValues(np.array([2.0, 200.0]), np.array([0.5, 0.5]))
        with pytest.raises(ValidationError) as err:
            validate(data, nuis)
        assert err.value.code == "BOUND_EXCEEDED"

    def test_outcome_bound(self):
        data = Dataset(y=np.array([5.0, 0.0]), a=np.array([1.0, 0.0]), x=np.zeros((2, 1)))
        nuis = NuisanceValues(np.array([2.0, 2.0]), np.array([0.5, 0.5]))
        validate(data, nuis)  # no bound by default
        with pytest.raises(ValidationError) as err:
            validate(data, nuis, m_y=2.0)
        assert err.value.code == "BOUND_EXCEEDED"


class TestObservationAndDataset:
    def test_observation_rejects_bad_treatment(self):
        with pytest.raises(ValidationError):
            Observation(y=1.0, a=2, x=(0.0,))

    def test_dataset_roundtrip(self):
        data = small_dataset()
        obs = data.observations()
        again = Dataset.from_observations(obs)
        np.testing.assert_array_equal(again.y, data.y)
        assert again.d == 1 and again.n == 2

    def test_dataset_needs_two_rows(self):
        with pytest.raises(ValidationError):
            Dataset(y=np.array([1.0]), a=np.array([1.0]), x=np.array([[0.0]]))


class TestMakeFolds:
    def test_balanced_split(self):
        folds = make_folds(4, 2, seed=0)
        sizes = np.bincount(folds.fold_of)
        assert sorted(sizes.tolist()) == [2, 2]

    def test_remainder_handling(self):
        folds = make_folds(5, 2, seed=0)
        sizes = sorted(np.bincount(folds.fold_of).tolist())
        assert sizes == [2, 3]

    def test_deterministic(self):
        a = make_folds(100, 5, seed=123)
        b = make_folds(100, 5, seed=123)
        np.testing.assert_array_equal(a.fold_of, b.fold_of)

    def test_partition(self):
        folds = make_folds(37, 4, seed=9)
        assert set(folds.fold_of.tolist()) == {0, 1, 2, 3}
        assert max(np.bincount(folds.fold_of)) - min(np.bincount(folds.fold_of)) <= 1

    def test_k_out_of_range(self):
        with pytest.raises(ValidationError) as err:
            make_folds(5, 1, seed=0)
        assert err.value.code == "K_OUT_OF_RANGE"
        with pytest.raises(ValidationError):
            make_folds(5, 6, seed=0)


class TestFitLogistic:
    def test_one_class(self):
        x = np.zeros((10, 1))
        with pytest.raises(ValidationError) as err:
            fit_logistic(x, np.ones(10))
        assert err.value.code == "ONE_CLASS"

    def test_intercept_only_closed_form(self):
        # zero covariate carries no information: intercept = logit(mean label)
        x = np.zeros((8, 1))
        labels = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0])
        model = fit_logistic(x, labels)
        assert model.beta[1] == pytest.approx(0.0, abs=1e-10)
        assert model.beta[0] == pytest.approx(logit(labels.mean()), abs=1e-8)

    def test_score_at_solution_is_small(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(500, 2))
        p = expit(0.3 + x @ np.array([1.0, -0.5]))
        labels = (rng.uniform(size=500) < p).astype(float)
        model = fit_logistic(x, labels)
        design = np.column_stack([np.ones(500), x])
        score = design.T @ (labels - expit(design @ model.beta))
        assert np.max(np.abs(score)) <= 1e-8

    def test_recovers_truth_large_sample(self):
        rng = np.random.default_rng(11)
        beta = np.array([-0.4, 0.8, -1.2])
        x = rng.uniform(-1, 1, size=(100_000, 2))
        p = expit(beta[0] + x @ beta[1:])
        labels = (rng.uniform(size=len(p)) < p).astype(float)
        model = fit_logistic(x, labels)
        assert np.max(np.abs(model.beta - beta)) < 0.05

    def test_separation_raises(self):
        x = np.linspace(-1, 1, 40).reshape(-1, 1)
        labels = (x.ravel() > 0).astype(float)
        with pytest.raises(EstimationError) as err:
            fit_logistic(x, labels)
        assert err.value.code == "SEPARATION_OR_SINGULAR"

    def test_weights_replicate_rows(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(60, 1))
        labels = (rng.uniform(size=60) < expit(x.ravel())).astype(float)
        doubled = fit_logistic(np.vstack([x, x]), np.concatenate([labels, labels]))
        weighted = fit_logistic(x, labels, weights=np.full(60, 2.0))
        np.testing.assert_allclose(doubled.beta, weighted.beta, atol=1e-7)


class TestCrossfit:
    @staticmethod
    def _dgp(n, rng):
        x = rng.uniform(0, 1, size=(n, 2))
        pi = expit(-0.5 + 2 * x[:, 0] + 0.5 * x[:, 1])
        a = (rng.uniform(size=n) < pi).astype(float)
        mu = expit(-2.5 + 5 * x[:, 0] + 2 * x[:, 1])
        y = np.where(a == 1, (rng.uniform(size=n) < mu), (rng.uniform(size=n) < 0.5)).astype(float)
        return Dataset(y=y, a=a, x=x), 1.0 / pi

    def test_constant_propensity_gives_constant_omega(self):
        rng = np.random.default_rng(0)
        n = 400
        x = rng.uniform(0, 1, size=(n, 1))
        a = (rng.uniform(size=n) < 0.5).astype(float)
        y = (rng.uniform(size=n) < 0.5).astype(float)
        # guard against degenerate folds
        data = Dataset(y=y, a=a, x=x)
        result = crossfit_nuisances(data, make_folds(n, 2, seed=1))
        omega = result.nuisances.omega_hat
        # within a fold the fitted propensity is nearly flat in x
        assert np.std(omega) < 0.25

    def test_out_of_fold_only(self):
        # repeated runs with the same folds must agree, and omega stays >= 1
        rng = np.random.default_rng(2)
        data, _ = self._dgp(300, rng)
        folds = make_folds(300, 3, seed=4)
        r1 = crossfit_nuisances(data, folds)
        r2 = crossfit_nuisances(data, folds)
        np.testing.assert_array_equal(r1.nuisances.omega_hat, r2.nuisances.omega_hat)
        assert isinstance(r1, CrossfitResult)
        assert np.all(r1.nuisances.omega_hat >= 1.0)

    def test_propensity_clamp_counted(self):
        # a region with essentially zero treatment probability forces the
        # fitted propensity below the floor, which is clamped and counted
        rng = np.random.default_rng(8)
        n = 600
        x = rng.uniform(0, 1, size=(n, 1))
        pi = expit(-8.0 + 10.0 * x[:, 0])
        a = (rng.uniform(size=n) < pi).astype(float)
        a[x[:, 0] > 0.95] = 1.0  # keep both classes present in every fold
        y = (rng.uniform(size=n) < 0.5).astype(float)
        data = Dataset(y=y, a=a, x=x)
        result = crossfit_nuisances(data, make_folds(n, 2, seed=0))
        assert result.pi_clamp_count > 0
        assert np.all(result.nuisances.omega_hat <= 100.0)

    def test_omega_rmse_decreases_with_n(self):
        rmse = {}
        for n in (300, 3000):
            errs = []
            for rep in range(10):
                rng = np.random.default_rng(1000 + rep)
                data, omega_true = self._dgp(n, rng)
                fit = crossfit_nuisances(data, make_folds(n, 2, seed=rep))
                errs.append(np.sqrt(np.mean((fit.nuisances.omega_hat - omega_true) ** 2)))
            rmse[n] = np.mean(errs)
        assert rmse[3000] < rmse[300]


class TestCsv:
    def test_roundtrip_with_nuisances(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(
            "y,a,x1,x2,omega_hat,mu_hat\n"
            "1.0,1,0.1,0.2,2.0,0.5\n"
            "0.0,0,0.3,0.4,3.0,0.4\n"
        )
        data, nuis = load_dataset_csv(str(path))
        assert data.n == 2 and data.d == 2
        assert nuis is not None
        np.testing.assert_allclose(nuis.omega_hat, [2.0, 3.0])

    def test_pi_hat_conversion(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,x1,pi_hat,mu_hat\n1,1,0.1,0.5,0.5\n0,0,0.3,0.25,0.4\n")
        _, nuis = load_dataset_csv(str(path))
        np.testing.assert_allclose(nuis.omega_hat, [2.0, 4.0])

    def test_missing_nuisances_returns_none(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,x1\n1,1,0.1\n0,0,0.3\n")
        _, nuis = load_dataset_csv(str(path))
        assert nuis is None

    def test_missing_header_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,x1\n1,0.1\n0,0.3\n")
        with pytest.raises(ValidationError):
            load_dataset_csv(str(path))
