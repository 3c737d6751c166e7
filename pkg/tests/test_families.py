"""Families: canonical links, variance functions, and pointwise losses."""

import math

import numpy as np
import pytest

from svyerr.families import (
    DomainError,
    Family,
    FamilyKind,
    Loss,
    LossKind,
    lambda_hat,
    log_likelihood,
    loss_q,
    loss_q_from_concave,
    mean_to_natural,
    natural_to_mean,
    psi,
    unit_variance,
    variance,
)

GAUSS = Family(FamilyKind.GAUSSIAN)
BERN = Family(FamilyKind.BERNOULLI)
POIS = Family(FamilyKind.POISSON)


class TestNaturalToMean:
    def test_bernoulli_at_zero(self):
        assert natural_to_mean(BERN, 0.0) == pytest.approx(0.5)

    def test_poisson_at_zero(self):
        assert natural_to_mean(POIS, 0.0) == pytest.approx(1.0)

    def test_gaussian_identity_link(self):
        assert natural_to_mean(GAUSS, 2.5) == pytest.approx(2.5)

    def test_nonfinite_rejected(self):
        with pytest.raises(DomainError):
            natural_to_mean(BERN, np.inf)

    def test_saturation_clamp(self):
        # extreme predictors saturate instead of overflowing
        assert np.isfinite(natural_to_mean(POIS, 1e6))


class TestMeanToNatural:
    def test_bernoulli_at_half(self):
        assert mean_to_natural(BERN, 0.5) == pytest.approx(0.0)

    def test_poisson_at_one(self):
        assert mean_to_natural(POIS, 1.0) == pytest.approx(0.0)

    def test_inverts_logistic_of_one(self):
        mu = natural_to_mean(BERN, 1.0)  # 0.7310585786300049
        assert mean_to_natural(BERN, mu) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("family", [GAUSS, BERN, POIS])
    def test_round_trip(self, family):
        lam = np.linspace(-3.0, 3.0, 25)
        mu = natural_to_mean(family, lam)
        np.testing.assert_allclose(mean_to_natural(family, mu), lam, atol=1e-10)

    @pytest.mark.parametrize("mu", [0.0, 1.0, -0.1])
    def test_bernoulli_boundary_rejected(self, mu):
        with pytest.raises(DomainError):
            mean_to_natural(BERN, mu)

    def test_poisson_boundary_rejected(self):
        with pytest.raises(DomainError):
            mean_to_natural(POIS, 0.0)


class TestVariance:
    def test_bernoulli_maximum(self):
        assert variance(BERN, 0.5) == pytest.approx(0.25)

    def test_gaussian_constant(self):
        assert variance(Family(FamilyKind.GAUSSIAN, 2.0), -17.3) == pytest.approx(2.0)

    def test_poisson_identity(self):
        assert variance(POIS, 3.7) == pytest.approx(3.7)

    @pytest.mark.parametrize("family", [GAUSS, BERN, POIS])
    def test_positive_on_open_domain(self, family):
        mu = np.linspace(0.05, 0.95, 13)
        assert np.all(np.asarray(variance(family, mu)) > 0.0)

    def test_positive_dispersion_required(self):
        with pytest.raises(ValueError):
            Family(FamilyKind.GAUSSIAN, 0.0)


class TestLossQ:
    def test_squared_error(self):
        assert loss_q(Loss(LossKind.SQUARED_ERROR), 3.0, 1.0) == pytest.approx(4.0)

    def test_bernoulli_deviance_at_half(self):
        got = loss_q(Loss(LossKind.DEVIANCE, BERN), 1.0, 0.5)
        assert got == pytest.approx(2.0 * math.log(2.0))

    def test_poisson_deviance(self):
        got = loss_q(Loss(LossKind.DEVIANCE, POIS), 2.0, 1.0)
        assert got == pytest.approx(2.0 * (2.0 * math.log(2.0) - 1.0))

    def test_bernoulli_boundary_is_inf_sentinel(self):
        dev = Loss(LossKind.DEVIANCE, BERN)
        assert loss_q(dev, 1.0, 0.0) == np.inf
        assert loss_q(dev, 0.0, 1.0) == np.inf

    def test_bernoulli_boundary_match_is_zero(self):
        dev = Loss(LossKind.DEVIANCE, BERN)
        assert loss_q(dev, 0.0, 0.0) == pytest.approx(0.0)
        assert loss_q(dev, 1.0, 1.0) == pytest.approx(0.0)

    def test_zero_one(self):
        zo = Loss(LossKind.ZERO_ONE)
        assert loss_q(zo, 1.0, 0.4) == 1.0
        assert loss_q(zo, 1.0, 0.6) == 0.0

    def test_deviance_requires_family(self):
        with pytest.raises(ValueError):
            Loss(LossKind.DEVIANCE)

    @pytest.mark.parametrize("family", [GAUSS, BERN, POIS])
    def test_nonnegative_zero_iff_equal(self, family):
        rng = np.random.default_rng(7)
        dev = Loss(LossKind.DEVIANCE, family)
        mu = rng.uniform(0.1, 0.9, size=50)
        y = rng.uniform(0.1, 0.9, size=50)
        q = np.asarray(loss_q(dev, y, mu))
        assert np.all(q > 0.0)
        assert np.allclose(loss_q(dev, mu, mu), 0.0, atol=1e-12)

    @pytest.mark.parametrize(
        "loss",
        [
            Loss(LossKind.SQUARED_ERROR),
            Loss(LossKind.DEVIANCE, GAUSS),
            Loss(LossKind.DEVIANCE, Family(FamilyKind.GAUSSIAN, 3.0)),
            Loss(LossKind.DEVIANCE, BERN),
            Loss(LossKind.DEVIANCE, POIS),
        ],
    )
    def test_concave_construction_agrees(self, loss):
        rng = np.random.default_rng(11)
        mu = rng.uniform(0.1, 0.9, size=40)
        if loss.family is not None and loss.family.kind is FamilyKind.BERNOULLI:
            y = rng.integers(0, 2, size=40).astype(float)
        elif loss.family is not None and loss.family.kind is FamilyKind.POISSON:
            y = rng.poisson(1.0, size=40).astype(float)
        else:
            y = rng.normal(size=40)
        np.testing.assert_allclose(
            loss_q(loss, y, mu), loss_q_from_concave(loss, y, mu), atol=1e-10
        )

    @pytest.mark.parametrize("family", [GAUSS, BERN, POIS])
    def test_deviance_equals_likelihood_ratio(self, family):
        rng = np.random.default_rng(3)
        mu = rng.uniform(0.2, 0.8, size=30)
        if family.kind is FamilyKind.BERNOULLI:
            y = rng.integers(0, 2, size=30).astype(float)
            sat = np.zeros(30)  # log density of y at its own mean on {0,1}
        elif family.kind is FamilyKind.POISSON:
            y = rng.poisson(2.0, size=30).astype(float) + 1.0
            sat = np.asarray(log_likelihood(family, y, y))
        else:
            y = rng.normal(size=30)
            sat = np.asarray(log_likelihood(family, y, y))
        lr = 2.0 * (sat - np.asarray(log_likelihood(family, y, mu)))
        np.testing.assert_allclose(
            loss_q(Loss(LossKind.DEVIANCE, family), y, mu), lr, atol=1e-10
        )


class TestLambdaHat:
    def test_zero_one_below_half(self):
        assert lambda_hat(Loss(LossKind.ZERO_ONE), 0.3) == -1.0

    def test_zero_one_at_half(self):
        assert lambda_hat(Loss(LossKind.ZERO_ONE), 0.5) == 1.0

    def test_squared_error_identity(self):
        assert lambda_hat(Loss(LossKind.SQUARED_ERROR), 1.7) == pytest.approx(1.7)

    @pytest.mark.parametrize("family", [BERN, POIS])
    def test_deviance_equals_natural_parameter(self, family):
        mu = np.linspace(0.1, 0.9, 9)
        np.testing.assert_array_equal(
            lambda_hat(Loss(LossKind.DEVIANCE, family), mu),
            np.asarray(mean_to_natural(family, mu)),
        )

    def test_gaussian_deviance_divides_by_dispersion(self):
        f = Family(FamilyKind.GAUSSIAN, 4.0)
        assert lambda_hat(Loss(LossKind.DEVIANCE, f), 2.0) == pytest.approx(0.5)


@pytest.mark.parametrize("family", [GAUSS, BERN, POIS])
def test_psi_derivative_matches_mean(family):
    h = 1e-6
    for lam in np.linspace(-2.5, 2.5, 21):
        fd = (psi(family, lam + h) - psi(family, lam - h)) / (2.0 * h)
        assert fd == pytest.approx(natural_to_mean(family, lam), abs=1e-6)


@pytest.mark.parametrize("family", [GAUSS, BERN, POIS])
def test_unit_variance_is_mean_derivative(family):
    h = 1e-6
    for lam in np.linspace(-2.0, 2.0, 15):
        fd = (natural_to_mean(family, lam + h) - natural_to_mean(family, lam - h)) / (2.0 * h)
        mu = natural_to_mean(family, lam)
        assert fd == pytest.approx(unit_variance(family, mu), abs=1e-5)
