import numpy as np
from pytest import fixture, mark, raises
from scipy.integrate import quad

from smoothgam.errors import DomainError, EvaluationError, ParseError
from smoothgam.families import (FAMILIES, Gamma, Gaussian, Identity, Log, Tweedie, from_descriptor,
                                simulate_tweedie)


@fixture
def tweedie():
    return Tweedie.with_power(1.5)


@fixture
def positive_sample():
    rng = np.random.default_rng(5)
    return rng.gamma(2.0, 1.5, 25), rng.uniform(0.5, 4.0, 25)


class TestLinks:
    def test_identity(self):
        eta = np.array([-1.0, 0.0, 2.5])
        assert np.all(Identity.invert(Identity.apply(eta)) == eta)
        assert np.all(Identity.mu_eta(eta) == 1.0)

    def test_log(self):
        mu = np.array([0.5, 1.0, 4.0])
        assert np.allclose(Log.invert(Log.apply(mu)), mu)
        assert np.allclose(Log.mu_eta(np.log(mu)), mu)

    def test_log_domain(self):
        with raises(DomainError):
            Log.apply(np.array([1.0, 0.0]))
        assert not Log.valid_mu(np.array([1.0, -1.0]))


class TestDevianceAndDensity:
    @mark.parametrize('name', ['gaussian', 'gamma', 'tweedie'])
    def test_deviance_is_scaled_log_likelihood_ratio(self, name, positive_sample):
        family = FAMILIES[name].with_power(1.4) if name == 'tweedie' else FAMILIES[name]
        y, mu = positive_sample
        phi = 0.7
        ratio = family.log_density(y, mu, phi) - family.log_density(y, y, phi)
        assert np.allclose(ratio, -family.unit_deviance(y, mu) / (2 * phi), rtol=1e-8, atol=1e-10)

    @mark.parametrize('name', ['gaussian', 'gamma', 'tweedie'])
    def test_deviance_residuals(self, name, positive_sample):
        family = FAMILIES[name].with_power(1.6) if name == 'tweedie' else FAMILIES[name]
        y, mu = positive_sample
        weights = np.linspace(1.0, 3.0, y.size)
        residuals = family.deviance_residuals(y, mu, weights)
        assert np.isclose(np.sum(residuals ** 2), family.deviance(y, mu, weights))
        assert np.all(np.sign(residuals) == np.sign(y - mu))

    def test_gaussian_density(self):
        value = Gaussian.log_density(np.array([1.0]), np.array([0.0]), 4.0)
        assert np.isclose(value[0], -0.5 * np.log(8 * np.pi) - 1.0 / 8.0)

    def test_weights_scale_dispersion(self, positive_sample):
        y, mu = positive_sample
        weighted = Gamma.log_density(y, mu, 0.6, np.full(y.size, 3.0))
        assert np.allclose(weighted, Gamma.log_density(y, mu, 0.2))

    def test_gamma_rejects_zero(self):
        with raises(DomainError):
            Gamma.check_response(np.array([1.0, 0.0]))

    def test_pearson(self):
        y, mu = np.array([3.0, 1.0]), np.array([2.0, 2.0])
        assert np.allclose(Gamma.pearson_residuals(y, mu), [0.5, -0.5])


class TestTweedie:
    def test_power_domain(self):
        with raises(DomainError):
            Tweedie.with_power(2.0)
        with raises(DomainError):
            Tweedie.variance(np.ones(2))

    def test_zero_mass(self, tweedie):
        mu, phi = np.array([0.5]), 0.3
        expected = -mu ** 0.5 / (phi * 0.5)
        assert np.allclose(tweedie.log_density(np.array([0.0]), mu, phi), expected)

    def test_zero_response_deviance(self, tweedie):
        assert np.isclose(tweedie.unit_deviance(np.array([0.0]), np.array([4.0]))[0], 2.0 * 4.0 ** 0.5 / 0.5)

    def test_density_integrates_to_one(self, tweedie):
        mu, phi = np.array([2.0]), 0.5

        def density(value):
            return float(np.exp(tweedie.log_density(np.array([value]), mu, phi)[0]))

        zero = float(np.exp(tweedie.log_density(np.array([0.0]), mu, phi)[0]))
        continuous, _ = quad(density, 0.0, 60.0, limit=200)
        mean, _ = quad(lambda value: value * density(value), 0.0, 60.0, limit=200)
        assert abs(zero + continuous - 1.0) < 1e-5
        assert abs(mean - 2.0) < 1e-4

    def test_simulation_moments(self, tweedie):
        rng = np.random.default_rng(2024)
        mu = np.full(200_000, 0.5)
        y = simulate_tweedie(mu, 0.3, 1.5, rng)
        assert abs(y.mean() - 0.5) < 0.01
        assert abs(y.var() / (0.3 * 0.5 ** 1.5) - 1.0) < 0.05
        assert abs(np.mean(y == 0) - np.exp(-0.5 ** 0.5 / (0.3 * 0.5))) < 0.005

    def test_rejects_negative_response(self, tweedie):
        with raises(DomainError):
            tweedie.unit_deviance(np.array([-1.0]), np.array([1.0]))

    def test_invalid_dispersion(self, tweedie):
        with raises(EvaluationError):
            tweedie.log_density(np.array([1.0]), np.array([1.0]), 0.0)

    def test_scale_parameters(self, tweedie):
        assert tweedie.n_scale_parameters == 1
        assert tweedie.with_power(1.5, estimated=True).n_scale_parameters == 2
        assert Gaussian.n_scale_parameters == 1


class TestDescriptor:
    def test_parse(self):
        assert from_descriptor('gaussian') is Gaussian
        assert from_descriptor('Gamma(link=log)').link is Log
        assert from_descriptor('tweedie(link=log, p=1.5)').power == 1.5
        assert not from_descriptor('tweedie(p=1.5)').power_estimated
        assert from_descriptor('tweedie(estimated=true, p=1.5)').power_estimated
        assert from_descriptor('gaussian(link=log)').link is Log

    def test_round_trip(self, tweedie):
        for family in (Gaussian, Gamma, tweedie, tweedie.with_power(1.3, estimated=True), Gaussian.with_link('log')):
            again = from_descriptor(family.descriptor)
            assert type(again) is type(family)
            assert again.descriptor == family.descriptor

    @mark.parametrize('text', ['poisson', 'gamma(link=probit)', 'gaussian(p=1.5)', 'tweedie(p=one)', 'gamma(log)',
                                     'tweedie(estimated=true)', 'tweedie(p=1.5, estimated=maybe)'])
    def test_rejected(self, text):
        with raises(ParseError) as e:
            from_descriptor(text)
        assert e.value.prefix == 'ERROR:model_spec:parse:'

    def test_with_phi(self):
        assert Gamma.with_phi(2).phi == 2.0
        assert Gamma.phi is None
