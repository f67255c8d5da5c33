import numpy as np
import pytest

from lciclv import EstimationOptions, ModelSpec, SynthConfig, quadrature_person_likelihood, recovery_experiment, simulate_dataset
from lciclv.exceptions import DomainError, QuadratureError
from lciclv.measurement import MeasurementParams, indicator_cell_prob
from lciclv.oracle import align_classes, analytic_indicator_marginal, gauss_hermite_grid

from conftest import LOGIT_THETA, TWO_CLASS_THETA, iclv_spec_dict


class TestGaussHermite:

    def test_weights_integrate_the_standard_normal(self):
        points, weights = gauss_hermite_grid(2, 10)
        assert points.shape == (100, 2)
        assert weights.sum() == pytest.approx(1.0)
        assert np.sum(weights * points[:, 0] ** 2) == pytest.approx(1.0)
        assert np.sum(weights * points[:, 0] * points[:, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_no_dimensions(self):
        points, weights = gauss_hermite_grid(0, 10)
        assert points.shape == (1, 0)
        assert weights.tolist() == [1.0]

    def test_needs_a_node(self):
        with pytest.raises(DomainError):
            gauss_hermite_grid(1, 0)


def test_indicator_marginal_matches_quadrature():
    params = MeasurementParams(loadings=np.full((1, 1), 1.4), intercepts=np.array([0.2]), error_sd=np.array([0.8]),
                               thresholds=(np.array([-1.0, 0.0, 1.5]),), indicator_map=(0,))
    points, weights = gauss_hermite_grid(1, 60)
    mean, variance = 0.3, 2.0
    latent = mean + np.sqrt(variance) * points
    total = 0.0
    for m in range(1, 5):
        marginal = analytic_indicator_marginal(mean, variance, 0, m, params)
        numeric = sum(w * indicator_cell_prob(eta, 0, m, params) for eta, w in zip(latent, weights))
        assert marginal == pytest.approx(numeric, abs=1e-6)
        total += marginal
    assert total == pytest.approx(1.0)


def test_quadrature_refuses_high_dimensions():
    data = iclv_spec_dict(random=("wt", "tt"))
    data["indicators"] = [{"name": n} for n in ("A1", "A2", "A3", "B1", "B2")]
    data["latent_variables"].append({"name": "comfort", "indicators": ["B1", "B2"]})
    data["latent_in_utility"] = ["attitude", "comfort"]
    spec = ModelSpec.from_dict(data)
    config = SynthConfig.for_spec(spec, n=1, t=2)
    respondent = simulate_dataset(config).respondents[0]
    with pytest.raises(QuadratureError):
        quadrature_person_likelihood(respondent, 1, config.true_parameters(spec))


def test_swapped_labels_are_aligned():
    true_classes = np.array([1, 1, 2, 2, 2])
    posterior = np.array([[0.1, 0.9], [0.2, 0.8], [0.7, 0.3], [0.6, 0.4], [0.4, 0.6]])
    label_map, aligned, accuracy = align_classes(true_classes, posterior)
    assert label_map == {1: 2, 2: 1}
    assert aligned.tolist() == [[2.0, 0.0], [1.0, 2.0]]
    assert accuracy == pytest.approx(0.8)


def test_one_class_recovery_report(logit_spec):
    config = SynthConfig.for_spec(logit_spec, n=300, t=10, seed=11, theta=LOGIT_THETA)
    report = recovery_experiment(config, EstimationOptions(starts=1))
    assert list(report.table["parameter"]) == ["choice[1].asc", "choice[1].beta[wt]", "choice[1].beta[tt]"]
    assert report.table["truth"].tolist() == pytest.approx([2.0, -0.6, -0.4])
    assert report.table["z"].notna().all()
    assert report.label_map == {1: 1}
    assert report.accuracy == 1.0
    assert report.confusion.tolist() == [[300.0]]


@pytest.mark.slow
def test_two_class_parameters_are_recovered(two_class_spec):
    config = SynthConfig.for_spec(two_class_spec, n=2000, t=10, seed=31, theta=TWO_CLASS_THETA,
                                  covariate_law={"student": {"bernoulli": 0.4}})
    report = recovery_experiment(config, EstimationOptions(draws=2000))
    assert report.result.draws_used == 2000
    assert report.table["z"].notna().all()
    assert report.within_3 >= 0.9
    assert report.accuracy >= 0.85
