import dataclasses
import math

import numpy as np
import pytest

from lciclv import (Dataset, DrawError, LikelihoodEngine, ModelSpec, SynthConfig, TraceContext, build_draws,
                    person_likelihood, posterior_membership, simulate_dataset, total_loglik)
from lciclv.choice import panel_loglik_given_draw, realize_coefs
from lciclv.distributions import Covariance
from lciclv.likelihood import class_conditional_sim_likelihood, class_conditional_sim_loglik, class_draw_logliks
from lciclv.oracle import quadrature_person_loglik

from conftest import ICLV_THETA, TWO_CLASS_THETA, iclv_spec_dict

TWO_CONSTRUCTS = {
    "classes": 2,
    "covariates": [{"name": "income"}],
    "indicators": [{"name": "A1"}, {"name": "A2"}, {"name": "A3"},
                   {"name": "B1", "categories": 4}, {"name": "B2", "categories": 4}],
    "latent_variables": [{"name": "attitude", "indicators": ["A1", "A2", "A3"], "structural_covariates": ["income"]},
                         {"name": "comfort", "indicators": ["B1", "B2"]}],
    "membership_covariates": ["income"],
    "utility_covariates": ["wt", "tt", "income"],
    "random_coefficients": ["tt"],
    "latent_in_utility": ["attitude", "comfort"],
}


def engine_for(dataset:Dataset, spec:ModelSpec, R:int, **kwargs)->LikelihoodEngine:
    return LikelihoodEngine(dataset, spec, build_draws(dataset.N, R, spec.draw_dims), **kwargs)


def small_problem(spec_dict:dict, n:int=12, t:int=5, seed:int=1):
    spec = ModelSpec.from_dict(spec_dict)
    config = SynthConfig.for_spec(spec, n=n, t=t, seed=seed, theta={"choice[1].asc": 1.0})
    return spec, simulate_dataset(config), config


def numeric_gradient(engine:LikelihoodEngine, flat:np.ndarray, step:float=1e-5)->np.ndarray:
    grad = np.zeros_like(flat)
    for i in range(len(flat)):
        up, down = flat.copy(), flat.copy()
        up[i] += step
        down[i] -= step
        grad[i] = (engine.loglik(up) - engine.loglik(down)) / (2 * step)
    return grad


class TestAgainstPerRespondentPath:

    def test_two_class_model(self, two_class_spec, two_class_config):
        dataset = simulate_dataset(two_class_config)
        theta = two_class_config.true_parameters(two_class_spec)
        engine = engine_for(dataset, two_class_spec, 50, threads=1, chunk_size=8)
        evaluation = engine.evaluate(engine.layout.pack(theta))
        for n, respondent in enumerate(dataset.respondents):
            person = person_likelihood(respondent, theta, engine.draws.for_respondent(n))
            assert evaluation.person_loglik[n] == pytest.approx(person.log_value, rel=1e-10)
            assert np.allclose(evaluation.class_loglik[n], person.class_log_likelihood, rtol=1e-10)
            assert np.allclose(evaluation.posterior[n], posterior_membership(respondent, theta, engine.draws.for_respondent(n)))
        assert evaluation.loglik == pytest.approx(math.fsum(evaluation.person_loglik))
        assert total_loglik(dataset, theta, engine.draws, threads=1) == pytest.approx(evaluation.loglik, rel=1e-12)

    def test_unequal_panels_are_masked(self, iclv_spec, iclv_dataset, iclv_config):
        respondents = list(iclv_dataset.respondents)
        respondents[0] = respondents[0].copy(update={"scenarios": respondents[0].scenarios[:4]})
        respondents[3] = respondents[3].copy(update={"scenarios": respondents[3].scenarios[:7]})
        dataset = Dataset(respondents=respondents, meta=iclv_dataset.meta)
        theta = iclv_config.true_parameters(iclv_spec)
        engine = engine_for(dataset, iclv_spec, 30, threads=1)
        evaluation = engine.evaluate(engine.layout.pack(theta))
        for n in (0, 3, 5):
            expected = class_conditional_sim_loglik(respondents[n], 1, theta, engine.draws.for_respondent(n))
            assert evaluation.person_loglik[n] == pytest.approx(expected, rel=1e-10)
        predicted = engine.predict(engine.layout.pack(theta))
        assert predicted.shape == (dataset.N, 10)
        assert np.all(np.isnan(predicted[0, 4:])) and np.all(np.isfinite(predicted[0, :4]))
        assert np.all((predicted[1] > 0) & (predicted[1] < 1))


@pytest.mark.parametrize("changes", [
    {},
    {"identification": {"full_covariance": True}},
    {"identification": {"shared_thresholds": True, "free_error_variance": True}},
    {"identification": {"fix_latent_variance": True}, "classes": 1, "membership_covariates": []},
])
def test_analytic_gradient_matches_finite_differences(changes, rng):
    spec_dict = dict(TWO_CONSTRUCTS)
    spec_dict.update(changes)
    spec, dataset, config = small_problem(spec_dict)
    engine = engine_for(dataset, spec, 20, threads=1)
    flat = config.true_flat(spec) + rng.normal(0.0, 0.1, engine.layout.n_free)
    ll, grad = engine.loglik_and_gradient(flat)
    assert ll == pytest.approx(engine.loglik(flat), rel=1e-12)
    assert np.allclose(grad, numeric_gradient(engine, flat), rtol=1e-4, atol=1e-4)


def test_gradient_with_missing_indicators_and_class_specific_utilities(rng):
    spec_dict = iclv_spec_dict(classes=2, random=("wt",), drop_missing_indicators=True,
                               utility_covariates={1: ["wt", "tt"], 2: ["wt", "student"]})
    spec, dataset, config = small_problem(spec_dict)
    respondents = list(dataset.respondents)
    respondents[2] = respondents[2].copy(update={"indicators": [None] + list(respondents[2].indicators[1:])})
    dataset = Dataset(respondents=respondents, meta=dataset.meta)
    engine = engine_for(dataset, spec, 20, threads=1)
    flat = config.true_flat(spec) + rng.normal(0.0, 0.1, engine.layout.n_free)
    assert np.allclose(engine.loglik_and_gradient(flat)[1], numeric_gradient(engine, flat), rtol=1e-4, atol=1e-4)


@pytest.mark.parametrize("seed", range(20))
def test_two_class_gradient_at_random_points(seed, two_class_spec):
    config = SynthConfig.for_spec(two_class_spec, n=12, t=5, seed=seed, theta=TWO_CLASS_THETA,
                                  covariate_law={"student": {"bernoulli": 0.4}})
    dataset = simulate_dataset(config)
    engine = engine_for(dataset, two_class_spec, 20, threads=1)
    flat = config.true_flat(two_class_spec) + np.random.default_rng(seed).normal(0.0, 0.2, engine.layout.n_free)
    ll, grad = engine.loglik_and_gradient(flat)
    assert math.isfinite(ll)
    assert np.allclose(grad, numeric_gradient(engine, flat), rtol=1e-4, atol=1e-4)


def test_thread_count_never_changes_results(two_class_spec, two_class_config):
    dataset = simulate_dataset(two_class_config)
    flat = two_class_config.true_flat(two_class_spec)
    single = engine_for(dataset, two_class_spec, 25, threads=1, chunk_size=4).evaluate(flat, gradient=True)
    pooled = engine_for(dataset, two_class_spec, 25, threads=4, chunk_size=4).evaluate(flat, gradient=True)
    assert single.loglik == pooled.loglik
    assert np.array_equal(single.scores, pooled.scores)
    assert np.array_equal(single.posterior, pooled.posterior)


def test_no_spread_collapses_to_the_fixed_coefficient_kernel():
    spec = ModelSpec.from_dict({"utility_covariates": ["wt", "tt"], "random_coefficients": ["wt"], "draws": 40})
    config = SynthConfig.for_spec(spec, n=10, t=10, seed=2, theta={"choice[1].asc": 1.5, "choice[1].mu[wt]": -0.4})
    dataset = simulate_dataset(config)
    theta = config.true_parameters(spec)
    cls = theta.for_class(1)
    fixed = dataclasses.replace(cls.choice, random_sigma=np.zeros(1))
    theta = dataclasses.replace(theta, classes=(dataclasses.replace(cls, choice=fixed),))
    draws = build_draws(dataset.N, 40, 1)
    for n, respondent in enumerate(dataset.respondents):
        expected = panel_loglik_given_draw(respondent, np.zeros(0), realize_coefs(fixed, np.zeros(1)), fixed)
        assert class_conditional_sim_loglik(respondent, 1, theta, draws.for_respondent(n)) == pytest.approx(expected, rel=1e-12)


def test_point_mass_limit(iclv_spec, iclv_dataset, iclv_config):
    theta = iclv_config.true_parameters(iclv_spec)
    cls = theta.for_class(1)
    structural = dataclasses.replace(cls.structural, psi=Covariance.from_variances([0.0]))
    choice = dataclasses.replace(cls.choice, random_sigma=np.zeros(1))
    theta = dataclasses.replace(theta, classes=(dataclasses.replace(cls, structural=structural, choice=choice),))
    draws = build_draws(iclv_dataset.N, 15, iclv_spec.draw_dims)
    for n, respondent in enumerate(iclv_dataset.respondents[:10]):
        at_mean = class_draw_logliks(respondent, 1, theta, np.zeros((1, iclv_spec.draw_dims)))[0]
        assert class_conditional_sim_loglik(respondent, 1, theta, draws.for_respondent(n)) == pytest.approx(at_mean, rel=1e-12)
        assert quadrature_person_loglik(respondent, 1, theta, nodes=5) == pytest.approx(at_mean, rel=1e-10)


def test_simulation_agrees_with_quadrature_in_one_dimension():
    spec = ModelSpec.from_dict(iclv_spec_dict(random=(), utility_covariates=["wt", "tt"]))
    theta_values = {k: v for k, v in ICLV_THETA.items() if "mu[" not in k and "sigma[" not in k and "student" not in k}
    theta_values["choice[1].beta[wt]"] = -0.7
    config = SynthConfig.for_spec(spec, n=20, t=10, seed=4, theta=theta_values)
    dataset = simulate_dataset(config)
    theta = config.true_parameters(spec)
    draws = build_draws(dataset.N, 2000, spec.draw_dims)
    gaps = np.array([abs(class_conditional_sim_loglik(r, 1, theta, draws.for_respondent(n))
                         - quadrature_person_loglik(r, 1, theta, nodes=50))
                     for n, r in enumerate(dataset.respondents)])
    assert np.mean(gaps <= 0.01) >= 0.95


def test_simulation_agrees_with_quadrature_in_two_dimensions(iclv_spec, iclv_config):
    dataset = simulate_dataset(iclv_config.copy(update={"n": 15}))
    theta = iclv_config.true_parameters(iclv_spec)
    draws = build_draws(dataset.N, 2000, iclv_spec.draw_dims)
    gaps = np.array([abs(class_conditional_sim_loglik(r, 1, theta, draws.for_respondent(n))
                         - quadrature_person_loglik(r, 1, theta, nodes=40))
                     for n, r in enumerate(dataset.respondents)])
    assert np.mean(gaps <= 0.02) >= 0.9


def test_extreme_parameters_floor_instead_of_failing(iclv_spec, iclv_dataset):
    values = dict(ICLV_THETA)
    values["choice[1].asc"] = 900.0
    flat = SynthConfig.for_spec(iclv_spec, theta=values).true_flat(iclv_spec)
    engine = engine_for(iclv_dataset, iclv_spec, 10, threads=1)
    with TraceContext() as trace:
        evaluation = engine.evaluate(flat, gradient=True)
    assert np.isfinite(evaluation.loglik)
    assert np.all(np.isfinite(evaluation.scores))
    assert evaluation.underflow > 0
    assert trace.underflow_events >= evaluation.underflow


def test_class_likelihood_floor_is_reported(iclv_spec, iclv_dataset):
    values = dict(ICLV_THETA)
    values["choice[1].asc"] = 900.0
    theta = SynthConfig.for_spec(iclv_spec, theta=values).true_parameters(iclv_spec)
    chooser_of_opt_out = next(n for n, r in enumerate(iclv_dataset.respondents) if any(s.chosen == 0 for s in r.scenarios))
    draws = build_draws(iclv_dataset.N, 5, iclv_spec.draw_dims)
    with TraceContext() as trace:
        value = class_conditional_sim_likelihood(iclv_dataset.respondents[chooser_of_opt_out], 1, theta,
                                                 draws.for_respondent(chooser_of_opt_out))
    assert value == 1e-300
    assert trace.underflow_events > 0


def test_measurement_can_be_left_out(iclv_spec, iclv_dataset, iclv_config):
    engine = engine_for(iclv_dataset, iclv_spec, 20, threads=1)
    flat = iclv_config.true_flat(iclv_spec)
    assert engine.choice_loglik(flat) > engine.loglik(flat)


def test_one_class_posterior_is_certain(iclv_spec, iclv_dataset, iclv_config):
    engine = engine_for(iclv_dataset, iclv_spec, 10, threads=1)
    assert np.allclose(engine.posterior(iclv_config.true_flat(iclv_spec)), 1.0)


def test_draws_must_fit_the_model(iclv_spec, iclv_dataset):
    with pytest.raises(DrawError):
        LikelihoodEngine(iclv_dataset, iclv_spec, build_draws(iclv_dataset.N - 1, 5, iclv_spec.draw_dims))
    with pytest.raises(DrawError):
        LikelihoodEngine(iclv_dataset, iclv_spec, build_draws(iclv_dataset.N, 5, iclv_spec.draw_dims - 1))


@pytest.mark.slow
def test_simulated_loglik_settles_as_draws_grow(two_class_spec):
    gaps = []
    for seed in range(5):
        config = SynthConfig.for_spec(two_class_spec, n=100, t=10, seed=40 + seed, theta=TWO_CLASS_THETA,
                                      covariate_law={"student": {"bernoulli": 0.4}})
        dataset = simulate_dataset(config)
        flat = config.true_flat(two_class_spec)
        ll = {R: engine_for(dataset, two_class_spec, R, threads=1).loglik(flat) for R in (500, 2000, 4000)}
        gaps.append((abs(ll[500] - ll[4000]), abs(ll[2000] - ll[4000])))
    early, late = np.array(gaps).T
    assert np.sum(late < early) >= 3
    assert late.sum() < early.sum()
