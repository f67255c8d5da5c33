import numpy as np
import pytest

from lciclv import GlobalSettings, ModelSpec
from lciclv.data_io import write_dataset
from lciclv.synth import SynthConfig, simulate_dataset


@pytest.fixture(autouse=True)
def quiet_settings():
    GlobalSettings.define_settings(settings_type="tests", logging_level=100, verbose=False, threads=1)
    GlobalSettings.switch_settings("tests")
    yield
    GlobalSettings.switch_settings("default")


@pytest.fixture
def logit_spec()->ModelSpec:
    """Plain binary logit on the two scenario attributes."""
    return ModelSpec(utility_covariates=["wt", "tt"], draws=1)


LOGIT_THETA = {"choice[1].asc": 2.0, "choice[1].beta[wt]": -0.6, "choice[1].beta[tt]": -0.4}


@pytest.fixture
def logit_dataset(logit_spec):
    config = SynthConfig.for_spec(logit_spec, n=300, t=10, seed=11, theta=LOGIT_THETA)
    return simulate_dataset(config)


def iclv_spec_dict(classes:int=1, random=("wt",), **changes)->dict:
    data = {
        "classes": classes,
        "draws": 50,
        "covariates": [{"name": "income"}, {"name": "student"}],
        "indicators": [{"name": "A1"}, {"name": "A2"}, {"name": "A3"}],
        "latent_variables": [{"name": "attitude", "indicators": ["A1", "A2", "A3"], "structural_covariates": ["income"]}],
        "membership_covariates": ["student"] if classes > 1 else [],
        "utility_covariates": ["wt", "tt", "student"],
        "random_coefficients": list(random),
        "latent_in_utility": ["attitude"],
    }
    data.update(changes)
    return data


ICLV_THETA = {
    "structural[1].lambda[attitude~income]": 0.5,
    "measurement[1].loading[A2]": 1.3,
    "measurement[1].loading[A3]": 0.8,
    "choice[1].asc": 2.0,
    "choice[1].beta[tt]": -0.4,
    "choice[1].beta[student]": 0.3,
    "choice[1].gamma[attitude]": -0.6,
    "choice[1].mu[wt]": -0.7,
    "choice[1].sigma[wt]": 0.3,
}


@pytest.fixture
def iclv_spec()->ModelSpec:
    """One class, one construct with three indicators, random waiting-time coefficient."""
    return ModelSpec.from_dict(iclv_spec_dict())


@pytest.fixture
def iclv_config(iclv_spec)->SynthConfig:
    return SynthConfig.for_spec(iclv_spec, n=40, t=10, seed=5, theta=ICLV_THETA,
                                covariate_law={"student": {"bernoulli": 0.4}})


@pytest.fixture
def iclv_dataset(iclv_config):
    return simulate_dataset(iclv_config)


@pytest.fixture
def two_class_spec()->ModelSpec:
    """Two classes, one construct, random waiting-time and travel-time coefficients."""
    return ModelSpec.from_dict(iclv_spec_dict(classes=2, random=("wt", "tt")))


TWO_CLASS_THETA = {
    "membership[2].intercept": 0.2,
    "membership[2].gamma[student]": -0.5,
    "structural[1].lambda[attitude~income]": 0.5,
    "structural[2].lambda[attitude~income]": -0.3,
    "measurement[1].loading[A2]": 1.3,
    "measurement[2].loading[A2]": 1.1,
    "choice[1].asc": 2.5,
    "choice[1].beta[student]": 0.3,
    "choice[1].gamma[attitude]": -0.6,
    "choice[1].mu[wt]": -0.9,
    "choice[1].mu[tt]": -0.3,
    "choice[1].sigma[wt]": 0.3,
    "choice[1].sigma[tt]": 0.2,
    "choice[2].asc": -0.5,
    "choice[2].gamma[attitude]": 0.8,
    "choice[2].mu[wt]": -0.1,
    "choice[2].mu[tt]": -0.1,
    "choice[2].sigma[wt]": 0.4,
    "choice[2].sigma[tt]": 0.2,
}


@pytest.fixture
def two_class_config(two_class_spec)->SynthConfig:
    return SynthConfig.for_spec(two_class_spec, n=30, t=10, seed=9, theta=TWO_CLASS_THETA,
                                covariate_law={"student": {"bernoulli": 0.4}})


@pytest.fixture
def data_dir(tmp_path, iclv_spec, iclv_dataset):
    directory = tmp_path / "data"
    write_dataset(iclv_dataset, iclv_spec, directory)
    (directory / "model.yaml").write_text(iclv_spec.to_yaml(), encoding="utf-8")
    return directory


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
