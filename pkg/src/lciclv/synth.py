"""Synthetic LC-ICLV panels generated from known parameters.

Every respondent gets its own random stream, SeedSequence(seed, spawn_key=(i,)), so respondent i
is the same person whatever n is and however the work is split across threads.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml

import pydantic
if pydantic.__version__ <"2.0.0":
    from pydantic import BaseModel, Field, validator
else:
    from pydantic.v1 import BaseModel, Field, validator

from .choice import realize_coefs, utility
from .common import GlobalSettings
from .data_io import dataset_meta
from .distributions import softmax
from .exceptions import ConfigError
from .measurement import indicator_cell_prob
from .membership import membership_probs
from .model_spec import CovariateSpec, ModelSpec, dummy_name
from .parameters import ParameterLayout, ParameterSet
from .pydantic_helpers import parse_config
from .schema import ChoiceScenario, Dataset, Respondent
from .structural import latent_mean, realize_latents

CHOICE_NOISE = ("probability", "gumbel")


class SynthConfig(BaseModel):
    spec: Union[Dict[str, Any], str]
    """ inline model spec mapping, or a path to a model spec YAML (relative to the config file) """
    n: int = 500
    t: int = 10
    seed: int = 0
    covariate_law: Dict[str, Union[str, Dict[str, Any]]] = Field(default_factory=dict)
    """ per covariate: "normal", {bernoulli: p} or, for categorical ones, {categorical: [p_level, ...]} """
    choice_noise: str = "probability"
    theta: Dict[str, float] = Field(default_factory=dict)
    """ constrained true values by full parameter name; the rest take neutral defaults """
    base_dir: Optional[str] = None

    class Config:
        allow_mutation = False

    @validator("n", "t")
    def positive(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @validator("choice_noise")
    def known_noise(cls, v):
        if v not in CHOICE_NOISE:
            raise ValueError(f"choice_noise must be one of {CHOICE_NOISE}")
        return v

    @classmethod
    def for_spec(cls, spec:ModelSpec, **kwargs)->"SynthConfig":
        return cls(spec=spec.dict(), **kwargs)

    @classmethod
    def from_yaml(cls, path:Union[str, Path])->"SynthConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Synthesis config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse {path}: {e}") from e
        if isinstance(data, dict):
            data.setdefault("base_dir", str(path.parent))
        return parse_config(data, cls, source=str(path))

    def model_spec(self)->ModelSpec:
        if isinstance(self.spec, dict):
            return ModelSpec.from_dict(self.spec, source="inline model spec")
        path = Path(self.spec)
        if not path.is_absolute() and self.base_dir:
            path = Path(self.base_dir) / path
        return ModelSpec.from_yaml(path)

    def true_flat(self, spec:ModelSpec=None)->np.ndarray:
        layout = ParameterLayout(spec or self.model_spec())
        return layout.from_named(self.theta)

    def true_parameters(self, spec:ModelSpec=None)->ParameterSet:
        spec = spec or self.model_spec()
        return ParameterLayout(spec).unpack(self.true_flat(spec))


@dataclass
class SynthTruth:
    classes: np.ndarray        # (N,) 1-based true class
    latents: np.ndarray        # (N, G)
    coefficients: List[np.ndarray]


def respondent_rng(seed:int, index:int)->np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _draw_covariate(cov:CovariateSpec, law, rng:np.random.Generator)->List[float]:
    if cov.kind == "categorical":
        levels = cov.levels
        probs = np.full(len(levels), 1.0 / len(levels))
        if isinstance(law, dict) and "categorical" in law:
            probs = np.asarray(law["categorical"], dtype=float)
            if len(probs) != len(levels) or np.any(probs < 0) or not probs.sum() > 0:
                raise ConfigError(f"categorical law of {cov.name} needs {len(levels)} non-negative probabilities")
            probs = probs / probs.sum()
        level = levels[int(rng.choice(len(levels), p=probs))]
        return [1.0 if level == dummy else 0.0 for dummy in cov.dummy_levels()]
    if law is None or law == "normal":
        return [float(rng.standard_normal())]
    if isinstance(law, dict) and "bernoulli" in law:
        return [float(rng.random() < float(law["bernoulli"]))]
    if isinstance(law, dict) and "normal" in law:
        mean, sd = law["normal"]
        return [float(mean + sd * rng.standard_normal())]
    raise ConfigError(f"unknown covariate law {law!r} for {cov.name}")


def _scenario_attributes(spec:ModelSpec, t:int, rng:np.random.Generator)->np.ndarray:
    grid = spec.scenario_grid
    A = len(spec.scenario_attributes)
    if list(spec.scenario_attributes) == [grid.wt_name, grid.tt_name]:
        start = int(rng.integers(len(grid.combos)))
        picks = [grid.combos[(start + i) % len(grid.combos)] for i in range(t)]
        return np.array([[grid.wt_levels[wt], grid.tt_levels[tt]] for wt, tt in picks], dtype=float)
    return rng.standard_normal((t, A))


def simulate_respondent(index:int, config:SynthConfig, spec:ModelSpec, theta:ParameterSet):
    rng = respondent_rng(config.seed, index)
    x = []
    for cov in spec.covariates:
        x.extend(_draw_covariate(cov, config.covariate_law.get(cov.name), rng))
    x = np.asarray(x, dtype=float)
    names = spec.covariate_names
    z = np.array([x[names.index(m)] for m in spec.membership_covariates], dtype=float)

    q = int(rng.choice(spec.Q, p=membership_probs(z, theta.membership))) + 1
    cls = theta.for_class(q)
    latent = realize_latents(latent_mean(x, cls.structural), cls.structural.psi, rng.standard_normal(spec.G)) if spec.G else np.zeros(0)

    indicators = []
    for h, categories in enumerate(spec.categories):
        probs = np.array([indicator_cell_prob(latent, h, m, cls.measurement) for m in range(1, categories + 1)])
        indicators.append(int(rng.choice(categories, p=probs / probs.sum())) + 1)

    coefs = realize_coefs(cls.choice, rng.standard_normal(cls.choice.P))
    scenarios = []
    for attributes in _scenario_attributes(spec, config.t, rng):
        scenario = ChoiceScenario(attributes=[float(a) for a in attributes], chosen=0)
        v = utility(scenario, x, latent, coefs, cls.choice)
        if config.choice_noise == "gumbel":
            chosen = int(np.argmax(v + rng.gumbel(size=v.shape)))
        else:
            chosen = int(rng.choice(len(v), p=softmax(v)))
        scenarios.append(ChoiceScenario(attributes=scenario.attributes, chosen=chosen))
    respondent = Respondent(id=f"R{index + 1:05d}", z=list(z), x=list(x), indicators=indicators, scenarios=scenarios)
    return respondent, q, latent, coefs.values


def simulate_dataset(config:SynthConfig, return_truth:bool=False, threads:int=None
                     )->Union[Dataset, Tuple[Dataset, SynthTruth]]:
    """Draws class, latent variables, indicator responses, random coefficients and choices per respondent."""
    spec = config.model_spec()
    theta = config.true_parameters(spec)
    threads = max(1, threads or GlobalSettings.get_current_settings().threads or 1)
    work = lambda i: simulate_respondent(i, config, spec, theta)
    if threads > 1 and config.n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            people = list(pool.map(work, range(config.n)))
    else:
        people = [work(i) for i in range(config.n)]
    dataset = Dataset(respondents=[p[0] for p in people], meta=dataset_meta(spec))
    if not return_truth:
        return dataset
    truth = SynthTruth(classes=np.array([p[1] for p in people], dtype=int),
                       latents=np.array([p[2] for p in people], dtype=float).reshape(config.n, spec.G),
                       coefficients=[p[3] for p in people])
    return dataset, truth
