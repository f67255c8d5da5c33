from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

import pydantic
if pydantic.__version__ <"2.0.0":
    from pydantic import BaseModel, Field, PrivateAttr
else:
    from pydantic.v1 import BaseModel, Field, PrivateAttr


class ChoiceScenario(BaseModel):
    attributes: List[float] = Field(default_factory=list)
    chosen: int

    class Config:
        allow_mutation = False


class Respondent(BaseModel):
    id: str
    z: List[float] = Field(default_factory=list)
    """ membership covariates """
    x: List[float] = Field(default_factory=list)
    """ explanatory covariates (dummy coded) """
    indicators: List[Optional[int]] = Field(default_factory=list)
    """ ordinal responses 1..C_h, None when missing """
    scenarios: List[ChoiceScenario] = Field(default_factory=list)

    class Config:
        allow_mutation = False

    @property
    def T(self)->int:
        return len(self.scenarios)


class DatasetMeta(BaseModel):
    covariate_names: List[str] = Field(default_factory=list)
    membership_names: List[str] = Field(default_factory=list)
    indicator_names: List[str] = Field(default_factory=list)
    categories: List[int] = Field(default_factory=list)
    attribute_names: List[str] = Field(default_factory=list)
    alternatives: int = 2

    class Config:
        allow_mutation = False


@dataclass(frozen=True)
class PanelArrays:
    """Dense, padded numpy view of a Dataset used by the likelihood kernels."""
    ids: List[str]
    x: np.ndarray           # (N, K)
    z: np.ndarray           # (N, M)
    indicators: np.ndarray  # (N, H) int, 0 = missing
    observed: np.ndarray    # (N, H) bool
    attributes: np.ndarray  # (N, Tmax, A)
    chosen: np.ndarray      # (N, Tmax) int
    scenario_mask: np.ndarray  # (N, Tmax) bool
    n_scenarios: np.ndarray    # (N,)

    @property
    def N(self)->int:
        return len(self.ids)

    def take(self, indices)->"PanelArrays":
        idx = np.asarray(indices)
        return PanelArrays(
            ids=[self.ids[i] for i in idx],
            x=self.x[idx], z=self.z[idx],
            indicators=self.indicators[idx], observed=self.observed[idx],
            attributes=self.attributes[idx], chosen=self.chosen[idx],
            scenario_mask=self.scenario_mask[idx], n_scenarios=self.n_scenarios[idx])


class Dataset(BaseModel):
    respondents: List[Respondent]
    meta: DatasetMeta

    _arrays: Optional[PanelArrays] = PrivateAttr(None)

    class Config:
        allow_mutation = False

    @property
    def N(self)->int:
        return len(self.respondents)

    @property
    def n_observations(self)->int:
        return sum(r.T for r in self.respondents)

    def index_of(self)->Dict[str, int]:
        return {r.id: i for i, r in enumerate(self.respondents)}

    def subset(self, indices)->"Dataset":
        return Dataset(respondents=[self.respondents[i] for i in indices], meta=self.meta)

    def arrays(self)->PanelArrays:
        if self._arrays is None:
            self._arrays = _build_arrays(self)
        return self._arrays


def _build_arrays(dataset:Dataset)->PanelArrays:
    meta = dataset.meta
    N = dataset.N
    K, M, H, A = len(meta.covariate_names), len(meta.membership_names), len(meta.indicator_names), len(meta.attribute_names)
    t_max = max([r.T for r in dataset.respondents], default=0)
    x = np.zeros((N, K))
    z = np.zeros((N, M))
    indicators = np.zeros((N, H), dtype=np.int64)
    attributes = np.zeros((N, t_max, A))
    chosen = np.zeros((N, t_max), dtype=np.int64)
    mask = np.zeros((N, t_max), dtype=bool)
    n_scenarios = np.zeros(N, dtype=np.int64)
    for n, r in enumerate(dataset.respondents):
        if K:
            x[n] = r.x
        if M:
            z[n] = r.z
        if H:
            indicators[n] = [0 if v is None else int(v) for v in r.indicators]
        for t, s in enumerate(r.scenarios):
            if A:
                attributes[n, t] = s.attributes
            chosen[n, t] = s.chosen
            mask[n, t] = True
        n_scenarios[n] = r.T
    for arr in (x, z, indicators, attributes, chosen, mask, n_scenarios):
        arr.setflags(write=False)
    return PanelArrays(ids=[r.id for r in dataset.respondents], x=x, z=z,
                       indicators=indicators, observed=indicators > 0,
                       attributes=attributes, chosen=chosen, scenario_mask=mask,
                       n_scenarios=n_scenarios)


class Violation(BaseModel):
    respondent_id: Optional[str]
    field: str
    message: str

    def __str__(self) -> str:
        who = f"respondent {self.respondent_id}" if self.respondent_id is not None else "dataset"
        return f"{who}: {self.field} - {self.message}"


class ValidationReport(BaseModel):
    violations: List[Violation] = Field(default_factory=list)

    @property
    def is_clean(self)->bool:
        return not self.violations

    def __len__(self)->int:
        return len(self.violations)

    def add(self, respondent_id:Optional[str], field:str, message:str):
        self.violations.append(Violation(respondent_id=respondent_id, field=field, message=message))

    def summary(self)->str:
        lines = [f"{len(self.violations)} violations"]
        lines.extend(str(v) for v in self.violations)
        return "\n".join(lines)
