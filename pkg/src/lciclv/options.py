from typing import Optional

import pydantic
if pydantic.__version__ <"2.0.0":
    from pydantic import BaseModel, validator
else:
    from pydantic.v1 import BaseModel, validator

from .halton import DEFAULT_SKIP

SE_METHODS = ("hessian", "bhhh")
CRITERIA_UNITS = ("respondents", "observations")


class EstimationOptions(BaseModel):
    draws: Optional[int] = None
    """ R per respondent; None falls back to the model spec """
    seed: int = 0
    skip: int = DEFAULT_SKIP
    scramble: bool = False
    max_iter: int = 500
    tol: float = 1e-5
    """ convergence when max |gradient| <= tol """
    ll_rtol: float = 1e-9
    """ ... or when the relative log-likelihood change between iterations <= ll_rtol """
    starts: int = 5
    jitter_sd: float = 0.5
    se_method: str = "hessian"
    criteria_units: str = "respondents"
    threads: Optional[int] = None
    chunk_size: Optional[int] = None

    class Config:
        allow_mutation = False

    @validator("se_method")
    def known_se_method(cls, v):
        if v not in SE_METHODS:
            raise ValueError(f"se_method must be one of {SE_METHODS}")
        return v

    @validator("criteria_units")
    def known_units(cls, v):
        if v not in CRITERIA_UNITS:
            raise ValueError(f"criteria_units must be one of {CRITERIA_UNITS}")
        return v

    @validator("draws")
    def positive_draws(cls, v):
        if v is not None and v < 1:
            raise ValueError("draws must be >= 1")
        return v

    @validator("starts", "max_iter")
    def at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    def with_changes(self, **changes)->"EstimationOptions":
        return self.copy(update=changes)
