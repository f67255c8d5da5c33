import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
import yaml

import pydantic
if pydantic.__version__ <"2.0.0":
    from pydantic import BaseModel
else:
    from pydantic.v1 import BaseModel

from .common import as_plain_dict, print_log
from .distributions import std_normal_pdf
from .exceptions import ConfigError
from .model_spec import ModelSpec
from .options import EstimationOptions
from .parameters import ParameterLayout, ParameterSet

ESTIMATES_FILE = "estimates.csv"
FIT_FILE = "fit.csv"
POSTERIOR_FILE = "posterior.csv"
SWEEP_FILE = "sweep.csv"
MODEL_FILE = "model.yaml"
OPTIONS_FILE = "options.yaml"
DENSITY_FILE = "density.csv"
SUMMARY_FILE = "summary.txt"
TRACE_FILE = "trace.log"

PathLike = Union[str, Path]


class FitCriteria(BaseModel):
    ll: float
    ll_choice: Optional[float] = None
    ll_null: Optional[float] = None
    aic: float
    aicc: float
    bic: float
    caic: float
    hqic: float
    lr_vs_null: Optional[float] = None
    mcfadden_rho2_adj: Optional[float] = None
    k_params: int
    k_choice: Optional[int] = None
    n_units: int


class Convergence(BaseModel):
    converged: bool
    iterations: int
    grad_max: float
    message: str = ""
    start_logliks: List[float] = []
    best_start: int = 0


class ParameterEstimate(BaseModel):
    parameter: str
    block: str
    q: int
    estimate: float
    se: Optional[float] = None
    t: Optional[float] = None

    @property
    def full_name(self)->str:
        return f"{self.block}[{self.q}].{self.parameter}"


@dataclass
class EstimationResult:
    spec: ModelSpec
    options: EstimationOptions
    layout: ParameterLayout
    flat: np.ndarray
    estimates: List[ParameterEstimate]
    loglik: float
    criteria: FitCriteria
    class_shares: np.ndarray
    posterior: np.ndarray
    respondent_ids: List[str]
    convergence: Convergence
    covariance: Optional[np.ndarray] = None
    draws_used: int = 0
    extras: Dict[str, object] = field(default_factory=dict)

    @property
    def theta_hat(self)->ParameterSet:
        return self.layout.unpack(self.flat)

    @property
    def converged(self)->bool:
        return self.convergence.converged

    def estimate_of(self, full_name:str)->ParameterEstimate:
        for e in self.estimates:
            if e.full_name == full_name:
                return e
        raise KeyError(full_name)

    def estimates_frame(self)->pd.DataFrame:
        return pd.DataFrame(
            [{"parameter": e.parameter, "block": e.block, "class": e.q, "estimate": e.estimate, "se": e.se, "t": e.t}
             for e in self.estimates],
            columns=["parameter", "block", "class", "estimate", "se", "t"])

    def posterior_frame(self)->pd.DataFrame:
        frame = pd.DataFrame(self.posterior, columns=[f"class_{q}" for q in range(1, self.posterior.shape[1] + 1)])
        frame.insert(0, "respondent_id", self.respondent_ids)
        return frame


def criteria_row(criteria:FitCriteria)->dict:
    return {
        "ll": criteria.ll, "ll_choice": criteria.ll_choice, "ll_null": criteria.ll_null,
        "aic": criteria.aic, "aicc": criteria.aicc, "bic": criteria.bic, "caic": criteria.caic,
        "hqic": criteria.hqic, "lr_vs_null": criteria.lr_vs_null,
        "mcfadden_rho2_adj": criteria.mcfadden_rho2_adj, "k_params": criteria.k_params, "k_choice": criteria.k_choice,
        "n_units": criteria.n_units,
    }


def sweep_row(classes:int, result:EstimationResult, qualified:bool)->dict:
    row = {"classes": classes, "ll": result.criteria.ll, "bic": result.criteria.bic, "aic": result.criteria.aic,
           "caic": result.criteria.caic, "hqic": result.criteria.hqic, "aicc": result.criteria.aicc,
           "k": result.criteria.k_params, "converged": result.converged, "qualified": qualified}
    for q, share in enumerate(result.class_shares, start=1):
        row[f"share_{q}"] = float(share)
    return row


def coefficient_density_grid(theta:ParameterSet, points:int=201, width:float=4.0)->pd.DataFrame:
    """(class, coefficient, x, density) curves of every normal random coefficient, μ ± width·σ."""
    rows = []
    for q, cls in enumerate(theta.classes, start=1):
        choice = cls.choice
        for column, mu, sigma in zip(choice.random_columns, choice.random_mu, choice.random_sigma):
            if sigma <= 0:
                continue
            xs = np.linspace(mu - width * sigma, mu + width * sigma, points)
            density = std_normal_pdf((xs - mu) / sigma) / sigma
            rows.extend({"class": q, "coefficient": column.name, "x": x, "density": d} for x, d in zip(xs, density))
    return pd.DataFrame(rows, columns=["class", "coefficient", "x", "density"])


def format_summary(result:EstimationResult)->str:
    """Aligned plain-text table: one coefficient column pair (estimate, t) per class, fit block at the bottom."""
    frame = result.estimates_frame()
    frame["label"] = frame["block"] + "." + frame["parameter"]
    blocks = []
    for q in sorted(frame["class"].unique()):
        part = frame[frame["class"] == q].set_index("label")[["estimate", "t"]]
        part.columns = [f"class {q} estimate", f"class {q} t"]
        blocks.append(part)
    table = pd.concat(blocks, axis=1) if blocks else pd.DataFrame()
    lines = [table.to_string(float_format=lambda v: f"{v:.4f}", na_rep="-"), ""]
    c = result.criteria
    lines.append("Class shares: " + ", ".join(f"{s:.3f}" for s in result.class_shares))
    for label, value in (("Log-likelihood", c.ll), ("Choice log-likelihood", c.ll_choice), ("Null log-likelihood", c.ll_null),
                         ("LR vs null", c.lr_vs_null), ("Adjusted McFadden rho2", c.mcfadden_rho2_adj),
                         ("AIC", c.aic), ("AICc", c.aicc), ("BIC", c.bic), ("CAIC", c.caic), ("HQIC", c.hqic)):
        lines.append(f"{label:<24}{'-' if value is None else f'{value:.4f}'}")
    lines.append(f"{'Parameters':<24}{c.k_params}")
    lines.append(f"{'Units':<24}{c.n_units}")
    lines.append(f"{'Converged':<24}{result.converged} ({result.convergence.iterations} iterations, max|g| {result.convergence.grad_max:.3e})")
    return "\n".join(lines) + "\n"


def write_bundle(result:EstimationResult, directory:PathLike, sweep:Optional[pd.DataFrame]=None):
    """Writes the result bundle. Every file is a deterministic function of the result."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    result.estimates_frame().to_csv(directory / ESTIMATES_FILE, index=False)
    pd.DataFrame([criteria_row(result.criteria)]).to_csv(directory / FIT_FILE, index=False)
    result.posterior_frame().to_csv(directory / POSTERIOR_FILE, index=False)
    if sweep is None:
        sweep = pd.DataFrame([sweep_row(result.spec.Q, result, qualified=bool(np.min(result.class_shares) >= 0.10))])
    sweep.to_csv(directory / SWEEP_FILE, index=False)
    (directory / MODEL_FILE).write_text(result.spec.to_yaml(), encoding="utf-8")
    options = result.options.dict()
    options["draws"] = result.draws_used or options["draws"]
    (directory / OPTIONS_FILE).write_text(yaml.safe_dump(as_plain_dict(options), sort_keys=False), encoding="utf-8")
    coefficient_density_grid(result.theta_hat).to_csv(directory / DENSITY_FILE, index=False)
    (directory / SUMMARY_FILE).write_text(format_summary(result), encoding="utf-8")
    print_log(f"Result bundle written to {directory}", logging.INFO)


@dataclass
class Bundle:
    spec: ModelSpec
    options: EstimationOptions
    layout: ParameterLayout
    flat: np.ndarray
    estimates: pd.DataFrame

    @property
    def theta(self)->ParameterSet:
        return self.layout.unpack(self.flat)


def read_bundle(directory:PathLike)->Bundle:
    directory = Path(directory)
    for name in (MODEL_FILE, ESTIMATES_FILE):
        if not (directory / name).exists():
            raise ConfigError(f"{directory / name} not found; is {directory} a result bundle?")
    spec = ModelSpec.from_yaml(directory / MODEL_FILE)
    options = EstimationOptions()
    if (directory / OPTIONS_FILE).exists():
        options = EstimationOptions.parse_obj(yaml.safe_load((directory / OPTIONS_FILE).read_text(encoding="utf-8")) or {})
    estimates = pd.read_csv(directory / ESTIMATES_FILE, float_precision="round_trip")
    layout = ParameterLayout(spec)
    named = {f"{block}[{q}].{parameter}": value for block, q, parameter, value
             in zip(estimates["block"], estimates["class"], estimates["parameter"], estimates["estimate"])}
    flat = layout.from_named(named)
    return Bundle(spec=spec, options=options, layout=layout, flat=flat, estimates=estimates)
