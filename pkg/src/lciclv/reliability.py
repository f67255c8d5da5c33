"""Scale reliability and validity diagnostics of the attitudinal constructs.

Cronbach's α per construct, AVE and composite reliability from standardized loadings, and the
Fornell-Larcker discriminant validity check. Standardized loadings come either from an estimated
model (model-implied variances) or, without one, from a single-factor FactorAnalysis of the items.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.decomposition import FactorAnalysis

from .common import print_log
from .exceptions import DomainError
from .model_spec import ModelSpec
from .parameters import ParameterSet
from .schema import Dataset

ITEMS_FILE = "items.csv"
VALIDITY_FILE = "validity.csv"
CORRELATION_FILE = "correlation.csv"

LOADING_CLIP = 1.0 - 1e-6

PathLike = Union[str, Path]


def cronbach_alpha(items)->float:
    """(k/(k−1))·(1 − Σ var(item) / var(Σ item)) with N−1 denominators."""
    items = np.asarray(items, dtype=float)
    if items.ndim != 2 or items.shape[1] < 2:
        raise DomainError(f"Cronbach's alpha needs at least 2 items, got shape {items.shape}")
    if items.shape[0] < 2:
        raise DomainError(f"Cronbach's alpha needs at least 2 observations, got {items.shape[0]}")
    k = items.shape[1]
    total_var = items.sum(axis=1).var(ddof=1)
    if not total_var > 0:
        raise DomainError("Cronbach's alpha is undefined when the scale total has zero variance")
    return float(k / (k - 1) * (1.0 - items.var(axis=0, ddof=1).sum() / total_var))


def construct_reliability(std_loadings:Sequence[float])->Tuple[float, float]:
    """(AVE, CR) of one construct from its standardized loadings."""
    lam = np.asarray(std_loadings, dtype=float).reshape(-1)
    if lam.size == 0:
        raise DomainError("construct reliability needs at least one loading")
    if np.any(np.abs(lam) > 1.0):
        raise DomainError(f"standardized loadings must lie in [-1, 1], got {lam}")
    ave = float(np.mean(lam ** 2))
    numerator = float(lam.sum()) ** 2
    cr = numerator / (numerator + float(np.sum(1.0 - lam ** 2)))
    return ave, cr


def fornell_larcker(ave:Sequence[float], correlation)->np.ndarray:
    sqrt_ave = np.sqrt(np.asarray(ave, dtype=float))
    correlation = np.asarray(correlation, dtype=float)
    passed = sqrt_ave[:, None] > np.abs(correlation)
    np.fill_diagonal(passed, True)
    return passed


@dataclass
class ReliabilityReport:
    constructs: List[str]
    alpha: np.ndarray
    ave: np.ndarray
    cr: np.ndarray
    sqrt_ave: np.ndarray
    correlation: np.ndarray
    fornell_larcker_pass: np.ndarray
    items: pd.DataFrame
    """ construct, item, mean, sd, loading, alpha """
    source: str = "data"

    def validity_frame(self)->pd.DataFrame:
        return pd.DataFrame({
            "construct": self.constructs, "alpha": self.alpha, "ave": self.ave, "sqrt_ave": self.sqrt_ave,
            "cr": self.cr, "fornell_larcker_pass": self.fornell_larcker_pass.all(axis=1),
        })

    def correlation_frame(self)->pd.DataFrame:
        """Correlations off the diagonal, AVE on it (the usual discriminant validity layout)."""
        table = self.correlation.copy()
        np.fill_diagonal(table, self.ave)
        frame = pd.DataFrame(table, index=self.constructs, columns=self.constructs)
        frame.loc["sqrt_ave"] = self.sqrt_ave
        frame.index.name = "construct"
        return frame


def _item_matrix(dataset:Dataset, columns:List[int])->np.ndarray:
    """Responses of the given indicators as floats; respondents with a missing item are dropped."""
    raw = dataset.arrays().indicators[:, columns]
    return raw[(raw > 0).all(axis=1)].astype(float)


def data_standardized_loadings(items)->np.ndarray:
    """Single-factor loadings of standardized items, oriented so their sum is positive."""
    items = np.asarray(items, dtype=float)
    sd = items.std(axis=0)
    if np.any(sd == 0):
        raise DomainError("items with zero variance cannot be standardized")
    standardized = (items - items.mean(axis=0)) / sd
    fa = FactorAnalysis(n_components=1, random_state=0).fit(standardized)
    component = fa.components_[0]
    loadings = component / np.sqrt(component ** 2 + fa.noise_variance_)
    if loadings.sum() < 0:
        loadings = -loadings
    if np.any(np.abs(loadings) > LOADING_CLIP):
        logging.warning(f"Standardized loadings {np.round(loadings, 6)} clipped into (-1, 1)")
        loadings = np.clip(loadings, -LOADING_CLIP, LOADING_CLIP)
    return loadings


def latent_covariance(theta:ParameterSet, dataset:Dataset, q:int=1)->np.ndarray:
    """Var(η) = Λ Σ_x Λᵀ + Ψ of class q, with Σ_x the sample covariance of the covariates."""
    structural = theta.for_class(q).structural
    x = dataset.arrays().x
    sigma_x = np.atleast_2d(np.cov(x, rowvar=False)) if x.shape[1] and x.shape[0] > 1 else np.zeros((x.shape[1], x.shape[1]))
    return structural.lambda_ @ sigma_x @ structural.lambda_.T + structural.psi.matrix


def standardized_loadings(theta:ParameterSet, spec:ModelSpec, dataset:Dataset, q:int=1)->Dict[str, np.ndarray]:
    """λ_std,h = D_h·sd(η_g)/sd(I*_h) per construct, with Var(I*_h) = D_h² Var(η_g) + Θ_h."""
    var_eta = np.diag(latent_covariance(theta, dataset, q))
    measurement = theta.for_class(q).measurement
    out = {}
    for g, lv in enumerate(spec.latent_variables):
        values = []
        for name in lv.indicators:
            h = spec.indicator_names.index(name)
            d = measurement.loading(h)
            values.append(d * np.sqrt(var_eta[g]) / np.sqrt(d ** 2 * var_eta[g] + measurement.error_sd[h] ** 2))
        out[lv.name] = np.array(values)
    return out


def reliability_report(dataset:Dataset, spec:ModelSpec, theta:Optional[ParameterSet]=None, q:int=1)->ReliabilityReport:
    """Reliability and validity of every construct.

    Without `theta` everything is computed from the items: FactorAnalysis loadings and correlations of
    the construct sum scores. With `theta` the loadings and construct correlations are model-implied.
    """
    constructs = spec.latent_names
    names = spec.indicator_names
    model_loadings = standardized_loadings(theta, spec, dataset, q) if theta is not None else None
    rows, alpha, ave, cr, sums = [], [], [], [], []
    complete = np.ones(dataset.N, dtype=bool)
    for lv in spec.latent_variables:
        complete &= (dataset.arrays().indicators[:, [names.index(i) for i in lv.indicators]] > 0).all(axis=1)
    for lv in spec.latent_variables:
        columns = [names.index(i) for i in lv.indicators]
        items = _item_matrix(dataset, columns)
        try:
            a = cronbach_alpha(items)
        except DomainError as e:
            logging.warning(f"{lv.name}: {e}")
            a = float("nan")
        if model_loadings is not None:
            loadings = model_loadings[lv.name]
        elif len(columns) >= 2:
            loadings = data_standardized_loadings(items)
        else:
            loadings = np.ones(1)
        v, c = construct_reliability(loadings)
        alpha.append(a)
        ave.append(v)
        cr.append(c)
        raw = dataset.arrays().indicators[complete][:, columns].astype(float)
        sums.append(raw.sum(axis=1))
        for name, column, loading in zip(lv.indicators, items.T, loadings):
            rows.append({"construct": lv.name, "item": name, "mean": float(column.mean()),
                         "sd": float(column.std(ddof=1)) if len(column) > 1 else float("nan"),
                         "loading": float(loading), "alpha": a})
    if theta is not None:
        cov = latent_covariance(theta, dataset, q)
        sd = np.sqrt(np.diag(cov))
        correlation = cov / np.outer(sd, sd)
    elif len(sums) > 1:
        correlation = np.corrcoef(np.vstack(sums))
    else:
        correlation = np.ones((len(sums), len(sums)))
    ave = np.array(ave)
    report = ReliabilityReport(
        constructs=constructs, alpha=np.array(alpha), ave=ave, cr=np.array(cr), sqrt_ave=np.sqrt(ave),
        correlation=correlation, fornell_larcker_pass=fornell_larcker(ave, correlation),
        items=pd.DataFrame(rows, columns=["construct", "item", "mean", "sd", "loading", "alpha"]),
        source="data" if theta is None else f"model class {q}")
    return report


def write_reliability(report:ReliabilityReport, directory:PathLike):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    report.items.to_csv(directory / ITEMS_FILE, index=False)
    report.validity_frame().to_csv(directory / VALIDITY_FILE, index=False)
    report.correlation_frame().to_csv(directory / CORRELATION_FILE)
    print_log(f"Reliability tables written to {directory}", logging.INFO)
