"""Independent references for the simulated likelihood and parameter-recovery experiments."""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict

import numpy as np
import pandas as pd
from numpy.polynomial.hermite_e import hermegauss
from scipy import optimize, special

from .common import LogColors, print_log
from .distributions import interval_prob
from .estimation import estimate
from .exceptions import DomainError, QuadratureError
from .likelihood import class_draw_logliks
from .measurement import MeasurementParams
from .options import EstimationOptions
from .parameters import ParameterSet
from .results import EstimationResult
from .schema import Respondent
from .synth import SynthConfig, SynthTruth, simulate_dataset

MAX_QUADRATURE_DIMS = 3


def gauss_hermite_grid(dims:int, nodes:int):
    """Tensor-product nodes (nodes^dims, dims) and weights for E[f(Z)], Z ~ N(0, I)."""
    if nodes < 1:
        raise DomainError(f"quadrature needs at least one node, got {nodes}")
    x, w = hermegauss(nodes)
    w = w / math.sqrt(2.0 * math.pi)
    if dims == 0:
        return np.zeros((1, 0)), np.ones(1)
    points = np.array(list(itertools.product(x, repeat=dims)))
    weights = np.prod(np.array(list(itertools.product(w, repeat=dims))), axis=1)
    return points, weights


def quadrature_person_loglik(respondent:Respondent, q:int, params:ParameterSet, nodes:int=50)->float:
    dims = params.spec.G + params.for_class(q).choice.P
    if dims > MAX_QUADRATURE_DIMS:
        raise QuadratureError(f"{dims} integration dimensions exceed the quadrature limit of {MAX_QUADRATURE_DIMS}; "
                              f"use the simulated likelihood instead")
    points, weights = gauss_hermite_grid(dims, nodes)
    ll = class_draw_logliks(respondent, q, params, points)
    return float(special.logsumexp(ll, b=weights))


def quadrature_person_likelihood(respondent:Respondent, q:int, params:ParameterSet, nodes:int=50)->float:
    """L_n|q by Gauss-Hermite tensor quadrature over the latent and random-coefficient normals.

    The integrand is the one class_conditional_sim_likelihood averages over draws; use ≥ 30 nodes per
    dimension for reference values.
    """
    return math.exp(quadrature_person_loglik(respondent, q, params, nodes))


def analytic_indicator_marginal(mean:float, variance:float, h:int, m:int, params:MeasurementParams)->float:
    """P(I_h = m) with the single latent variable integrated out: η ~ N(mean, variance)."""
    bounds = params.padded_thresholds(h)
    d = params.loading(h)
    center = d * mean + params.intercepts[h]
    scale = math.sqrt(params.error_sd[h] ** 2 + d ** 2 * variance)
    return float(interval_prob((bounds[m - 1] - center) / scale, (bounds[m] - center) / scale))


# recovery

@dataclass
class RecoveryReport:
    table: pd.DataFrame
    """ parameter, truth, estimate, se, z """
    within_2: float
    within_3: float
    confusion: np.ndarray
    """ true class × estimated class (after alignment) counts """
    accuracy: float
    label_map: Dict[int, int]
    """ true class -> estimated class """
    result: EstimationResult
    truth: SynthTruth


def align_classes(true_classes:np.ndarray, posterior:np.ndarray):
    """Matches estimated labels to true ones by maximum assignment on the confusion counts."""
    Q = posterior.shape[1]
    modal = np.argmax(posterior, axis=1)
    counts = np.zeros((Q, Q))
    for t, e in zip(true_classes - 1, modal):
        counts[t, e] += 1
    rows, cols = optimize.linear_sum_assignment(-counts)
    label_map = {int(r) + 1: int(c) + 1 for r, c in zip(rows, cols)}
    aligned = counts[:, cols]
    return label_map, aligned, float(np.trace(aligned) / max(len(true_classes), 1))


def _membership_values(result:EstimationResult, label_map:Dict[int, int])->Dict[tuple, float]:
    """Estimated membership parameters re-expressed against the class matched to true class 1."""
    theta = result.theta_hat
    reference = label_map[1] - 1
    intercept = theta.membership.intercept - theta.membership.intercept[reference]
    gamma = theta.membership.gamma - theta.membership.gamma[reference]
    out = {}
    for true_q, est_q in label_map.items():
        out[(true_q, ("intercept",))] = float(intercept[est_q - 1])
        for m in range(gamma.shape[1]):
            out[(true_q, ("gamma", m))] = float(gamma[est_q - 1, m])
    return out


def recovery_table(config:SynthConfig, result:EstimationResult, label_map:Dict[int, int])->pd.DataFrame:
    layout = result.layout
    truth = layout.constrained(config.true_flat(result.spec))
    estimates = layout.constrained(result.flat)
    se = {(e.block, e.q, entry.key): e.se for e, entry in zip(result.estimates, layout.entries)}
    swapped = label_map[1] != 1
    membership = _membership_values(result, label_map) if swapped else {}
    rows = []
    for i, entry in enumerate(layout.entries):
        est_q = label_map[entry.q]
        if entry.block == "membership" and swapped:
            value, error = membership[(entry.q, entry.key)], None
        else:
            j = layout.slot(entry.block, est_q, entry.key)
            value, error = estimates[j], se[(entry.block, est_q, entry.key)]
        z = abs(value - truth[i]) / error if error else None
        rows.append({"parameter": entry.full_name, "truth": truth[i], "estimate": value, "se": error, "z": z})
    return pd.DataFrame(rows, columns=["parameter", "truth", "estimate", "se", "z"])


def recovery_experiment(config:SynthConfig, options:EstimationOptions=None, start_at_truth:bool=False)->RecoveryReport:
    """Simulates from `config`, estimates the same model and compares with the truth.

    z = |estimate − truth| / SE. Parameters without a usable SE (flagged, or membership parameters
    re-expressed after the reference class was relabeled) are listed but left out of the fractions.
    """
    options = options or EstimationOptions()
    spec = config.model_spec()
    dataset, truth = simulate_dataset(config, return_truth=True)
    result = estimate(dataset, spec, options, start=config.true_flat(spec) if start_at_truth else None)
    label_map, confusion, accuracy = align_classes(truth.classes, result.posterior)
    table = recovery_table(config, result, label_map)
    z = table["z"].dropna().to_numpy(dtype=float)
    within_2 = float(np.mean(z <= 2.0)) if len(z) else float("nan")
    within_3 = float(np.mean(z <= 3.0)) if len(z) else float("nan")
    print_log(f"Recovery: {within_3:.3f} of {len(z)} parameters within 3 SE, class accuracy {accuracy:.3f}",
              logging.INFO, LogColors.CYAN)
    return RecoveryReport(table=table, within_2=within_2, within_3=within_3, confusion=confusion,
                          accuracy=accuracy, label_map=label_map, result=result, truth=truth)
