"""Logit choice kernel: utilities, probabilities and the panel likelihood for one class and one draw.

Alternative 0 is the opt-out with V = 0. Every other alternative carries its own constant and
shares the declared covariate terms, so for J = 2 the model is the usual binary logit on
V_use - V_optout.
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import special

from .distributions import log_softmax, softmax
from .exceptions import DomainError
from .schema import ChoiceScenario, Respondent
from .trace import report_underflow

PROB_FLOOR = 1e-300
LOG_PROB_FLOOR = math.log(PROB_FLOOR)


@dataclass(frozen=True)
class UtilityColumn:
    """A utility regressor: a respondent covariate (x[index]) or a scenario attribute (attributes[index])."""
    name: str
    from_scenario: bool
    index: int

    def values(self, x:np.ndarray, attributes:np.ndarray)->np.ndarray:
        """(..., T) regressor values for respondent covariates `x` (..., K) and attributes (..., T, A)."""
        if self.from_scenario:
            return attributes[..., self.index]
        return np.broadcast_to(x[..., self.index][..., None], attributes.shape[:-1])


@dataclass(frozen=True)
class ChoiceParams:
    asc: np.ndarray                      # (J-1,) constants of alternatives 1..J-1
    fixed: np.ndarray                    # E_q over fixed_columns
    fixed_columns: Tuple[UtilityColumn, ...]
    gamma: np.ndarray                    # Γ_q over latent_index
    latent_index: Tuple[int, ...]
    random_mu: np.ndarray
    random_sigma: np.ndarray
    random_columns: Tuple[UtilityColumn, ...]

    def __post_init__(self):
        if len(self.fixed) != len(self.fixed_columns):
            raise DomainError("fixed coefficients and utility columns disagree")
        if len(self.gamma) != len(self.latent_index):
            raise DomainError("latent coefficients and latent indices disagree")
        if not (len(self.random_mu) == len(self.random_sigma) == len(self.random_columns)):
            raise DomainError("random coefficient blocks disagree")
        # σ = 0 is the fixed-coefficient limit
        if np.any(np.asarray(self.random_sigma) < 0):
            raise DomainError("random coefficient standard deviations must be non-negative")

    @property
    def J(self)->int:
        return len(self.asc) + 1

    @property
    def P(self)->int:
        return len(self.random_columns)


@dataclass(frozen=True)
class CoefRealization:
    values: np.ndarray   # (..., P)


def realize_coefs(params:ChoiceParams, std_draws)->CoefRealization:
    std_draws = np.asarray(std_draws, dtype=float)
    if std_draws.shape[-1] != params.P:
        raise DomainError(f"{std_draws.shape[-1]} draws for {params.P} random coefficients")
    return CoefRealization(values=params.random_mu + params.random_sigma * std_draws)


def common_utility(x, attributes, latent, coefs:CoefRealization, params:ChoiceParams)->np.ndarray:
    """The covariate part shared by alternatives 1..J-1.

    x: (K,), attributes: (T, A), latent: (..., G), coefs.values: (..., P) -> (..., T)
    """
    x = np.asarray(x, dtype=float)
    attributes = np.atleast_2d(np.asarray(attributes, dtype=float))
    latent = np.asarray(latent, dtype=float)
    lead = np.broadcast_shapes(latent.shape[:-1], coefs.values.shape[:-1])
    out = np.zeros(lead + (attributes.shape[0],))
    for coef, column in zip(params.fixed, params.fixed_columns):
        out = out + coef * column.values(x, attributes)
    for p, column in enumerate(params.random_columns):
        out = out + coefs.values[..., p, None] * column.values(x, attributes)
    for coef, g in zip(params.gamma, params.latent_index):
        out = out + coef * latent[..., g, None]
    return out


def utility(scenario:ChoiceScenario, x, latent, coefs:CoefRealization, params:ChoiceParams)->np.ndarray:
    """J-vector of systematic utilities (opt-out first, fixed at 0)."""
    common = common_utility(x, [scenario.attributes], latent, coefs, params)[..., 0]
    v = np.zeros(np.shape(common) + (params.J,))
    v[..., 1:] = params.asc + np.asarray(common)[..., None]
    return v


def choice_prob(v)->np.ndarray:
    return softmax(v, axis=-1)


def panel_loglik_given_draw(respondent:Respondent, latent, coefs:CoefRealization, params:ChoiceParams):
    """Σ_t ln P(chosen_t); latent and coefficients stay fixed across the respondent's scenarios.

    Leading draw axes of `latent`/`coefs` are carried through, so an (R, G) block returns an R-vector.
    """
    attributes = np.array([s.attributes for s in respondent.scenarios], dtype=float).reshape(respondent.T, -1)
    chosen = np.array([s.chosen for s in respondent.scenarios], dtype=int)
    common = common_utility(respondent.x, attributes, latent, coefs, params)
    v = np.zeros(common.shape + (params.J,))
    v[..., 1:] = params.asc + common[..., None]
    logp = log_softmax(v, axis=-1)
    picked = np.take_along_axis(logp, np.broadcast_to(chosen[:, None], common.shape + (1,)), axis=-1)[..., 0]
    low = picked < LOG_PROB_FLOOR
    report_underflow(int(np.count_nonzero(low)))
    total = np.where(low, LOG_PROB_FLOOR, picked).sum(axis=-1)
    return float(total) if np.ndim(total) == 0 else total


def binary_logit_prob(v_diff):
    """P(use) for J = 2 given V_use - V_optout."""
    return special.expit(v_diff)
