"""Ordered-probit measurement equations linking latent variables to Likert indicators."""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .distributions import interval_prob, std_normal_pdf
from .exceptions import DomainError
from .trace import report_underflow

PROB_FLOOR = 1e-300
LOG_PROB_FLOOR = math.log(PROB_FLOOR)


@dataclass(frozen=True)
class MeasurementParams:
    loadings: np.ndarray        # (H, G), nonzero only at indicator_map positions
    intercepts: np.ndarray      # (H,)
    error_sd: np.ndarray        # (H,)
    thresholds: Tuple[np.ndarray, ...]  # per indicator, C_h - 1 increasing cut points
    indicator_map: Tuple[int, ...]

    def __post_init__(self):
        H = len(self.indicator_map)
        if self.loadings.shape[0] != H or len(self.intercepts) != H or len(self.error_sd) != H or len(self.thresholds) != H:
            raise DomainError("measurement parameter blocks disagree on the indicator count")
        if np.any(~(np.asarray(self.error_sd) > 0)):
            raise DomainError("indicator error standard deviations must be positive")
        for h, tau in enumerate(self.thresholds):
            if len(tau) and np.any(np.diff(tau) <= 0):
                raise DomainError(f"thresholds of indicator {h} are not strictly increasing: {tau}")

    @property
    def H(self)->int:
        return len(self.indicator_map)

    @property
    def categories(self)->List[int]:
        return [len(t) + 1 for t in self.thresholds]

    def loading(self, h:int)->float:
        return float(self.loadings[h, self.indicator_map[h]])

    def padded_thresholds(self, h:int)->np.ndarray:
        """τ_{h,0} = -inf, τ_{h,1..C-1}, τ_{h,C} = +inf"""
        return np.concatenate([[-np.inf], self.thresholds[h], [np.inf]])


def indicator_propensity(latent, h:int, params:MeasurementParams):
    """D_h·latent + ξ_h. `latent` may carry leading draw axes (..., G)."""
    latent = np.asarray(latent, dtype=float)
    out = latent @ params.loadings[h] + params.intercepts[h]
    return float(out) if np.ndim(out) == 0 else out


def indicator_cell_prob(latent, h:int, m:int, params:MeasurementParams):
    categories = len(params.thresholds[h]) + 1
    if not 1 <= m <= categories:
        raise DomainError(f"category {m} outside 1..{categories} for indicator {h}")
    bounds = params.padded_thresholds(h)
    prop = np.asarray(indicator_propensity(latent, h, params))
    sd = params.error_sd[h]
    return interval_prob((bounds[m - 1] - prop) / sd, (bounds[m] - prop) / sd)


def measurement_loglik(responses:Sequence[Optional[int]], latent, params:MeasurementParams, drop_missing:bool=False):
    """Σ_h ln P(I_h = m_h | latent).

    Missing responses (None or 0) contribute nothing when `drop_missing` is on. Cells below 1e-300
    are floored and reported to the active TraceContext.
    `latent` may be a G-vector or an (R, G) block of draws, in which case an R-vector is returned.
    """
    latent = np.asarray(latent, dtype=float)
    total = np.zeros(latent.shape[:-1])
    floored = 0
    for h, m in enumerate(responses):
        if m is None or m == 0:
            if not drop_missing:
                raise DomainError(f"indicator {h} has no response and missing responses are not dropped")
            continue
        prob = np.asarray(indicator_cell_prob(latent, h, int(m), params))
        low = prob < PROB_FLOOR
        floored += int(np.count_nonzero(low))
        total = total + np.where(low, LOG_PROB_FLOOR, np.log(np.maximum(prob, PROB_FLOOR)))
    report_underflow(floored)
    return float(total) if total.ndim == 0 else total


# vectorized terms used by the likelihood engine

@dataclass
class MeasurementTerms:
    loglik: np.ndarray       # (n, R)
    d_prop: np.ndarray       # (n, R, H)   ∂ℓ/∂propensity
    d_upper: np.ndarray      # (n, R, H)   ∂ℓ/∂τ_{h,m}
    d_lower: np.ndarray      # (n, R, H)   ∂ℓ/∂τ_{h,m-1}
    d_log_sd: np.ndarray     # (n, R, H)
    floored: int


def cell_bounds(params:MeasurementParams, indicators:np.ndarray)->Tuple[np.ndarray, np.ndarray]:
    """Lower and upper cut points of every observed response, shape (n, H); missing cells get (-inf, inf)."""
    n, H = indicators.shape
    lower = np.full((n, H), -np.inf)
    upper = np.full((n, H), np.inf)
    for h in range(H):
        bounds = params.padded_thresholds(h)
        m = indicators[:, h]
        seen = m > 0
        lower[seen, h] = bounds[m[seen] - 1]
        upper[seen, h] = bounds[m[seen]]
    return lower, upper


def measurement_terms(params:MeasurementParams, latent:np.ndarray, lower:np.ndarray, upper:np.ndarray,
                      observed:np.ndarray, gradient:bool=True)->MeasurementTerms:
    """Per-draw measurement log-likelihood of a respondent chunk and its partial derivatives.

    latent: (n, R, G); lower/upper/observed: (n, H).
    """
    sd = params.error_sd
    # propensity of indicator h uses only its own construct
    loading = params.loadings[np.arange(params.H), list(params.indicator_map)]
    prop = latent[:, :, list(params.indicator_map)] * loading + params.intercepts
    a = (lower[:, None, :] - prop) / sd
    b = (upper[:, None, :] - prop) / sd
    prob = interval_prob(a, b)
    prob = np.asarray(prob).reshape(prop.shape)
    mask = np.broadcast_to(observed[:, None, :], prop.shape)
    low = mask & (prob < PROB_FLOOR)
    safe = np.where(low | ~mask, 1.0, prob)
    logp = np.where(low, LOG_PROB_FLOOR, np.log(safe))
    logp = np.where(mask, logp, 0.0)
    loglik = logp.sum(axis=2)
    floored = int(np.count_nonzero(low))
    if not gradient:
        empty = np.zeros((0,))
        return MeasurementTerms(loglik, empty, empty, empty, empty, floored)
    with np.errstate(invalid="ignore"):
        phi_a = np.where(np.isfinite(a), std_normal_pdf(np.where(np.isfinite(a), a, 0.0)), 0.0)
        phi_b = np.where(np.isfinite(b), std_normal_pdf(np.where(np.isfinite(b), b, 0.0)), 0.0)
        a_phi_a = np.where(np.isfinite(a), a * phi_a, 0.0)
        b_phi_b = np.where(np.isfinite(b), b * phi_b, 0.0)
    live = mask & ~low
    scale = np.where(live, 1.0 / (safe * sd), 0.0)
    d_upper = phi_b * scale
    d_lower = -phi_a * scale
    d_prop = -(phi_b - phi_a) * scale
    d_log_sd = np.where(live, (a_phi_a - b_phi_b) / safe, 0.0)
    return MeasurementTerms(loglik, d_prop, d_upper, d_lower, d_log_sd, floored)


def threshold_start(responses:np.ndarray, categories:int, scale:float=math.sqrt(2.0))->np.ndarray:
    """Cut points from cumulative response shares, Φ⁻¹(share)·scale, kept strictly increasing."""
    responses = np.asarray(responses)
    responses = responses[responses > 0]
    counts = np.bincount(responses, minlength=categories + 1)[1:categories + 1].astype(float)
    if counts.sum() == 0:
        cumulative = np.arange(1, categories) / categories
    else:
        cumulative = np.cumsum(counts)[:-1] / counts.sum()
    cumulative = np.clip(cumulative, 1e-3, 1.0 - 1e-3)
    tau = special.ndtri(cumulative) * scale
    for m in range(1, len(tau)):
        if tau[m] <= tau[m - 1] + 1e-2:
            tau[m] = tau[m - 1] + 1e-2
    return tau
