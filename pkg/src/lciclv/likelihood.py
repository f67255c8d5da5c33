"""Simulated likelihood of the latent class ICLV model.

    L_n = Σ_q π_nq · (1/R) Σ_r exp(ℓ_nqr)

where ℓ_nqr is the panel choice log-likelihood plus the measurement log-likelihood of respondent n
under class q at draw r. The same standard-normal draws are reused by every class.

Two evaluation paths exist: the per-respondent functions below (readable, used by the oracle and the
tests) and LikelihoodEngine, which evaluates respondent chunks in a thread pool and also returns the
analytic scores the optimizer and BHHH standard errors rely on.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import special

from .choice import LOG_PROB_FLOOR, realize_coefs, panel_loglik_given_draw
from .common import GlobalSettings, print_log
from .distributions import log_softmax, softmax
from .exceptions import DomainError, DrawError
from .halton import DrawSet
from .measurement import cell_bounds, measurement_loglik, measurement_terms
from .membership import MembershipParams, membership_log_probs, membership_probs
from .model_spec import ModelSpec
from .parameters import ParameterLayout, ParameterSet
from .schema import Dataset, Respondent
from .structural import latent_mean, realize_latents
from .trace import report_underflow

PROB_FLOOR = 1e-300

__all__ = [
    "MembershipParams", "membership_probs", "PersonLikelihood", "class_draw_logliks",
    "class_conditional_sim_likelihood", "class_conditional_sim_loglik", "person_likelihood",
    "posterior_membership", "total_loglik", "Evaluation", "LikelihoodEngine",
]


@dataclass
class PersonLikelihood:
    value: float
    log_value: float
    prior: np.ndarray              # π_nq
    class_likelihood: np.ndarray   # L_n|q
    class_log_likelihood: np.ndarray
    flags: List[str] = field(default_factory=list)

    @property
    def per_class(self)->np.ndarray:
        return self.prior * self.class_likelihood


def _respondent_draws(draws)->np.ndarray:
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[None, :]
    return draws


def class_draw_logliks(respondent:Respondent, q:int, params:ParameterSet, draws, include_measurement:bool=True)->np.ndarray:
    """ℓ_r for every draw r of one respondent under class q; `draws` is the respondent's (R, D) block."""
    spec = params.spec
    draws = _respondent_draws(draws)
    cls = params.for_class(q)
    G, P = spec.G, cls.choice.P
    if draws.shape[1] < G + P:
        raise DrawError(f"draws cover {draws.shape[1]} dimensions, class {q} needs {G + P}")
    mean = latent_mean(respondent.x, cls.structural) if G else np.zeros(0)
    latent = realize_latents(mean, cls.structural.psi, draws[:, :G])
    coefs = realize_coefs(cls.choice, draws[:, G:G + P])
    ll = np.asarray(panel_loglik_given_draw(respondent, latent, coefs, cls.choice), dtype=float).reshape(-1)
    if include_measurement and spec.H:
        ll = ll + measurement_loglik(respondent.indicators, latent, cls.measurement, spec.drop_missing_indicators)
    return ll


def class_conditional_sim_loglik(respondent:Respondent, q:int, params:ParameterSet, draws)->float:
    """ln[(1/R) Σ_r exp(ℓ_r)] evaluated by log-sum-exp."""
    ll = class_draw_logliks(respondent, q, params, draws)
    return float(special.logsumexp(ll) - math.log(len(ll)))


def class_conditional_sim_likelihood(respondent:Respondent, q:int, params:ParameterSet, draws)->float:
    log_value = class_conditional_sim_loglik(respondent, q, params, draws)
    if log_value < math.log(PROB_FLOOR):
        report_underflow(1)
        return PROB_FLOOR
    return math.exp(log_value)


def person_likelihood(respondent:Respondent, params:ParameterSet, draws)->PersonLikelihood:
    prior = membership_probs(respondent.z, params.membership)
    class_ll = np.array([class_conditional_sim_loglik(respondent, q, params, draws) for q in range(1, params.Q + 1)])
    with np.errstate(divide="ignore"):
        log_value = float(special.logsumexp(np.log(prior) + class_ll))
    flags = []
    if log_value < math.log(PROB_FLOOR):
        flags.append("underflow")
        report_underflow(1)
    return PersonLikelihood(value=math.exp(log_value), log_value=log_value, prior=prior,
                            class_likelihood=np.exp(class_ll), class_log_likelihood=class_ll, flags=flags)


def posterior_membership(respondent:Respondent, params:ParameterSet, draws)->np.ndarray:
    person = person_likelihood(respondent, params, draws)
    with np.errstate(divide="ignore"):
        joint = np.log(person.prior) + person.class_log_likelihood
    if not np.any(np.isfinite(joint)):
        report_underflow(1)
        return np.full(params.Q, 1.0 / params.Q)
    return softmax(joint)


def total_loglik(dataset:Dataset, params:ParameterSet, draws:DrawSet, threads:int=None)->float:
    engine = LikelihoodEngine(dataset, params.spec, draws, threads=threads)
    return engine.loglik(engine.layout.pack(params))


# engine

@dataclass
class Evaluation:
    loglik: float
    person_loglik: np.ndarray     # (N,)
    class_loglik: np.ndarray      # (N, Q) ln L_n|q
    log_prior: np.ndarray         # (N, Q) ln π_nq
    scores: Optional[np.ndarray]  # (N, n_free) ∂ ln L_n / ∂ packed
    underflow: int = 0

    @property
    def gradient(self)->Optional[np.ndarray]:
        return None if self.scores is None else self.scores.sum(axis=0)

    @property
    def posterior(self)->np.ndarray:
        return softmax(self.log_prior + self.class_loglik, axis=1)


@dataclass
class _Chunk:
    rows: slice
    x: np.ndarray
    z: np.ndarray
    indicators: np.ndarray
    observed: np.ndarray
    attributes: np.ndarray
    chosen: np.ndarray
    mask: np.ndarray
    draws: np.ndarray


@dataclass
class _ChunkResult:
    person_loglik: np.ndarray
    class_loglik: np.ndarray
    log_prior: np.ndarray
    scores: Optional[np.ndarray]
    predicted: Optional[np.ndarray]
    underflow: int


def _weighted(w:np.ndarray, values:np.ndarray)->np.ndarray:
    """Σ_r w_nr · values_nr..."""
    return np.einsum("nr,nr...->n...", w, values)


class LikelihoodEngine:
    """Evaluates the simulated log-likelihood of a dataset, its scores and derived quantities.

    Respondents are split into fixed chunks of `chunk_size`; chunks run on `threads` workers and the
    per-respondent results are reduced in respondent order, so the output never depends on `threads`.
    """

    def __init__(self, dataset:Dataset, spec:ModelSpec, draws:DrawSet, layout:ParameterLayout=None,
                 threads:int=None, chunk_size:int=None) -> None:
        settings = GlobalSettings.get_current_settings()
        self.spec = spec
        self.layout = layout or ParameterLayout(spec)
        self.threads = max(1, threads or settings.threads or 1)
        self.chunk_size = max(1, chunk_size or settings.chunk_size)
        self.dataset = dataset
        arrays = dataset.arrays()
        if draws.n_respondents != arrays.N:
            raise DrawError(f"DrawSet holds {draws.n_respondents} respondents, the dataset {arrays.N}")
        if draws.dims < spec.draw_dims:
            raise DrawError(f"DrawSet has {draws.dims} dimensions, the model needs {spec.draw_dims}")
        self.draws = draws
        self.ids = arrays.ids
        self.N = arrays.N
        self.chunks = [
            _Chunk(rows=slice(s, min(s + self.chunk_size, self.N)),
                   x=arrays.x[s:s + self.chunk_size], z=arrays.z[s:s + self.chunk_size],
                   indicators=arrays.indicators[s:s + self.chunk_size], observed=arrays.observed[s:s + self.chunk_size],
                   attributes=arrays.attributes[s:s + self.chunk_size], chosen=arrays.chosen[s:s + self.chunk_size],
                   mask=arrays.scenario_mask[s:s + self.chunk_size], draws=draws.draws[s:s + self.chunk_size])
            for s in range(0, self.N, self.chunk_size)
        ]

    # public api

    def evaluate(self, flat, gradient:bool=False, include_measurement:bool=True)->Evaluation:
        theta = self.layout.unpack(flat)
        results = self._run(lambda chunk: self._chunk(theta, chunk, gradient, include_measurement, predict=None))
        person = np.concatenate([r.person_loglik for r in results])
        underflow = sum(r.underflow for r in results)
        report_underflow(underflow)
        return Evaluation(
            loglik=math.fsum(person),
            person_loglik=person,
            class_loglik=np.concatenate([r.class_loglik for r in results]),
            log_prior=np.concatenate([r.log_prior for r in results]),
            scores=np.concatenate([r.scores for r in results]) if gradient else None,
            underflow=underflow,
        )

    def loglik(self, flat)->float:
        return self.evaluate(flat).loglik

    def loglik_and_gradient(self, flat):
        evaluation = self.evaluate(flat, gradient=True)
        return evaluation.loglik, evaluation.gradient

    def choice_loglik(self, flat)->float:
        """Simulated log-likelihood with the measurement block left out."""
        return self.evaluate(flat, include_measurement=False).loglik

    def posterior(self, flat)->np.ndarray:
        return self.evaluate(flat).posterior

    def predict(self, flat, weights:str="posterior")->np.ndarray:
        """P(not opting out) per observation, (N, Tmax) with NaN padding.

        `posterior` weights classes and draws by their posterior given the respondent's own data;
        `prior` uses the membership model and plain draw averages.
        """
        if weights not in ("posterior", "prior"):
            raise DomainError(f"prediction weights must be posterior or prior, got {weights}")
        theta = self.layout.unpack(flat)
        results = self._run(lambda chunk: self._chunk(theta, chunk, False, True, predict=weights))
        return np.concatenate([r.predicted for r in results])

    # internals

    def _run(self, fn):
        if self.threads > 1 and len(self.chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, self.chunks))
        return [fn(chunk) for chunk in self.chunks]

    def _chunk(self, theta:ParameterSet, chunk:_Chunk, gradient:bool, include_measurement:bool, predict:Optional[str])->_ChunkResult:
        spec = self.spec
        n = chunk.x.shape[0]
        log_prior = membership_log_probs(chunk.z, theta.membership).reshape(n, spec.Q)
        class_ll = np.zeros((n, spec.Q))
        class_scores = []
        class_predictions = []
        underflow = 0
        for q in range(1, spec.Q + 1):
            ll_r, score, p_use, floored = self._class(theta, q, chunk, gradient, include_measurement, predict is not None)
            underflow += floored
            lse = special.logsumexp(ll_r, axis=1)
            class_ll[:, q - 1] = lse - math.log(ll_r.shape[1])
            w = np.exp(ll_r - lse[:, None])
            if gradient:
                class_scores.append(score(w))
            if predict == "posterior":
                class_predictions.append(np.einsum("nr,nrt->nt", w, p_use))
            elif predict == "prior":
                class_predictions.append(p_use.mean(axis=1))
        joint = log_prior + class_ll
        person = special.logsumexp(joint, axis=1)
        post = np.exp(joint - person[:, None])

        scores = None
        if gradient:
            scores = np.zeros((n, self.layout.n_free))
            for q in range(1, spec.Q + 1):
                scores += post[:, q - 1, None] * class_scores[q - 1]
            prior = np.exp(log_prior)
            for q in range(2, spec.Q + 1):
                resid = post[:, q - 1] - prior[:, q - 1]
                slot = self.layout.slot("membership", q, ("intercept",))
                if slot is not None:
                    scores[:, slot] += resid
                for m in range(spec.M):
                    scores[:, self.layout.slot("membership", q, ("gamma", m))] += resid * chunk.z[:, m]

        predicted = None
        if predict is not None:
            class_weights = post if predict == "posterior" else np.exp(log_prior)
            predicted = np.einsum("nq,qnt->nt", class_weights, np.stack(class_predictions))
            predicted = np.where(chunk.mask, predicted, np.nan)
        return _ChunkResult(person, class_ll, log_prior, scores, predicted, underflow)

    def _class(self, theta:ParameterSet, q:int, chunk:_Chunk, gradient:bool, include_measurement:bool, want_prediction:bool):
        """Per-draw log-likelihood (n, R) of class q, plus a closure turning draw weights into scores."""
        spec = self.spec
        layout = self.layout
        cls = theta.for_class(q)
        structural, measurement, choice = cls.structural, cls.measurement, cls.choice
        G, P, H = spec.G, choice.P, spec.H
        D = chunk.draws
        n, R = D.shape[0], D.shape[1]

        # latent variables
        z_lat = D[:, :, :G]
        mean = chunk.x @ structural.lambda_.T if G else np.zeros((n, 0))
        lower_chol = structural.psi.cholesky()
        if structural.psi.diagonal:
            latent = mean[:, None, :] + z_lat * np.diag(lower_chol)
        else:
            latent = mean[:, None, :] + z_lat @ lower_chol.T

        # choice block
        z_rnd = D[:, :, G:G + P]
        beta = choice.random_mu + choice.random_sigma * z_rnd
        fixed_cols = [c.values(chunk.x, chunk.attributes) for c in choice.fixed_columns]
        random_cols = [c.values(chunk.x, chunk.attributes) for c in choice.random_columns]
        common = np.zeros((n, 1, chunk.attributes.shape[1]))
        for coef, col in zip(choice.fixed, fixed_cols):
            common = common + coef * col[:, None, :]
        for p, col in enumerate(random_cols):
            common = common + beta[:, :, p, None] * col[:, None, :]
        for coef, g in zip(choice.gamma, choice.latent_index):
            common = common + coef * latent[:, :, g, None]
        common = np.broadcast_to(common, (n, R, chunk.attributes.shape[1]))
        J = choice.J
        v = np.zeros(common.shape + (J,))
        v[..., 1:] = choice.asc + common[..., None]
        logp = log_softmax(v, axis=-1)
        chosen = np.broadcast_to(chunk.chosen[:, None, :, None], common.shape + (1,))
        picked = np.take_along_axis(logp, chosen, axis=-1)[..., 0]
        mask = np.broadcast_to(chunk.mask[:, None, :], common.shape)
        low = mask & (picked < LOG_PROB_FLOOR)
        floored = int(np.count_nonzero(low))
        ll_r = np.where(mask, np.where(low, LOG_PROB_FLOOR, picked), 0.0).sum(axis=2)

        terms = None
        if include_measurement and H:
            lower, upper = cell_bounds(measurement, chunk.indicators)
            terms = measurement_terms(measurement, latent, lower, upper, chunk.observed, gradient=gradient)
            ll_r = ll_r + terms.loglik
            floored += terms.floored

        p_use = None
        if want_prediction:
            p_use = 1.0 - np.exp(logp[..., 0])

        if not gradient:
            return ll_r, None, p_use, floored

        prob = np.exp(logp)
        live = mask & ~low
        onehot = (chunk.chosen[:, None, :, None] == np.arange(1, J)).astype(float)
        resid = np.where(live[..., None], onehot - prob[..., 1:], 0.0)     # (n, R, T, J-1)
        g_t = resid.sum(axis=-1)                                          # ∂ℓ/∂common
        g_sum = g_t.sum(axis=2)                                           # (n, R)
        d_lat = np.zeros((n, R, G))
        for coef, g in zip(choice.gamma, choice.latent_index):
            d_lat[:, :, g] += coef * g_sum
        if terms is not None:
            loading = measurement.loadings[np.arange(H), list(measurement.indicator_map)]
            for h, g in enumerate(measurement.indicator_map):
                d_lat[:, :, g] += loading[h] * terms.d_prop[:, :, h]

        def score(w:np.ndarray)->np.ndarray:
            out = np.zeros((n, layout.n_free))

            def put(block, key, values):
                slot = layout.slot(block, q, key)
                if slot is not None:
                    out[:, slot] += values

            d_asc = _weighted(w, resid.sum(axis=2))
            for j in range(1, J):
                put("choice", ("asc", j), d_asc[:, j - 1])
            for i, col in enumerate(fixed_cols):
                put("choice", ("beta", i), _weighted(w, (g_t * col[:, None, :]).sum(axis=2)))
            for l, g in enumerate(choice.latent_index):
                put("choice", ("gamma", l), _weighted(w, g_sum * latent[:, :, g]))
            for p, col in enumerate(random_cols):
                d_beta = (g_t * col[:, None, :]).sum(axis=2)
                put("choice", ("mu", p), _weighted(w, d_beta))
                put("choice", ("sigma", p), _weighted(w, d_beta * choice.random_sigma[p] * z_rnd[:, :, p]))

            if G:
                w_dlat = _weighted(w, d_lat)                              # (n, G)
                for g, lv in enumerate(spec.latent_variables):
                    for cov in lv.structural_covariates:
                        k = spec.covariate_names.index(cov)
                        put("structural", ("lambda", g, k), w_dlat[:, g] * chunk.x[:, k])
                if structural.psi.diagonal:
                    sd_lat = np.diag(lower_chol)
                    for g in range(G):
                        put("structural", ("psi", g), _weighted(w, d_lat[:, :, g] * z_lat[:, :, g]) * 0.5 * sd_lat[g])
                else:
                    for i in range(G):
                        for j in range(i + 1):
                            value = _weighted(w, d_lat[:, :, i] * z_lat[:, :, j])
                            if i == j:
                                value = value * lower_chol[i, i]
                            put("structural", ("chol", i, j), value)

            if terms is not None:
                w_prop = _weighted(w, terms.d_prop)                      # (n, H)
                w_upper = _weighted(w, terms.d_upper)
                w_lower = _weighted(w, terms.d_lower)
                w_log_sd = _weighted(w, terms.d_log_sd)
                for h, g in enumerate(measurement.indicator_map):
                    put("measurement", ("loading", h), _weighted(w, terms.d_prop[:, :, h] * latent[:, :, g]))
                    put("measurement", ("intercept", h), w_prop[:, h])
                    put("measurement", ("sd", h), w_log_sd[:, h])
                d_tau = {}
                shared = spec.identification.shared_thresholds
                for h, g in enumerate(measurement.indicator_map):
                    cuts = np.arange(len(measurement.thresholds[h]))
                    response = chunk.indicators[:, h]
                    d = (w_upper[:, h, None] * (response[:, None] - 1 == cuts)
                         + w_lower[:, h, None] * (response[:, None] - 2 == cuts))
                    owner = ("lv", g) if shared else ("ind", h)
                    d_tau[owner] = d_tau[owner] + d if owner in d_tau else d
                for owner, d in d_tau.items():
                    h0 = owner[1] if owner[0] == "ind" else measurement.indicator_map.index(owner[1])
                    tau = measurement.thresholds[h0]
                    tail = np.flip(np.cumsum(np.flip(d, axis=1), axis=1), axis=1)
                    for m in range(len(tau)):
                        factor = 1.0 if m == 0 else tau[m] - tau[m - 1]
                        put("measurement", ("tau", owner, m), factor * tail[:, m])
            return out

        return ll_r, score, p_use, floored


def non_finite_respondents(evaluation:Evaluation, ids:List[str])->List[str]:
    return [ids[i] for i in np.flatnonzero(~np.isfinite(evaluation.person_loglik))]


def log_engine_settings(engine:LikelihoodEngine):
    print_log({"respondents": engine.N, "draws": engine.draws.R, "dimensions": engine.draws.dims,
               "threads": engine.threads, "chunk_size": engine.chunk_size}, logging.DEBUG)
