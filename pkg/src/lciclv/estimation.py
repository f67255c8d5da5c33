"""Maximum simulated likelihood estimation, standard errors, fit criteria and class-count selection."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import optimize, special

from .common import LogColors, print_log
from .data_io import validate
from .exceptions import DomainError, EstimationError, RowValidationError
from .halton import DrawSet, build_draws
from .likelihood import Evaluation, LikelihoodEngine, non_finite_respondents
from .measurement import threshold_start
from .model_spec import ModelSpec
from .options import EstimationOptions
from .parameters import ParameterLayout, ParameterSet, utility_column
from .results import (Convergence, EstimationResult, FitCriteria, ParameterEstimate,
                      coefficient_density_grid, sweep_row)
from .schema import Dataset
from .trace import TraceContext

MIN_CLASS_SHARE = 0.10
PRUNE_THRESHOLD = 1.645
HESSIAN_STEP = 1e-5
EIGEN_RTOL = 1e-10

__all__ = [
    "make_draws", "fit_plain_logit", "null_loglik", "starting_values", "estimate", "standard_errors",
    "fit_criteria", "choice_parameter_count", "qualifies", "select_classes", "class_sweep", "prune_insignificant",
    "predict", "coefficient_density_grid", "PlainLogitFit", "StandardErrors", "SweepResult", "PruneOutcome",
]


def make_draws(dataset:Dataset, spec:ModelSpec, options:EstimationOptions)->DrawSet:
    requested = options.draws or spec.draws
    if requested == 1:
        logging.warning("R=1 simulation draw: results are only meaningful as a smoke test")
    dims = spec.draw_dims
    # nothing to integrate: one draw is exact
    R = requested if dims else 1
    return build_draws(dataset.N, R, dims, skip=options.skip,
                       seed_permutation=options.seed if options.scramble else None)


# plain logit

@dataclass
class PlainLogitFit:
    names: List[str]
    coefs: np.ndarray
    loglik: float
    information: np.ndarray
    se: np.ndarray
    iterations: int

    def as_dict(self)->Dict[str, float]:
        return dict(zip(self.names, self.coefs))


def _stacked_choices(dataset:Dataset, spec:ModelSpec, columns:List[str])->Tuple[np.ndarray, np.ndarray]:
    arrays = dataset.arrays()
    mask = arrays.scenario_mask
    regressors = [utility_column(spec, name).values(arrays.x, arrays.attributes)[mask] for name in columns]
    X = np.column_stack(regressors) if regressors else np.zeros((int(mask.sum()), 0))
    return X, arrays.chosen[mask]


def _plain_logit_terms(theta:np.ndarray, X:np.ndarray, chosen:np.ndarray, J:int, n_asc:int):
    asc = np.zeros(J - 1)
    asc[:n_asc] = theta[:n_asc] if n_asc else 0.0
    common = X @ theta[n_asc:]
    v = np.zeros((X.shape[0], J))
    v[:, 1:] = asc + common[:, None]
    logp = v - special.logsumexp(v, axis=1, keepdims=True)
    prob = np.exp(logp)
    ll = float(math.fsum(logp[np.arange(len(chosen)), chosen]))
    # Z_j: regressors of alternative j, zero for the opt-out
    Z = np.zeros((X.shape[0], J, len(theta)))
    for j in range(1, J):
        if n_asc:
            Z[:, j, j - 1] = 1.0
        Z[:, j, n_asc:] = X
    z_bar = np.einsum("oj,ojk->ok", prob, Z)
    grad = (Z[np.arange(len(chosen)), chosen] - z_bar).sum(axis=0)
    centered = Z - z_bar[:, None, :]
    info = np.einsum("oj,ojk,ojl->kl", prob, centered, centered)
    return ll, grad, info


def fit_plain_logit(dataset:Dataset, spec:ModelSpec, columns:Optional[List[str]]=None, q:int=1,
                    max_iter:int=100, tol:float=1e-10)->PlainLogitFit:
    """Pooled fixed-coefficient logit by Newton-Raphson with step halving.

    Used for starting values and as the analytic reference for the choice block.
    """
    columns = list(spec.utility_covariates_for(q)) if columns is None else list(columns)
    J = spec.J
    n_asc = J - 1 if spec.choice_intercept else 0
    X, chosen = _stacked_choices(dataset, spec, columns)
    theta = np.zeros(n_asc + len(columns))
    ll, grad, info = _plain_logit_terms(theta, X, chosen, J, n_asc)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if np.max(np.abs(grad), initial=0.0) <= tol:
            break
        step = np.linalg.lstsq(info, grad, rcond=None)[0]
        scale = 1.0
        while True:
            candidate = theta + scale * step
            ll_new, grad_new, info_new = _plain_logit_terms(candidate, X, chosen, J, n_asc)
            if ll_new >= ll - 1e-12 or scale < 1e-8:
                break
            scale *= 0.5
        theta, ll, grad, info = candidate, ll_new, grad_new, info_new
    try:
        se = np.sqrt(np.diag(np.linalg.inv(info)))
    except np.linalg.LinAlgError:
        se = np.full(len(theta), np.nan)
    asc_names = ["asc"] if J == 2 else [f"asc[{j}]" for j in range(1, J)]
    names = (asc_names if n_asc else []) + [f"beta[{c}]" for c in columns]
    return PlainLogitFit(names=names, coefs=theta, loglik=ll, information=info, se=se, iterations=iterations)


def null_loglik(dataset:Dataset, spec:ModelSpec)->float:
    """Intercept-only choice log-likelihood: Σ_j n_j ln(n_j / n)."""
    arrays = dataset.arrays()
    chosen = arrays.chosen[arrays.scenario_mask]
    counts = np.bincount(chosen, minlength=spec.J).astype(float)
    total = counts.sum()
    return float(math.fsum(c * math.log(c / total) for c in counts if c > 0))


# starting values

def starting_values(dataset:Dataset, spec:ModelSpec, layout:ParameterLayout=None)->np.ndarray:
    """γ = 0, Λ = 0, ψ = 1, loadings 1, thresholds from response shares, choice block from a plain logit prefit.

    With several classes the constants are spread around the prefit so the classes start apart.
    """
    layout = layout or ParameterLayout(spec)
    values = layout.default_constrained()
    arrays = dataset.arrays()
    categories = spec.categories
    tau_cache = {}
    for i, e in enumerate(layout.entries):
        if e.key[0] != "tau":
            continue
        owner, m = e.key[1], e.key[2]
        if owner not in tau_cache:
            if owner[0] == "ind":
                responses, c = arrays.indicators[:, owner[1]], categories[owner[1]]
            else:
                members = [h for h, g in enumerate(spec.indicator_map) if g == owner[1]]
                responses, c = arrays.indicators[:, members].reshape(-1), categories[members[0]]
            # Var(I*) = loading²ψ + Θ = 2 at the start
            tau_cache[owner] = threshold_start(responses, c, scale=math.sqrt(2.0))
        values[i] = tau_cache[owner][m]

    names = []
    for q in range(1, spec.Q + 1):
        for name in spec.utility_covariates_for(q):
            if name not in names:
                names.append(name)
    prefit = fit_plain_logit(dataset, spec, columns=names).as_dict()
    offsets = np.linspace(-0.5, 0.5, spec.Q) if spec.Q > 1 else np.zeros(1)
    scales = np.linspace(0.75, 1.25, spec.Q) if spec.Q > 1 else np.ones(1)
    for i, e in enumerate(layout.entries):
        if e.block != "choice":
            continue
        c = e.q - 1
        kind = e.key[0]
        if kind == "asc":
            values[i] = prefit.get(e.name, 0.0) + offsets[c]
        elif kind in ("beta", "mu"):
            values[i] = prefit.get(f"beta[{_utility_name(spec, e.q, e.key)}]", 0.0) * scales[c]
    return layout.from_constrained(values)


def _utility_name(spec:ModelSpec, q:int, key:tuple)->str:
    if key[0] == "beta":
        return spec.fixed_coefficients_for(q)[key[1]]
    return spec.random_coefficients_for(q)[key[1]]


# optimizer

@dataclass
class OptimizeOutcome:
    flat: np.ndarray
    loglik: float
    grad_max: float
    iterations: int
    converged: bool
    message: str


class _Objective:
    """Negated log-likelihood and gradient for scipy, remembering recent evaluations for the callback."""

    def __init__(self, engine:LikelihoodEngine) -> None:
        self.engine = engine
        self.cache: Dict[bytes, Tuple[float, np.ndarray]] = {}
        self.evaluations = 0

    def evaluate(self, u:np.ndarray)->Tuple[float, np.ndarray]:
        key = np.asarray(u, dtype=float).tobytes()
        if key not in self.cache:
            ll, grad = self.engine.loglik_and_gradient(u)
            self.evaluations += 1
            if len(self.cache) > 8:
                self.cache.pop(next(iter(self.cache)))
            self.cache[key] = (ll, grad)
        return self.cache[key]

    def __call__(self, u:np.ndarray):
        ll, grad = self.evaluate(u)
        if not np.isfinite(ll):
            return np.inf, np.zeros_like(u)
        return -ll, -grad


def _optimize(engine:LikelihoodEngine, x0:np.ndarray, options:EstimationOptions, start:int)->OptimizeOutcome:
    objective = _Objective(engine)
    trace = TraceContext.get_context()
    state = {"iteration": 0, "previous": objective.evaluate(x0)[0], "stalled": False}
    if trace:
        trace.begin_start(start)
        trace.on_iteration(0, state["previous"], float(np.max(np.abs(objective.evaluate(x0)[1]), initial=0.0)))

    def callback(xk):
        ll, grad = objective.evaluate(xk)
        state["iteration"] += 1
        grad_max = float(np.max(np.abs(grad), initial=0.0))
        if trace:
            trace.on_iteration(state["iteration"], ll, grad_max, trace.underflow_events)
        previous = state["previous"]
        state["previous"] = ll
        if abs(ll - previous) <= options.ll_rtol * max(abs(previous), 1.0):
            state["stalled"] = True
            raise StopIteration

    result = optimize.minimize(objective, x0, jac=True, method="BFGS", callback=callback,
                               options={"maxiter": options.max_iter, "gtol": options.tol, "norm": np.inf})
    flat = np.asarray(result.x, dtype=float)
    ll, grad = objective.evaluate(flat)
    grad_max = float(np.max(np.abs(grad), initial=0.0))
    converged = bool(np.isfinite(ll) and (grad_max <= options.tol or state["stalled"] or result.success))
    message = "relative log-likelihood change below tolerance" if state["stalled"] else str(result.message)
    return OptimizeOutcome(flat=flat, loglik=float(ll), grad_max=grad_max, iterations=state["iteration"],
                           converged=converged, message=message)


# standard errors

@dataclass
class StandardErrors:
    names: List[str]
    values: np.ndarray       # constrained estimates
    se: np.ndarray           # NaN where flagged
    flagged: np.ndarray      # bool
    covariance: np.ndarray   # constrained scale

    def as_dict(self)->Dict[str, float]:
        return dict(zip(self.names, self.se))


def _information(engine:LikelihoodEngine, flat:np.ndarray, method:str, evaluation:Evaluation=None)->np.ndarray:
    if method == "bhhh":
        evaluation = evaluation if evaluation is not None and evaluation.scores is not None else engine.evaluate(flat, gradient=True)
        return evaluation.scores.T @ evaluation.scores
    n = len(flat)
    hessian = np.zeros((n, n))
    for i in range(n):
        step = HESSIAN_STEP * max(1.0, abs(flat[i]))
        up, down = flat.copy(), flat.copy()
        up[i] += step
        down[i] -= step
        hessian[:, i] = (engine.loglik_and_gradient(up)[1] - engine.loglik_and_gradient(down)[1]) / (2.0 * step)
    hessian = 0.5 * (hessian + hessian.T)
    return -hessian


def _invert_information(information:np.ndarray)->Tuple[np.ndarray, np.ndarray]:
    """Pseudo-inverse on the well-determined eigenspace; parameters loading on singular directions are flagged."""
    n = information.shape[0]
    if n == 0:
        return np.zeros((0, 0)), np.zeros(0, dtype=bool)
    eigval, eigvec = np.linalg.eigh(0.5 * (information + information.T))
    top = np.max(np.abs(eigval))
    good = eigval > EIGEN_RTOL * top if top > 0 else np.zeros(n, dtype=bool)
    covariance = (eigvec[:, good] / eigval[good]) @ eigvec[:, good].T
    flagged = (eigvec[:, ~good] ** 2).sum(axis=1) > 1e-8
    return covariance, flagged


def _standard_errors(engine:LikelihoodEngine, flat:np.ndarray, method:str, evaluation:Evaluation=None)->StandardErrors:
    layout = engine.layout
    covariance, flagged = _invert_information(_information(engine, flat, method, evaluation))
    jac = layout.jacobian(flat)
    constrained_cov = jac @ covariance @ jac.T
    variances = np.diag(constrained_cov).copy()
    flagged = flagged | ~(variances > 0)
    se = np.where(flagged, np.nan, np.sqrt(np.where(variances > 0, variances, 0.0)))
    if np.any(flagged):
        logging.warning(f"Information matrix is singular along {int(flagged.sum())} parameters; "
                        f"their standard errors are not reported: {[layout.names[i] for i in np.flatnonzero(flagged)][:10]}")
    return StandardErrors(names=layout.names, values=layout.constrained(flat), se=se, flagged=flagged,
                          covariance=constrained_cov)


def standard_errors(theta_hat:ParameterSet, dataset:Dataset, spec:ModelSpec, method:str="hessian",
                    options:EstimationOptions=None, draws:DrawSet=None)->StandardErrors:
    """SEs of the free parameters on the reported scale (delta method through the reparameterization)."""
    options = options or EstimationOptions()
    if method not in ("hessian", "bhhh"):
        raise DomainError(f"standard error method must be hessian or bhhh, got {method}")
    draws = draws or make_draws(dataset, spec, options)
    engine = LikelihoodEngine(dataset, spec, draws, threads=options.threads, chunk_size=options.chunk_size)
    return _standard_errors(engine, engine.layout.pack(theta_hat), method)


# fit criteria

def fit_criteria(ll:float, ll_null:Optional[float], k:int, n:int, ll_choice:Optional[float]=None,
                 k_choice:Optional[int]=None)->FitCriteria:
    """Information criteria on `n` units and the comparison with the null model.

    The criteria penalize all `k` free parameters. LR and adjusted ρ² compare `ll_choice` (or `ll`) with the
    null choice model, so ρ² penalizes only the `k_choice` parameters behind that likelihood (membership and
    choice blocks); `k_choice` defaults to `k`.
    """
    if n < 2:
        raise DomainError(f"fit criteria need n >= 2 units, got {n}")
    if k < 0:
        raise DomainError(f"parameter count must be non-negative, got {k}")
    k_choice = k if k_choice is None else k_choice
    if not 0 <= k_choice <= k:
        raise DomainError(f"choice parameter count must lie in [0, {k}], got {k_choice}")
    deviance = -2.0 * ll
    aic = deviance + 2.0 * k
    aicc = aic + (2.0 * k * (k + 1) / (n - k - 1) if n - k - 1 > 0 else math.inf)
    fitted = ll if ll_choice is None else ll_choice
    lr = rho2 = None
    if ll_null is not None:
        lr = 2.0 * (fitted - ll_null)
        rho2 = 1.0 - (fitted - k_choice) / ll_null if ll_null != 0 else None
    return FitCriteria(
        ll=ll, ll_choice=ll_choice, ll_null=ll_null,
        aic=aic, aicc=aicc,
        bic=deviance + k * math.log(n),
        caic=deviance + k * (math.log(n) + 1.0),
        hqic=deviance + 2.0 * k * math.log(math.log(n)),
        lr_vs_null=lr, mcfadden_rho2_adj=rho2, k_params=k, k_choice=k_choice, n_units=n,
    )


def choice_parameter_count(layout:ParameterLayout)->int:
    """Free parameters of the membership and choice blocks."""
    return sum(1 for entry in layout.entries if entry.block in ("membership", "choice"))


# estimation

def estimate(dataset:Dataset, spec:ModelSpec, options:EstimationOptions=None, draws:DrawSet=None,
             start:Optional[np.ndarray]=None)->EstimationResult:
    """Multi-start BFGS maximization of the simulated log-likelihood.

    Non-convergence is reported on the result (and logged), never raised.
    """
    options = options or EstimationOptions()
    report = validate(dataset, spec)
    if not report.is_clean:
        raise RowValidationError(report.summary(), report.violations)
    draws = draws or make_draws(dataset, spec, options)
    engine = LikelihoodEngine(dataset, spec, draws, threads=options.threads, chunk_size=options.chunk_size)
    layout = engine.layout
    x0 = starting_values(dataset, spec, layout) if start is None else np.asarray(start, dtype=float)

    first = engine.evaluate(x0)
    if not np.isfinite(first.loglik):
        bad_params = [name for name, value in zip(layout.names, x0) if not np.isfinite(value)]
        raise EstimationError(
            f"Non-finite log-likelihood at the starting values for respondents {non_finite_respondents(first, engine.ids)[:10]}"
            + (f"; non-finite parameters {bad_params}" if bad_params else ""))

    rng = np.random.default_rng(options.seed)
    starts = [x0] + [x0 + rng.normal(0.0, options.jitter_sd, layout.n_free) for _ in range(options.starts - 1)]
    outcomes: List[OptimizeOutcome] = []
    for i, x in enumerate(starts):
        if i and not np.isfinite(engine.loglik(x)):
            logging.warning(f"Skipping start {i}: non-finite log-likelihood after jitter")
            outcomes.append(OptimizeOutcome(x, -math.inf, math.inf, 0, False, "non-finite start"))
            continue
        outcome = _optimize(engine, x, options, i)
        print_log(f"start {i}: ll={outcome.loglik:.6f} iterations={outcome.iterations} max|g|={outcome.grad_max:.3e} {outcome.message}",
                  logging.INFO, LogColors.DARK_GRAY)
        outcomes.append(outcome)
    best_index = int(np.argmax([o.loglik for o in outcomes]))
    best = outcomes[best_index]
    convergence = Convergence(converged=best.converged, iterations=best.iterations, grad_max=best.grad_max,
                              message=best.message, start_logliks=[o.loglik for o in outcomes], best_start=best_index)
    if not best.converged:
        logging.warning(f"Estimation did not converge: {best.message} (max|g| {best.grad_max:.3e})")
    return summarize_fit(engine, best.flat, convergence, dataset, spec, options)


def summarize_fit(engine:LikelihoodEngine, flat:np.ndarray, convergence:Convergence, dataset:Dataset,
                  spec:ModelSpec, options:EstimationOptions)->EstimationResult:
    layout = engine.layout
    evaluation = engine.evaluate(flat, gradient=options.se_method == "bhhh")
    errors = _standard_errors(engine, flat, options.se_method, evaluation)
    estimates = []
    for entry, value, se in zip(layout.entries, errors.values, errors.se):
        se_value = float(se) if np.isfinite(se) else None
        t = float(value / se) if se_value else None
        estimates.append(ParameterEstimate(parameter=entry.name, block=entry.block, q=entry.q,
                                           estimate=float(value), se=se_value, t=t))
    posterior = evaluation.posterior
    n_units = dataset.N if options.criteria_units == "respondents" else dataset.n_observations
    criteria = fit_criteria(evaluation.loglik, null_loglik(dataset, spec), layout.n_free, n_units,
                            ll_choice=engine.choice_loglik(flat), k_choice=choice_parameter_count(layout))
    return EstimationResult(
        spec=spec, options=options, layout=layout, flat=flat, estimates=estimates, loglik=evaluation.loglik,
        criteria=criteria, class_shares=posterior.mean(axis=0), posterior=posterior,
        respondent_ids=list(engine.ids), convergence=convergence, covariance=errors.covariance,
        draws_used=engine.draws.R,
    )


# class-count selection

def qualifies(shares:Iterable[float], min_share:float=MIN_CLASS_SHARE)->bool:
    """A solution qualifies when no class holds less than `min_share` of the sample."""
    return bool(np.min(np.asarray(list(shares), dtype=float)) >= min_share)


def select_classes(rows:List[dict])->Optional[int]:
    """Minimum BIC among qualified rows; ties go to the smaller class count."""
    best = None
    for row in sorted(rows, key=lambda r: r["classes"]):
        if not row["qualified"]:
            continue
        if best is None or row["bic"] < best["bic"]:
            best = row
    return None if best is None else int(best["classes"])


@dataclass
class SweepResult:
    table: pd.DataFrame
    selected: Optional[int]
    results: Dict[int, EstimationResult] = field(default_factory=dict)


def class_sweep(dataset:Dataset, spec:ModelSpec, q_range:Iterable[int], options:EstimationOptions=None,
                min_share:float=MIN_CLASS_SHARE)->SweepResult:
    options = options or EstimationOptions()
    rows, results = [], {}
    for Q in q_range:
        print_log(f"Estimating {Q} class model", logging.INFO, LogColors.CYAN)
        result = estimate(dataset, spec.with_classes(Q), options)
        results[Q] = result
        rows.append(sweep_row(Q, result, qualified=qualifies(result.class_shares, min_share)))
    table = pd.DataFrame(rows)
    max_q = max(results) if results else 0
    share_columns = [f"share_{q}" for q in range(1, max_q + 1)]
    table = table.reindex(columns=[c for c in table.columns if not c.startswith("share_")] + share_columns)
    selected = select_classes(rows)
    print_log(f"Selected {selected} classes", logging.INFO, LogColors.GREEN)
    return SweepResult(table=table, selected=selected, results=results)


# pruning

@dataclass
class PruneOutcome:
    spec: ModelSpec
    result: EstimationResult
    dropped: List[Tuple[int, str, float]]


def prune_insignificant(dataset:Dataset, spec:ModelSpec, options:EstimationOptions=None,
                        threshold:float=PRUNE_THRESHOLD)->PruneOutcome:
    """Backward elimination of observed utility covariates with |t| < threshold, one refit per drop.

    Constants, latent-variable terms and random-coefficient spreads are never dropped.
    """
    options = options or EstimationOptions()
    dropped = []
    while True:
        result = estimate(dataset, spec, options)
        candidates = []
        for entry, est in zip(result.layout.entries, result.estimates):
            if entry.block != "choice" or entry.key[0] not in ("beta", "mu") or est.t is None:
                continue
            if abs(est.t) < threshold:
                candidates.append((abs(est.t), entry.q, _utility_name(spec, entry.q, entry.key)))
        if not candidates:
            return PruneOutcome(spec=spec, result=result, dropped=dropped)
        t_abs, q, name = min(candidates)
        print_log(f"Dropping {name} from class {q} (|t| = {t_abs:.3f})", logging.INFO, LogColors.YELLOW)
        dropped.append((q, name, t_abs))
        spec = spec.without_utility_covariate(q, name)


# prediction

def predict(theta:ParameterSet, dataset:Dataset, spec:ModelSpec, draws:DrawSet, weights:str="posterior",
            threads:int=None)->np.ndarray:
    """Per-observation P(use) averaged over draws and class weights, (N, Tmax) with NaN padding."""
    engine = LikelihoodEngine(dataset, spec, draws, threads=threads)
    return engine.predict(engine.layout.pack(theta), weights=weights)


def prediction_frame(predicted:np.ndarray, dataset:Dataset)->pd.DataFrame:
    rows = []
    for n, r in enumerate(dataset.respondents):
        for t, s in enumerate(r.scenarios):
            rows.append({"respondent_id": r.id, "scenario_index": t + 1, "chosen": s.chosen, "p_use": predicted[n, t]})
    return pd.DataFrame(rows, columns=["respondent_id", "scenario_index", "chosen", "p_use"])
