"""Parameter containers and the flat unconstrained layout the optimizer works on.

Every free parameter has one entry in a ParameterLayout. Entries carry a transform from the
unconstrained (packed) value to the reported (constrained) one:

    identity   value = u
    log        value = exp(u)                     standard deviations, ψ diagonals, Cholesky diagonals
    gap        τ_m = τ_{m-1} + exp(u)             threshold m ≥ 2 of an indicator (or shared construct set)

Fixed values (reference loadings and intercepts, the reference class membership block, unit
probit scales) never enter the vector.
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import special

from .choice import ChoiceParams, UtilityColumn
from .distributions import Covariance
from .exceptions import ConfigError, DomainError, LayoutError
from .measurement import MeasurementParams
from .membership import MembershipParams
from .model_spec import ModelSpec
from .structural import StructuralParams

IDENTITY = "identity"
LOG = "log"
GAP = "gap"

DEFAULT_SIGMA = 0.5


@dataclass(frozen=True)
class ClassParams:
    structural: StructuralParams
    measurement: MeasurementParams
    choice: ChoiceParams


@dataclass(frozen=True)
class ParameterSet:
    membership: MembershipParams
    classes: Tuple[ClassParams, ...]
    spec: ModelSpec

    @property
    def Q(self)->int:
        return len(self.classes)

    def for_class(self, q:int)->ClassParams:
        """class q, 1-based"""
        return self.classes[q - 1]


@dataclass(frozen=True)
class ParamEntry:
    name: str          # label inside its block, e.g. "loading[TE2]"
    block: str         # membership | structural | measurement | choice
    q: int             # 1-based class
    key: tuple
    transform: str = IDENTITY
    owner: Optional[tuple] = None   # threshold set the entry belongs to

    @property
    def full_name(self)->str:
        return f"{self.block}[{self.q}].{self.name}"


def utility_column(spec:ModelSpec, name:str)->UtilityColumn:
    if name in spec.scenario_attributes:
        return UtilityColumn(name, True, spec.scenario_attributes.index(name))
    return UtilityColumn(name, False, spec.covariate_names.index(name))


class ParameterLayout:

    def __init__(self, spec:ModelSpec) -> None:
        self.spec = spec
        self.entries: List[ParamEntry] = []
        self._build()
        self.index: Dict[Tuple[str, int, tuple], int] = {
            (e.block, e.q, e.key): i for i, e in enumerate(self.entries)
        }
        self._owners: Dict[tuple, List[int]] = {}
        for i, e in enumerate(self.entries):
            if e.owner is not None:
                self._owners.setdefault(e.owner, []).append(i)

    # layout construction

    def _add(self, name, block, q, key, transform=IDENTITY, owner=None):
        self.entries.append(ParamEntry(name, block, q, key, transform, owner))

    def _build(self):
        spec = self.spec
        ident = spec.identification
        latent_names = spec.latent_names
        for q in range(2, spec.Q + 1):
            if spec.membership_intercept:
                self._add("intercept", "membership", q, ("intercept",))
            for m, name in enumerate(spec.membership_covariates):
                self._add(f"gamma[{name}]", "membership", q, ("gamma", m))
        covariate_names = spec.covariate_names
        indicator_names = spec.indicator_names
        reference = set(spec.reference_indicators)
        for q in range(1, spec.Q + 1):
            for g, lv in enumerate(spec.latent_variables):
                for cov in lv.structural_covariates:
                    self._add(f"lambda[{lv.name}~{cov}]", "structural", q, ("lambda", g, covariate_names.index(cov)))
            if ident.full_covariance:
                for i in range(spec.G):
                    for j in range(i + 1):
                        name = f"chol[{latent_names[i]},{latent_names[j]}]"
                        self._add(name, "structural", q, ("chol", i, j), LOG if i == j else IDENTITY)
            elif not ident.fix_latent_variance:
                for g, name in enumerate(latent_names):
                    self._add(f"psi[{name}]", "structural", q, ("psi", g), LOG)
            for h, name in enumerate(indicator_names):
                if h not in reference or ident.fix_latent_variance:
                    self._add(f"loading[{name}]", "measurement", q, ("loading", h))
                if ident.shared_thresholds and h not in reference:
                    self._add(f"intercept[{name}]", "measurement", q, ("intercept", h))
                if ident.free_error_variance and h not in reference:
                    self._add(f"sd[{name}]", "measurement", q, ("sd", h), LOG)
            if ident.shared_thresholds:
                for g, lv in enumerate(spec.latent_variables):
                    first = indicator_names.index(lv.indicators[0])
                    self._add_thresholds(q, ("lv", g), lv.name, spec.categories[first])
            else:
                for h, name in enumerate(indicator_names):
                    self._add_thresholds(q, ("ind", h), name, spec.categories[h])
            if spec.choice_intercept:
                for j in range(1, spec.J):
                    self._add("asc" if spec.J == 2 else f"asc[{j}]", "choice", q, ("asc", j))
            for i, name in enumerate(spec.fixed_coefficients_for(q)):
                self._add(f"beta[{name}]", "choice", q, ("beta", i))
            for l, name in enumerate(spec.latent_in_utility):
                self._add(f"gamma[{name}]", "choice", q, ("gamma", l))
            for p, name in enumerate(spec.random_coefficients_for(q)):
                self._add(f"mu[{name}]", "choice", q, ("mu", p))
            for p, name in enumerate(spec.random_coefficients_for(q)):
                self._add(f"sigma[{name}]", "choice", q, ("sigma", p), LOG)

    def _add_thresholds(self, q, owner, label, categories):
        for m in range(categories - 1):
            self._add(f"tau[{label}][{m + 1}]", "measurement", q, ("tau", owner, m),
                      IDENTITY if m == 0 else GAP, owner=(q,) + owner)

    # views

    @property
    def n_free(self)->int:
        return len(self.entries)

    @property
    def names(self)->List[str]:
        return [e.full_name for e in self.entries]

    def slot(self, block:str, q:int, key:tuple)->Optional[int]:
        return self.index.get((block, q, key))

    def _check(self, flat)->np.ndarray:
        flat = np.asarray(flat, dtype=float).reshape(-1)
        if flat.shape[0] != self.n_free:
            raise LayoutError(f"Flat parameter vector has length {flat.shape[0]}, the layout expects {self.n_free}")
        return flat

    # transforms

    def constrained(self, flat)->np.ndarray:
        flat = self._check(flat)
        values = np.empty_like(flat)
        for i, e in enumerate(self.entries):
            if e.transform == IDENTITY:
                values[i] = flat[i]
            elif e.transform == LOG:
                values[i] = math.exp(flat[i])
            else:
                values[i] = values[i - 1] + math.exp(flat[i])
        return values

    def from_constrained(self, values)->np.ndarray:
        values = self._check(values)
        flat = np.empty_like(values)
        for i, e in enumerate(self.entries):
            if e.transform == IDENTITY:
                flat[i] = values[i]
            elif e.transform == LOG:
                if not values[i] > 0:
                    raise DomainError(f"{e.full_name} must be positive, got {values[i]}")
                flat[i] = math.log(values[i])
            else:
                gap = values[i] - values[i - 1]
                if not gap > 0:
                    raise DomainError(f"{e.full_name} must exceed the previous threshold ({values[i - 1]}), got {values[i]}")
                flat[i] = math.log(gap)
        return flat

    def jacobian(self, flat)->np.ndarray:
        """∂ constrained / ∂ packed, used by the delta method."""
        flat = self._check(flat)
        jac = np.zeros((self.n_free, self.n_free))
        for i, e in enumerate(self.entries):
            if e.transform == IDENTITY:
                jac[i, i] = 1.0
            elif e.transform == LOG:
                jac[i, i] = math.exp(flat[i])
            else:
                # τ_m depends on τ_1 and every gap up to m
                jac[i] = jac[i - 1]
                jac[i, i] = math.exp(flat[i])
        return jac

    # defaults and named values

    def default_constrained(self)->np.ndarray:
        values = np.zeros(self.n_free)
        for i, e in enumerate(self.entries):
            kind = e.key[0]
            if kind in ("loading", "psi", "sd"):
                values[i] = 1.0
            elif kind == "chol":
                values[i] = 1.0 if e.key[1] == e.key[2] else 0.0
            elif kind == "sigma":
                values[i] = DEFAULT_SIGMA
            elif kind == "tau":
                categories = len(self._owners[e.owner]) + 1
                values[i] = float(special.ndtri((e.key[2] + 1) / categories)) * math.sqrt(2.0)
        return values

    def default_flat(self)->np.ndarray:
        return self.from_constrained(self.default_constrained())

    def named(self, flat)->Dict[str, float]:
        return dict(zip(self.names, self.constrained(flat)))

    def from_named(self, mapping:Dict[str, float], base:Optional[np.ndarray]=None)->np.ndarray:
        """Packed vector from constrained values given by full name; unnamed entries keep `base` (or neutral defaults)."""
        values = self.default_constrained() if base is None else self.constrained(base)
        lookup = {name: i for i, name in enumerate(self.names)}
        unknown = [name for name in mapping if name not in lookup]
        if unknown:
            raise ConfigError(f"Unknown parameter names {unknown}; valid names look like {self.names[:5]}")
        for name, value in mapping.items():
            values[lookup[name]] = float(value)
        return self.from_constrained(values)

    # ParameterSet conversion

    def unpack(self, flat)->ParameterSet:
        values = self.constrained(flat)
        spec = self.spec
        Q, G, H, K, M = spec.Q, spec.G, spec.H, spec.K, spec.M
        indicator_map = tuple(spec.indicator_map)
        lv_indicators = [[h for h in range(H) if indicator_map[h] == g] for g in range(G)]
        latent_index = tuple(spec.latent_names.index(n) for n in spec.latent_in_utility)

        intercept = np.zeros(Q)
        gamma_m = np.zeros((Q, M))
        lam = np.zeros((Q, G, K))
        psi = np.ones((Q, G))
        chol = np.tile(np.eye(G), (Q, 1, 1))
        loadings = np.zeros((Q, H, G))
        loadings[:, np.arange(H), list(indicator_map)] = 1.0
        xi = np.zeros((Q, H))
        sd = np.ones((Q, H))
        taus = [[np.zeros(c - 1) for c in spec.categories] for _ in range(Q)]
        asc = np.zeros((Q, max(spec.J - 1, 0)))
        fixed = [np.zeros(len(spec.fixed_coefficients_for(q))) for q in range(1, Q + 1)]
        gamma_u = np.zeros((Q, len(latent_index)))
        mu = [np.zeros(len(spec.random_coefficients_for(q))) for q in range(1, Q + 1)]
        sigma = [np.zeros(len(spec.random_coefficients_for(q))) for q in range(1, Q + 1)]

        for e, value in zip(self.entries, values):
            c = e.q - 1
            kind = e.key[0]
            if e.block == "membership":
                if kind == "intercept":
                    intercept[c] = value
                else:
                    gamma_m[c, e.key[1]] = value
            elif kind == "lambda":
                lam[c, e.key[1], e.key[2]] = value
            elif kind == "psi":
                psi[c, e.key[1]] = value
            elif kind == "chol":
                chol[c, e.key[1], e.key[2]] = value
            elif kind == "loading":
                loadings[c, e.key[1], indicator_map[e.key[1]]] = value
            elif kind == "intercept":
                xi[c, e.key[1]] = value
            elif kind == "sd":
                sd[c, e.key[1]] = value
            elif kind == "tau":
                owner, m = e.key[1], e.key[2]
                targets = lv_indicators[owner[1]] if owner[0] == "lv" else [owner[1]]
                for h in targets:
                    taus[c][h][m] = value
            elif kind == "asc":
                asc[c, e.key[1] - 1] = value
            elif kind == "beta":
                fixed[c][e.key[1]] = value
            elif kind == "gamma":
                gamma_u[c, e.key[1]] = value
            elif kind == "mu":
                mu[c][e.key[1]] = value
            elif kind == "sigma":
                sigma[c][e.key[1]] = value

        classes = []
        for c in range(Q):
            q = c + 1
            if spec.identification.full_covariance:
                covariance = Covariance.from_cholesky(chol[c])
            else:
                covariance = Covariance.from_variances(psi[c])
            structural = StructuralParams(lambda_=lam[c], psi=covariance)
            measurement = MeasurementParams(loadings=loadings[c], intercepts=xi[c], error_sd=sd[c],
                                            thresholds=tuple(taus[c]), indicator_map=indicator_map)
            choice = ChoiceParams(
                asc=asc[c], fixed=fixed[c],
                fixed_columns=tuple(utility_column(spec, n) for n in spec.fixed_coefficients_for(q)),
                gamma=gamma_u[c], latent_index=latent_index,
                random_mu=mu[c], random_sigma=sigma[c],
                random_columns=tuple(utility_column(spec, n) for n in spec.random_coefficients_for(q)))
            classes.append(ClassParams(structural, measurement, choice))
        return ParameterSet(MembershipParams(intercept, gamma_m), tuple(classes), spec)

    def pack(self, theta:ParameterSet)->np.ndarray:
        values = np.zeros(self.n_free)
        chol = {}
        for i, e in enumerate(self.entries):
            kind = e.key[0]
            if e.block == "membership":
                values[i] = theta.membership.intercept[e.q - 1] if kind == "intercept" else theta.membership.gamma[e.q - 1, e.key[1]]
                continue
            cls = theta.for_class(e.q)
            if kind == "lambda":
                values[i] = cls.structural.lambda_[e.key[1], e.key[2]]
            elif kind == "psi":
                values[i] = cls.structural.psi.matrix[e.key[1], e.key[1]]
            elif kind == "chol":
                if e.q not in chol:
                    chol[e.q] = cls.structural.psi.cholesky()
                values[i] = chol[e.q][e.key[1], e.key[2]]
            elif kind == "loading":
                values[i] = cls.measurement.loading(e.key[1])
            elif kind == "intercept":
                values[i] = cls.measurement.intercepts[e.key[1]]
            elif kind == "sd":
                values[i] = cls.measurement.error_sd[e.key[1]]
            elif kind == "tau":
                owner, m = e.key[1], e.key[2]
                h = owner[1] if owner[0] == "ind" else self.spec.indicator_map.index(owner[1])
                values[i] = cls.measurement.thresholds[h][m]
            elif kind == "asc":
                values[i] = cls.choice.asc[e.key[1] - 1]
            elif kind == "beta":
                values[i] = cls.choice.fixed[e.key[1]]
            elif kind == "gamma":
                values[i] = cls.choice.gamma[e.key[1]]
            elif kind == "mu":
                values[i] = cls.choice.random_mu[e.key[1]]
            elif kind == "sigma":
                values[i] = cls.choice.random_sigma[e.key[1]]
        return self.from_constrained(values)

    def describe(self)->List[dict]:
        return [{"parameter": e.name, "block": e.block, "class": e.q, "full_name": e.full_name} for e in self.entries]
