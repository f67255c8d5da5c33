from dataclasses import dataclass

import numpy as np

from .distributions import Covariance, mvn_logpdf
from .exceptions import DomainError


@dataclass(frozen=True)
class StructuralParams:
    lambda_: np.ndarray   # (G, K), zero outside the declared structural covariates
    psi: Covariance

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.lambda_, dtype=float))
        if lam.shape[0] != self.psi.dim:
            raise DomainError(f"Λ has {lam.shape[0]} rows but Ψ is {self.psi.dim}x{self.psi.dim}")
        object.__setattr__(self, "lambda_", lam)

    @property
    def G(self)->int:
        return self.psi.dim


def latent_mean(x, params:StructuralParams)->np.ndarray:
    """Λx; `x` may be (K,) or (n, K)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.lambda_.shape[1]:
        raise DomainError(f"x has {x.shape[-1]} covariates, Λ expects {params.lambda_.shape[1]}")
    return x @ params.lambda_.T


def realize_latents(mean, psi:Covariance, std_draw)->np.ndarray:
    """mean + L·draw with L the lower Cholesky factor of Ψ; broadcasts over leading draw axes."""
    mean = np.asarray(mean, dtype=float)
    std_draw = np.asarray(std_draw, dtype=float)
    lower = psi.cholesky()
    if psi.diagonal:
        return mean + std_draw * np.diag(lower)
    return mean + std_draw @ lower.T


def structural_logpdf(latent, x, params:StructuralParams)->float:
    return mvn_logpdf(latent, latent_mean(x, params), params.psi)
