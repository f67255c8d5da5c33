from dataclasses import dataclass

import numpy as np

from .distributions import log_softmax, softmax
from .exceptions import DomainError


@dataclass(frozen=True)
class MembershipParams:
    """Class-membership logit; class 1 is the reference and carries no parameters."""
    intercept: np.ndarray   # (Q,)
    gamma: np.ndarray       # (Q, M)

    def __post_init__(self):
        intercept = np.asarray(self.intercept, dtype=float).reshape(-1)
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.ndim != 2:
            gamma = gamma.reshape(len(intercept), gamma.size // len(intercept))
        if intercept[0] != 0.0 or np.any(gamma[0] != 0.0):
            raise DomainError("membership parameters of the reference class must be zero")
        object.__setattr__(self, "intercept", intercept)
        object.__setattr__(self, "gamma", gamma)

    @property
    def Q(self)->int:
        return len(self.intercept)

    @classmethod
    def uniform(cls, Q:int, M:int)->"MembershipParams":
        return cls(np.zeros(Q), np.zeros((Q, M)))


def membership_utilities(z, params:MembershipParams)->np.ndarray:
    z = np.asarray(z, dtype=float)
    return params.intercept + z @ params.gamma.T


def membership_probs(z, params:MembershipParams)->np.ndarray:
    """softmax(0, γ_2ᵀz, ..., γ_Qᵀz); `z` may be (M,) or (n, M)."""
    return softmax(membership_utilities(z, params), axis=-1)


def membership_log_probs(z, params:MembershipParams)->np.ndarray:
    return log_softmax(membership_utilities(z, params), axis=-1)
