"""Scalar and small-matrix probability kernels shared by every model layer."""
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special

from .exceptions import CovarianceError, DomainError

LOG_2PI = math.log(2.0 * math.pi)
SYMMETRY_TOL = 1e-12

ArrayLike = Union[float, np.ndarray]


def std_normal_cdf(x:ArrayLike)->ArrayLike:
    """Φ(x). scipy's ndtr is erfc based, so Φ(-x) = 1 - Φ(x) holds to double precision."""
    out = special.ndtr(x)
    return float(out) if np.ndim(out) == 0 else out


def std_normal_pdf(x:ArrayLike)->ArrayLike:
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return float(out) if out.ndim == 0 else out


def std_normal_inv_cdf(p:ArrayLike)->ArrayLike:
    p_arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p_arr)) or np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise DomainError(f"std_normal_inv_cdf needs p in (0, 1), got {p}")
    out = special.ndtri(p_arr)
    return float(out) if out.ndim == 0 else out


def interval_prob(lo:ArrayLike, hi:ArrayLike)->ArrayLike:
    """Φ(hi) - Φ(lo) for lo <= hi, evaluated on the side of zero that avoids cancellation."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    upper_tail = lo > 0
    direct = special.ndtr(hi) - special.ndtr(lo)
    mirrored = special.ndtr(-lo) - special.ndtr(-hi)
    out = np.where(upper_tail, mirrored, direct)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def softmax(v:np.ndarray, axis:int=-1)->np.ndarray:
    """Max-subtracted softmax (scipy.special.softmax)."""
    v = np.asarray(v, dtype=float)
    return special.softmax(v, axis=axis)


def log_softmax(v:np.ndarray, axis:int=-1)->np.ndarray:
    v = np.asarray(v, dtype=float)
    return v - special.logsumexp(v, axis=axis, keepdims=True)


@dataclass(frozen=True)
class Covariance:
    """Symmetric positive-definite G×G matrix, optionally declared diagonal."""
    matrix: np.ndarray
    diagonal: bool = True

    def __post_init__(self):
        matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if matrix.shape[0] != matrix.shape[1]:
            raise CovarianceError(f"Covariance must be square, got shape {matrix.shape}")
        if np.max(np.abs(matrix - matrix.T), initial=0.0) > SYMMETRY_TOL:
            raise CovarianceError("Covariance is not symmetric")
        if self.diagonal and np.any(matrix[~np.eye(matrix.shape[0], dtype=bool)] != 0.0):
            raise CovarianceError("Covariance declared diagonal has off-diagonal entries")
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def from_variances(cls, variances)->"Covariance":
        return cls(np.diag(np.asarray(variances, dtype=float)), diagonal=True)

    @classmethod
    def from_cholesky(cls, lower:np.ndarray)->"Covariance":
        lower = np.asarray(lower, dtype=float)
        matrix = lower @ lower.T
        return cls(0.5 * (matrix + matrix.T), diagonal=False)

    @property
    def dim(self)->int:
        return self.matrix.shape[0]

    @property
    def variances(self)->np.ndarray:
        return np.diag(self.matrix).copy()

    def cholesky(self)->np.ndarray:
        """Lower Cholesky factor. Diagonal matrices with zero variances are allowed (point-mass limit)."""
        if self.diagonal:
            variances = self.variances
            if np.any(variances < 0):
                raise CovarianceError("Covariance has negative variances")
            return np.diag(np.sqrt(variances))
        try:
            return np.linalg.cholesky(self.matrix)
        except np.linalg.LinAlgError as e:
            raise CovarianceError("Covariance is not positive definite") from e

    def require_positive_definite(self):
        if self.diagonal:
            if np.any(self.variances <= 0):
                raise CovarianceError("Covariance is not positive definite")
        else:
            self.cholesky()


def mvn_logpdf(x:np.ndarray, mean:np.ndarray, cov:Covariance)->float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if x.shape != mean.shape or x.shape[0] != cov.dim:
        raise DomainError(f"Dimension mismatch: x {x.shape}, mean {mean.shape}, covariance {cov.dim}")
    cov.require_positive_definite()
    lower = cov.cholesky()
    resid = x - mean
    if cov.diagonal:
        scaled = resid / np.diag(lower)
    else:
        scaled = np.linalg.solve(lower, resid)
    logdet = 2.0 * np.sum(np.log(np.diag(lower)))
    g = x.shape[0]
    return float(-0.5 * g * LOG_2PI - 0.5 * logdet - 0.5 * np.dot(scaled, scaled))
