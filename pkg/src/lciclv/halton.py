"""Halton quasi-random sequences and the per-respondent standard-normal DrawSet."""
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from scipy import special

from .exceptions import DrawError

CLAMP_EPS = 1e-12
DEFAULT_SKIP = 10
PRIME_TABLE_SIZE = 100

CACHE_MAGIC = b"LCDRAWS\x00"
CACHE_VERSION = 1


def is_prime(value:int)->bool:
    if value < 2 or int(value) != value:
        return False
    value = int(value)
    if value < 4:
        return True
    if value % 2 == 0:
        return False
    divisor = 3
    while divisor * divisor <= value:
        if value % divisor == 0:
            return False
        divisor += 2
    return True


def first_primes(count:int)->List[int]:
    # sieve bound from the prime number theorem, grown until it holds `count` primes
    limit = max(16, int(count * (np.log(count + 1) + np.log(np.log(count + 2)) + 2)))
    while True:
        sieve = np.ones(limit + 1, dtype=bool)
        sieve[:2] = False
        for p in range(2, int(limit ** 0.5) + 1):
            if sieve[p]:
                sieve[p * p::p] = False
        primes = np.flatnonzero(sieve)
        if len(primes) >= count:
            return [int(p) for p in primes[:count]]
        limit *= 2


PRIMES = first_primes(PRIME_TABLE_SIZE)


def halton_point(index:int, base:int)->float:
    """Radical inverse of `index` (>= 1) in a prime `base`."""
    if not is_prime(base):
        raise DrawError(f"Halton base must be prime, got {base}")
    if int(index) != index or index < 1:
        raise DrawError(f"Halton index must be a positive integer, got {index}")
    result = 0.0
    f = 1.0
    i = int(index)
    while i > 0:
        f = f / base
        result += f * (i % base)
        i //= base
    return result


def digit_permutation(base:int, rng:np.random.Generator)->np.ndarray:
    """Random permutation of the non-zero digits; 0 maps to 0 so scrambled points stay finite expansions."""
    perm = np.arange(base)
    perm[1:] = rng.permutation(np.arange(1, base))
    return perm


def radical_inverse(indices:np.ndarray, base:int, permutation:Optional[np.ndarray]=None)->np.ndarray:
    i = np.asarray(indices, dtype=np.int64).copy()
    result = np.zeros(i.shape, dtype=float)
    f = 1.0
    while np.any(i > 0):
        f = f / base
        digits = i % base
        if permutation is not None:
            digits = permutation[digits]
        result += f * digits
        i //= base
    return result


@dataclass(frozen=True)
class DrawSet:
    """Standard-normal draws indexed (respondent, draw, dimension).

    Dimensions 0..G-1 feed the latent variables, G..G+P-1 the random coefficients.
    """
    draws: np.ndarray
    primes: List[int]
    skip: int = DEFAULT_SKIP
    seed_permutation: Optional[int] = None

    @property
    def n_respondents(self)->int:
        return self.draws.shape[0]

    @property
    def R(self)->int:
        return self.draws.shape[1]

    @property
    def dims(self)->int:
        return self.draws.shape[2]

    def for_respondent(self, n:int)->np.ndarray:
        return self.draws[n]

    def subset(self, indices)->"DrawSet":
        return DrawSet(self.draws[np.asarray(indices)], list(self.primes), self.skip, self.seed_permutation)


def halton_uniforms(n_respondents:int, R:int, dims:int, skip:int=DEFAULT_SKIP, seed_permutation:Optional[int]=None)->np.ndarray:
    """Uniform Halton points in contiguous per-respondent blocks, shape (n, R, dims)."""
    if dims > len(PRIMES):
        raise DrawError(f"Requested {dims} Halton dimensions but the prime table holds {len(PRIMES)}")
    if n_respondents < 0 or R < 1 or skip < 0:
        raise DrawError(f"Invalid draw settings: n={n_respondents}, R={R}, skip={skip}")
    rng = np.random.default_rng(seed_permutation) if seed_permutation is not None else None
    # respondent n (0-based) gets points skip + n*R + 1 ... skip + (n+1)*R
    indices = skip + np.arange(1, n_respondents * R + 1, dtype=np.int64)
    uniforms = np.empty((n_respondents * R, dims), dtype=float)
    for d in range(dims):
        perm = digit_permutation(PRIMES[d], rng) if rng is not None else None
        uniforms[:, d] = radical_inverse(indices, PRIMES[d], perm)
    return uniforms.reshape(n_respondents, R, dims)


def build_draws(n_respondents:int, R:int, dims:int, skip:int=DEFAULT_SKIP, seed_permutation:Optional[int]=None)->DrawSet:
    uniforms = halton_uniforms(n_respondents, R, dims, skip=skip, seed_permutation=seed_permutation)
    clamped = np.clip(uniforms, CLAMP_EPS, 1.0 - CLAMP_EPS)
    draws = special.ndtri(clamped)
    draws.setflags(write=False)
    return DrawSet(draws=draws, primes=PRIMES[:dims], skip=skip, seed_permutation=seed_permutation)


def save_draws(draws:DrawSet, path:Union[str, Path]):
    """Binary cache: magic, version, n, R, dims, skip, primes, then row-major little-endian float64."""
    path = Path(path)
    header = CACHE_MAGIC + struct.pack("<IIIII", CACHE_VERSION, draws.n_respondents, draws.R, draws.dims, draws.skip)
    header += struct.pack(f"<{draws.dims}I", *draws.primes)
    payload = np.ascontiguousarray(draws.draws, dtype="<f8").tobytes(order="C")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(payload)
    tmp.replace(path)


def load_draws(path:Union[str, Path])->DrawSet:
    raw = Path(path).read_bytes()
    if not raw.startswith(CACHE_MAGIC):
        raise DrawError(f"{path} is not a draw cache")
    offset = len(CACHE_MAGIC)
    version, n, R, dims, skip = struct.unpack_from("<IIIII", raw, offset)
    if version != CACHE_VERSION:
        raise DrawError(f"Unsupported draw cache version {version}")
    offset += 20
    primes = list(struct.unpack_from(f"<{dims}I", raw, offset))
    offset += 4 * dims
    expected = n * R * dims * 8
    if len(raw) - offset != expected:
        raise DrawError(f"Draw cache {path} is truncated")
    draws = np.frombuffer(raw, dtype="<f8", offset=offset).reshape(n, R, dims).astype(float)
    draws.setflags(write=False)
    return DrawSet(draws=draws, primes=primes, skip=skip)
