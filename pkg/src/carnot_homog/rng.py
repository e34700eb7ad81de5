"""Counter-based random number generation.

All randomness in the package flows through stateless hashes of
(seed, tag, counter) tuples, so any sample can be regenerated in isolation:
Monte-Carlo replicas, environment fields and solver multi-starts are
reproducible independently of evaluation order or worker scheduling.
"""

from __future__ import annotations

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)

# splitmix64 constants
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer; operates elementwise on uint64 arrays."""
    z = (z + _GAMMA) & _MASK
    z = ((z ^ (z >> np.uint64(30))) * _M1) & _MASK
    z = ((z ^ (z >> np.uint64(27))) * _M2) & _MASK
    return z ^ (z >> np.uint64(31))


def _tag_hash(tag: str) -> np.uint64:
    h = 1469598103934665603  # FNV offset basis
    for ch in tag.encode("utf8"):
        h = ((h ^ ch) * 1099511628211) & 0xFFFFFFFFFFFFFFFF
    return np.uint64(h)


def hash_u64(seed: int, tag: str, counters: np.ndarray) -> np.ndarray:
    """Hash (seed, tag, counter) -> uint64, vectorized over ``counters``."""
    c = np.asarray(counters, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _tag_hash(tag)
    return _mix(_mix(np.full_like(c, z) ^ (c * _GAMMA & _MASK)) ^ c)


def uniform(seed: int, tag: str, counters) -> np.ndarray:
    """Uniforms in [0, 1), one per counter."""
    bits = hash_u64(seed, tag, np.asarray(counters))
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def uniforms(seed: int, tag: str, start: int, n: int) -> np.ndarray:
    return uniform(seed, tag, np.arange(start, start + n, dtype=np.uint64))


def normals(seed: int, tag: str, start: int, n: int) -> np.ndarray:
    """Standard normals via Box-Muller on counter pairs."""
    u1 = uniforms(seed, tag + "/bm1", start, n)
    u2 = uniforms(seed, tag + "/bm2", start, n)
    u1 = np.maximum(u1, 1e-300)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """Child seed for (purpose tag, index); stable across runs and workers."""
    return int(hash_u64(seed, tag, np.asarray([index], dtype=np.uint64))[0])


def hash_ints(seed: int, tag: str, ints: np.ndarray) -> np.ndarray:
    """Hash rows of an integer matrix (K, D) to uint64 by chained mixing."""
    ints = np.atleast_2d(np.asarray(ints))
    h = np.full(ints.shape[0], np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _tag_hash(tag),
                dtype=np.uint64)
    for d in range(ints.shape[1]):
        h = _mix(h ^ (ints[:, d].astype(np.int64).view(np.uint64) * _GAMMA & _MASK))
    return h


def poisson(seed: int, tag: str, counters, lam: float, kmax: int = 16) -> np.ndarray:
    """Poisson(lam) counts by CDF inversion of counter-based uniforms.

    Truncated at ``kmax``; with the bump densities used here the truncated
    mass is far below 1e-9.
    """
    u = uniform(seed, tag, np.asarray(counters))
    k = np.arange(kmax + 1)
    # cumulative Poisson probabilities, shape (kmax+1,)
    logp = k * np.log(lam) - lam - np.cumsum(np.concatenate([[0.0], np.log(np.maximum(k[1:], 1))]))
    cdf = np.cumsum(np.exp(logp))
    return np.minimum(np.searchsorted(cdf, u), kmax).astype(np.int64)
