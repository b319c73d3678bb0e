"""Counter-based random numbers for reproducible lazy percolation.

Every random quantity in the package is a pure function of a 64-bit master
seed and a small tuple of integers (sample index, a stream tag, a 64-bit site
or edge hash, and a draw counter).  The underlying bijection is
Philox4x32-10 (Salmon et al., Random123), so streams can be opened anywhere
in any order and by any worker without coordination.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# stream tags (second counter word)
TAG_VERTEX = 1
TAG_EDGE = 2
TAG_EXTRA = 3

_TWO53_INV = 1.0 / 9007199254740992.0


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x32 block function; all arguments are uint32."""
    c0 = np.uint32(c0)
    c1 = np.uint32(c1)
    c2 = np.uint32(c2)
    c3 = np.uint32(c3)
    k0 = np.uint32(k0)
    k1 = np.uint32(k1)
    for _ in range(10):
        p0 = np.uint64(c0) * _M0
        p1 = np.uint64(c2) * _M1
        hi0 = np.uint32(p0 >> _S32)
        lo0 = np.uint32(p0 & _LO)
        hi1 = np.uint32(p1 >> _S32)
        lo1 = np.uint32(p1 & _LO)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = np.uint32(k0 + _W0)
        k1 = np.uint32(k1 + _W1)
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def mix64(h):
    """SplitMix64 finaliser, used to fold integers into 64-bit keys."""
    h = np.uint64(h)
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return h ^ (h >> np.uint64(31))


@nb.njit(cache=True)
def site_hash(coords, sample_index):
    h = mix64(np.uint64(sample_index) ^ np.uint64(0x9E3779B97F4A7C15))
    for i in range(coords.shape[0]):
        h = mix64(h ^ np.uint64(coords[i] & np.int64(0x7FFFFFFFFFFFFFFF))
                  ^ (np.uint64(coords[i] < 0) << np.uint64(63)))
        h = h + np.uint64(0x632BE59BD9B4E019)
    return h


@nb.njit(cache=True)
def edge_hash(a, b, sample_index):
    """Hash of an undirected edge; ``a`` must be the lexicographically smaller endpoint."""
    h = site_hash(a, sample_index)
    h = mix64(h ^ np.uint64(0xD6E8FEB86659FD93))
    for i in range(b.shape[0]):
        h = mix64(h ^ np.uint64(b[i] & np.int64(0x7FFFFFFFFFFFFFFF))
                  ^ (np.uint64(b[i] < 0) << np.uint64(63)))
        h = h + np.uint64(0x632BE59BD9B4E019)
    return h


@nb.njit(cache=True, inline="always")
def _to_unit(hi, lo):
    bits = (np.uint64(hi) << np.uint64(21)) ^ (np.uint64(lo) >> np.uint64(11))
    bits = bits & np.uint64(0x1FFFFFFFFFFFFF)
    return (np.float64(bits) + 0.5) * _TWO53_INV


@nb.njit(cache=True)
def uniform_pair(seed, tag, key, counter):
    """Two independent uniforms on (0, 1) from the block at ``counter``."""
    k0 = np.uint32(np.uint64(seed) & _LO)
    k1 = np.uint32(np.uint64(seed) >> _S32)
    r0, r1, r2, r3 = philox4x32(np.uint32(counter), np.uint32(tag),
                                np.uint32(np.uint64(key) & _LO),
                                np.uint32(np.uint64(key) >> _S32), k0, k1)
    return _to_unit(r0, r1), _to_unit(r2, r3)


@nb.njit(cache=True, inline="always")
def uniform(seed, tag, key, counter):
    return uniform_pair(seed, tag, key, counter)[0]


@nb.njit(cache=True)
def bits64(seed, tag, key, counter):
    k0 = np.uint32(np.uint64(seed) & _LO)
    k1 = np.uint32(np.uint64(seed) >> _S32)
    r0, r1, r2, r3 = philox4x32(np.uint32(counter), np.uint32(tag),
                                np.uint32(np.uint64(key) & _LO),
                                np.uint32(np.uint64(key) >> _S32), k0, k1)
    return (np.uint64(r0) << _S32) | np.uint64(r1)


@nb.njit(cache=True)
def randbelow(n, seed, tag, key, counter):
    """Exactly uniform integer in [0, n) by masked rejection; returns (value, next_counter)."""
    n = np.uint64(n)
    if n <= np.uint64(1):
        return np.int64(0), counter
    mask = n - np.uint64(1)
    mask |= mask >> np.uint64(1)
    mask |= mask >> np.uint64(2)
    mask |= mask >> np.uint64(4)
    mask |= mask >> np.uint64(8)
    mask |= mask >> np.uint64(16)
    mask |= mask >> np.uint64(32)
    while True:
        v = bits64(seed, tag, key, counter) & mask
        counter += 1
        if v < n:
            return np.int64(v), counter


@nb.njit(cache=True)
def poisson(lam, seed, tag, key, counter):
    """Exact Poisson(lam) variate drawn from a keyed stream.

    Returns ``(k, next_counter)``.  Inversion for small means, Hormann's
    PTRS transformed rejection otherwise.
    """
    if lam <= 0.0:
        return 0, counter
    if lam < 12.0:
        u = uniform(seed, tag, key, counter)
        counter += 1
        k = 0
        pk = math.exp(-lam)
        cdf = pk
        while u > cdf and pk > 0.0:
            k += 1
            pk *= lam / k
            cdf += pk
        return k, counter
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u, v = uniform_pair(seed, tag, key, counter)
        counter += 1
        u = u - 0.5
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return np.int64(k), counter
        if k < 0.0 or (us < 0.013 and v > us):
            continue
        lhs = math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
        rhs = -lam + k * loglam - math.lgamma(k + 1.0)
        if lhs <= rhs:
            return np.int64(k), counter


def uniforms(seed: int, tag: int, key: int, n: int, start: int = 0) -> np.ndarray:
    """``n`` consecutive uniforms of one stream, starting at block ``start``."""
    return np.array([uniform(np.uint64(seed % (1 << 64)), tag, np.uint64(key % (1 << 64)), start + i)
                     for i in range(n)])
