"""Counter-based hashing PRNG.

Every random quantity in the simulator is a pure function of a seed and an
integer key tuple, so values can be regenerated in any order (lazy endurance
draws, per-event update draws) and stay bit-identical across runs.
"""

import numpy as np
from scipy.special import ndtri

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream tags keep independent uses from colliding on equal key tuples
TAG_ENDURANCE = 1
TAG_GROUP_UPDATE = 2
TAG_FAULT_INJECT = 3


def _splitmix(x):
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(k):
    a = np.asarray(k)
    if a.dtype.kind == "u":
        return a.astype(np.uint64, copy=False)
    if a.dtype.kind == "i":
        return a.astype(np.int64, copy=False).view(np.uint64)
    raise TypeError(f"integer keys required, got {a.dtype}")


def hash_keys(seed, *keys):
    """Mix ``seed`` and the broadcast integer ``keys`` into uint64 hashes."""
    h = _splitmix(np.asarray(np.uint64(int(seed) & _MASK)))
    for k in keys:
        h = _splitmix(h ^ _as_u64(k))
    return h


def uniform(seed, *keys):
    """Uniform doubles strictly inside (0, 1)."""
    h = hash_keys(seed, *keys)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / (1 << 53))


def normal(seed, *keys):
    return ndtri(uniform(seed, *keys))
