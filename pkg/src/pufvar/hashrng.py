"""Counter-based random numbers keyed by (seed, stream, instance, name).

Sampling a component's delay must not depend on the order in which the
catalog is stored, or on which worker draws it.  Each variate is therefore a
pure function of its key, computed with the splitmix64 finalizer and turned
into a standard normal with the Box-Muller transform.
"""

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_NEG_53 = 2.0 ** -53


def name_key(name):
    """64-bit key of a component name (stable across runs and platforms)."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def name_keys(names):
    return np.fromiter((name_key(n) for n in names), dtype=np.uint64, count=len(names))


def _mix(x):
    with np.errstate(over="ignore"):
        x = x ^ (x >> np.uint64(30))
        x = x * _M1
        x = x ^ (x >> np.uint64(27))
        x = x * _M2
        x = x ^ (x >> np.uint64(31))
    return x


def _combine(*parts):
    h = np.uint64(0)
    with np.errstate(over="ignore"):
        for p in parts:
            h = _mix(h + _GOLDEN + np.asarray(p, dtype=np.uint64))
    return h


def uniform(keys, *context):
    """Uniform variates in the open interval (0, 1), one per key."""
    bits = _combine(*context, keys) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * _TWO_NEG_53


def normal(keys, *context):
    """Standard normal variates, one per key, via Box-Muller."""
    keys = np.asarray(keys, dtype=np.uint64)
    u1 = uniform(keys, *context, 0)
    u2 = uniform(keys, *context, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
