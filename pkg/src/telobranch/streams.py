"""Counter-based random streams keyed by (seed, replicate, cell label).

Every cell of every replicate owns a 64-bit key.  Children derive their key
from the parent key and their slot, so a cell's draws depend only on its
position in the genealogy and never on the order in which cells are
processed.  Draw number ``j`` of a key is ``mix(key + (j + 1) * GOLDEN)``,
the SplitMix64 construction, evaluated on whole numpy arrays at once.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_CHILD_SALT = np.uint64(0xD1B54A32D192ED03)
_REPLICATE_SALT = np.uint64(0xAEF17502108EF2D9)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_M3 = np.uint64(0xFF51AFD7ED558CCD)
_M4 = np.uint64(0xC4CEB9FE1A85EC53)
_TWO_POW_53 = float(2**53)


def _as_u64(a):
    return np.asarray(a, dtype=np.uint64)


def mix64(z):
    """SplitMix64 finalizer, applied elementwise."""
    z = _as_u64(z).copy()
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= _M1
        z ^= z >> np.uint64(27)
        z *= _M2
        z ^= z >> np.uint64(31)
    return z


def _fmix64(z):
    # murmur3 finalizer; keeps key derivation separate from draw generation
    z = _as_u64(z).copy()
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(33)
        z *= _M3
        z ^= z >> np.uint64(33)
        z *= _M4
        z ^= z >> np.uint64(33)
    return z


def root_keys(seed, replicates):
    """Keys of the initial cell of each replicate."""
    seed_key = mix64(_as_u64(int(seed) & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
    reps = _as_u64(np.atleast_1d(replicates))
    with np.errstate(over="ignore"):
        return _fmix64(seed_key ^ mix64(reps * _REPLICATE_SALT + _GOLDEN))


def child_keys(parent_keys, slot):
    """Key of child ``slot`` (1 or 2) for each parent key."""
    salt = mix64(_as_u64(slot) * _CHILD_SALT)
    with np.errstate(over="ignore"):
        return _fmix64(_as_u64(parent_keys) ^ salt) + _as_u64(slot)


def uniforms(keys, start, count):
    """Draws ``start .. start+count-1`` of each key, shape (len(keys), count).

    Values lie in the open interval (0, 1).
    """
    keys = _as_u64(keys).reshape(-1, 1)
    counters = _as_u64(np.arange(start + 1, start + count + 1, dtype=np.uint64)).reshape(1, -1)
    with np.errstate(over="ignore"):
        bits = mix64(keys + counters * _GOLDEN)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) / _TWO_POW_53


def generator(seed, *words):
    """A numpy Generator for scalar code paths, keyed by ``seed`` and ``words``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(w) for w in words]]))
