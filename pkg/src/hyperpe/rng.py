"""Counter-based Gaussian noise keyed by (seed, replica, step, mode).

Every standard normal used anywhere in the package is a pure function of a
64-bit seed and a 128-bit counter, evaluated with Philox4x32-10.  There is no
generator state to thread through the code: two simulations at different
cutoffs that use the same seed draw bit-identical noise on their common
modes, and replicas can be evaluated in any order or in any chunking.
"""

import numpy as np
from scipy.special import ndtri

__all__ = [
    "philox4x32",
    "derive_seed",
    "mode_normals",
    "STREAM_INIT",
    "STREAM_STEP",
    "STREAM_HALF",
]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

STREAM_INIT = 0
STREAM_STEP = 1
STREAM_HALF = 2
_STREAM_SEED = 0xFFFFFFFF


def philox4x32(counter, key, rounds=10):
    """Philox4x32 block function (Salmon et al., Random123).

    Parameters
    ----------
    counter : sequence of four uint32 array-likes
        Counter words, broadcast against each other and against the key.
    key : sequence of two uint32 array-likes
    rounds : int

    Returns
    -------
    tuple of four ``uint64`` arrays holding 32-bit output words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & _MASK for k in key)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _S32) ^ c1 ^ k0,
            p1 & _MASK,
            (p0 >> _S32) ^ c3 ^ k1,
            p0 & _MASK,
        )
    return c0, c1, c2, c3


def _split_seed(seed):
    seed = np.asarray(seed, dtype=np.uint64)
    return seed & _MASK, seed >> _S32


def derive_seed(master_seed, replica):
    """64-bit per-replica seed derived from a master seed."""
    lo, hi = _split_seed(master_seed)
    x0, x1, _, _ = philox4x32((replica, 0, 0, _STREAM_SEED), (lo, hi))
    out = (x1 << _S32) | x0
    return int(out) if out.ndim == 0 else out


def _uniform53(a, b):
    # genrand_res53 layout, shifted by half an ulp so 0 is never produced
    hi = (a >> np.uint64(5)).astype(np.float64)
    lo = (b >> np.uint64(6)).astype(np.float64)
    return (hi * 67108864.0 + lo + 0.5) * (1.0 / 9007199254740992.0)


def mode_normals(seeds, k1, k2, step, stream):
    """Standard normals for modes ``(k1, k2)`` of each replica seed.

    Parameters
    ----------
    seeds : array of uint64, shape (R,)
    k1, k2 : int arrays of equal shape (the mode list)
    step : int
    stream : int

    Returns
    -------
    ndarray, shape (R, len(k1))
        Entry ``[r, j]`` depends only on ``(seeds[r], k1[j], k2[j], step,
        stream)``.
    """
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    k1 = np.asarray(k1, dtype=np.uint64).ravel()
    k2 = np.asarray(k2, dtype=np.uint64).ravel()
    # two normals per Philox block: odd/even k2 share a counter
    word0 = (k1 << np.uint64(16)) | ((k2 - np.uint64(1)) >> np.uint64(1))
    second = ((k2 - np.uint64(1)) & np.uint64(1)).astype(bool)
    lo, hi = _split_seed(seeds[:, None])
    x0, x1, x2, x3 = philox4x32(
        (word0[None, :], 0, np.uint64(step), np.uint64(stream)), (lo, hi)
    )
    u = np.where(second, _uniform53(x2, x3), _uniform53(x0, x1))
    return ndtri(u)
