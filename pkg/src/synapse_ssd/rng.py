"""Counter-based random numbers shared by the numba and numpy PBS kernels.

Every draw is a pure function of ``(key, counter)``: the SplitMix64 output
function applied to ``key + counter * golden_gamma``. Draws need no sequential
state, so both kernels consume the same stream whatever order they visit
particles in, and runs with different keys are independent streams.
"""

import numpy as np

from ._backend import njit

GAMMA = np.uint64(0x9E3779B97F4A7C15)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit
def mix64(z):
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@njit
def uniform(key, counter):
    """Uniform double in the open interval (0, 1)."""
    z = mix64(key + counter * GAMMA)
    return (np.float64(z >> S11) + 0.5) * INV53


def uniform_array(key, counters):
    """Vectorised :func:`uniform` over a uint64 counter array."""
    with np.errstate(over="ignore"):
        z = np.uint64(key) + np.asarray(counters, dtype=np.uint64) * GAMMA
        z = (z ^ (z >> S30)) * M1
        z = (z ^ (z >> S27)) * M2
        z = z ^ (z >> S31)
    return ((z >> S11).astype(np.float64) + 0.5) * INV53


_MASK = 2**64 - 1


def _mix_int(z):
    z &= _MASK
    z = ((z ^ (z >> 30)) * int(M1)) & _MASK
    z = ((z ^ (z >> 27)) * int(M2)) & _MASK
    return z ^ (z >> 31)


def derive_key(seed, run_index=0):
    """Stream key for one PBS repetition of a seeded experiment."""
    s = _mix_int(int(seed) + int(GAMMA))
    return _mix_int(s ^ _mix_int(int(run_index) * int(M2) + int(GAMMA)))
