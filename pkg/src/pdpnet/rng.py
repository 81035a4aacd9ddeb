"""Counter-based random streams (Philox4x64-10).

Uniform number ``k`` of stream ``s`` under seed ``seed`` is word ``k % 4`` of
the Philox block with key ``(seed, s)`` and counter ``(k // 4, 0, 0, 0)``.
Streams for different ``s`` are independent by construction, which is what
lets trajectory ``i`` of an ensemble be reproduced alone, in any order, on any
worker and by either kernel backend.

The block function matches ``numpy.random.Philox`` bit for bit.
"""
import numpy as np

from ._backend import njit

_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S12 = np.uint64(12)
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_ZERO = np.uint64(0)
_ONE = np.uint64(1)
_FOUR = np.uint64(4)
_TWO_M52 = 2.0**-52  # 52 bits plus a half keeps both ends strictly inside (0, 1)

MASK64 = (1 << 64) - 1


def seed_key(seed) -> np.uint64:
    """Map a Python integer seed onto the 64-bit Philox key word."""
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {seed!r}")
    return np.uint64(int(seed) & MASK64)


def derive_seed(master_seed, *tags) -> int:
    """Deterministic child seed for a named sub-run (e.g. one scale of a study)."""
    words = [int(master_seed) & MASK64] + [int(t) & MASK64 for t in tags]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])


# --- numpy path (vectorized over arrays of streams/indices) -------------------

def _mulhilo(a, b):
    a_lo = a & _MASK32
    a_hi = a >> _S32
    b_lo = b & _MASK32
    b_hi = b >> _S32
    lo_lo = a_lo * b_lo
    hi_lo = a_hi * b_lo
    lo_hi = a_lo * b_hi
    cross = (lo_lo >> _S32) + (hi_lo & _MASK32) + lo_hi
    hi = a_hi * b_hi + (hi_lo >> _S32) + (cross >> _S32)
    return hi, a * b


def philox_block(block, key0, key1):
    """Philox4x64-10 of counter ``(block, 0, 0, 0)``; broadcasts over arrays."""
    with np.errstate(over="ignore"):
        x0 = np.asarray(block, dtype=np.uint64)
        k0 = np.asarray(key0, dtype=np.uint64)
        k1 = np.asarray(key1, dtype=np.uint64)
        x0, k0, k1 = np.broadcast_arrays(x0, k0, k1)
        x1 = np.zeros_like(x0)
        x2 = np.zeros_like(x0)
        x3 = np.zeros_like(x0)
        for rnd in range(10):
            if rnd:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, x0)
            hi1, lo1 = _mulhilo(_M1, x2)
            x0, x1, x2, x3 = hi1 ^ x1 ^ k0, lo1, hi0 ^ x3 ^ k1, lo0
    return np.stack([x0, x1, x2, x3], axis=-1)


def to_unit(words):
    """Map uint64 words to doubles strictly inside (0, 1)."""
    return ((np.asarray(words, dtype=np.uint64) >> _S12).astype(np.float64) + 0.5) * _TWO_M52


def uniforms(seed, streams, index):
    """Uniform ``index`` of each stream in ``streams`` (broadcasting)."""
    index = np.asarray(index, dtype=np.uint64)
    block = index // _FOUR
    word = (index % _FOUR).astype(np.intp)
    words = philox_block(block, seed_key(seed), np.asarray(streams, dtype=np.uint64))
    picked = np.take_along_axis(words, word[..., None], axis=-1)[..., 0]
    return to_unit(picked)


class Stream:
    """Sequential reader over one stream; used by the pure-Python loops."""

    def __init__(self, seed, stream: int, start: int = 0):
        self.seed = seed
        self.stream = int(stream)
        self.index = int(start)
        self._block = -1
        self._words = None

    def uniform(self) -> float:
        b, w = divmod(self.index, 4)
        if b != self._block:
            self._words = to_unit(philox_block(b, seed_key(self.seed), self.stream))
            self._block = b
        self.index += 1
        return float(self._words[w])


# --- numba path: state vector [key0, key1, next_block, pos, w0, w1, w2, w3] ---

@njit
def _mulhilo_nb(a, b):
    a_lo = a & _MASK32
    a_hi = a >> _S32
    b_lo = b & _MASK32
    b_hi = b >> _S32
    lo_lo = a_lo * b_lo
    hi_lo = a_hi * b_lo
    lo_hi = a_lo * b_hi
    cross = (lo_lo >> _S32) + (hi_lo & _MASK32) + lo_hi
    hi = a_hi * b_hi + (hi_lo >> _S32) + (cross >> _S32)
    return hi, a * b


@njit
def new_state_nb(key0, key1):
    st = np.zeros(8, dtype=np.uint64)
    st[0] = key0
    st[1] = key1
    st[3] = _FOUR
    return st


@njit
def next_uniform_nb(st):
    if st[3] >= _FOUR:
        x0 = st[2]
        x1 = _ZERO
        x2 = _ZERO
        x3 = _ZERO
        k0 = st[0]
        k1 = st[1]
        for rnd in range(10):
            if rnd > 0:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo_nb(_M0, x0)
            hi1, lo1 = _mulhilo_nb(_M1, x2)
            x0, x1, x2, x3 = hi1 ^ x1 ^ k0, lo1, hi0 ^ x3 ^ k1, lo0
        st[4] = x0
        st[5] = x1
        st[6] = x2
        st[7] = x3
        st[2] = st[2] + _ONE
        st[3] = _ZERO
    w = st[4 + np.int64(st[3])]
    st[3] = st[3] + _ONE
    return (np.float64(w >> _S12) + 0.5) * _TWO_M52
