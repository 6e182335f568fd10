"""Counter-based deterministic random streams.

Every random draw in the package comes from a SplitMix64 bijection applied
to an explicit (key, counter) pair, so the full stream is determined by the
seed alone and identical streams can be reproduced in any language from the
constants below.  Gaussian variates use the Box-Muller transform on two
consecutive counter slots.

Constants (Steele, Lea & Flood's SplitMix64):
    GOLDEN = 0x9E3779B97F4A7C15
    MIX1   = 0xBF58476D1CE4E5B9
    MIX2   = 0x94D049BB133111EB
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)

_U64_SHIFT_30 = np.uint64(30)
_U64_SHIFT_27 = np.uint64(27)
_U64_SHIFT_31 = np.uint64(31)
_U64_SHIFT_11 = np.uint64(11)
_INV_2_53 = float(2.0**-53)


def mix64(z):
    """SplitMix64 finalizer: a bijective scramble of a 64-bit word."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64_SHIFT_30)) * MIX1
        z = (z ^ (z >> _U64_SHIFT_27)) * MIX2
    return z ^ (z >> _U64_SHIFT_31)


def derive_key(seed, stream=0):
    """Key for an independent stream; distinct (seed, stream) pairs decorrelate."""
    s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        base = s + GOLDEN * np.uint64((stream + 1) & 0xFFFFFFFFFFFFFFFF)
    return np.uint64(mix64(base))


def raw64(key, start, count):
    """Words ``count`` long at counters [start, start+count) of stream ``key``."""
    idx = np.arange(start, start + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        arg = np.uint64(key) + GOLDEN * (idx + np.uint64(1))
    return mix64(arg)


def uniforms(key, start, count):
    """Doubles in (0, 1], one per raw counter slot [start, start+count)."""
    bits = raw64(key, start, count)
    return ((bits >> _U64_SHIFT_11).astype(np.float64) + 1.0) * _INV_2_53


def normals(key, start, count):
    """Standard normals consuming raw counters [start, start+2*count)."""
    u = uniforms(key, start, 2 * count)
    u1 = u[0::2]
    u2 = u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


class CounterRng:
    """Sequential view over a counter stream.

    Tracks the raw counter position, so interleaved draws of any kind
    never reuse a slot.
    """

    def __init__(self, seed, stream=0):
        self.key = derive_key(seed, stream)
        self._pos = 0

    def normals(self, count):
        out = normals(self.key, self._pos, count)
        self._pos += 2 * count
        return out

    def uniform_signed(self, count, scale=1.0):
        """Uniform draws in (-scale, scale]."""
        out = uniforms(self.key, self._pos, count)
        self._pos += count
        return (2.0 * out - 1.0) * scale
