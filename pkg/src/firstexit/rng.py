"""
Counter-based random streams.

Every variate is a pure function of ``(seed, stream, scenario, index)``: the
first three are hashed into a 64-bit substream key and the index is run
through the SplitMix64 output function.  Results are therefore identical
whatever order or thread scenarios are processed in, and distinct streams
(e.g. the Gaussian drivers and the root selector) are independent.
"""
import math

import numpy as np

from ._backend import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# stream identifiers
NORMALS = 1
SELECTOR = 2
EULER = 3
PERMUTATION = 4

_U_GOLDEN = np.uint64(GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def _mix_int(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def stream_base(seed, stream):
    """64-bit base key for one named stream of a seed."""
    return _mix_int(_mix_int(int(seed) ^ GOLDEN) + int(stream) * GOLDEN)


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _U_M1
    z = (z ^ (z >> _S27)) * _U_M2
    return z ^ (z >> _S31)


@njit(cache=True)
def substream_key(base, scenario):
    return mix64(np.uint64(base) + np.uint64(scenario) * _U_GOLDEN)


@njit(cache=True)
def uniform_at(key, index):
    """Uniform on the open interval (0, 1)."""
    bits = mix64(np.uint64(key) + np.uint64(index + 1) * _U_GOLDEN)
    return (float(bits >> _S11) + 0.5) * _INV53


@njit(cache=True)
def normal_pair_at(key, pair):
    """Two independent standard normals (Box-Muller) from uniforms 2*pair, 2*pair+1."""
    u1 = uniform_at(key, 2 * pair)
    u2 = uniform_at(key, 2 * pair + 1)
    r = math.sqrt(-2.0 * math.log(u1))
    ang = 2.0 * math.pi * u2
    return r * math.cos(ang), r * math.sin(ang)


def _mix_np(z):
    z = (z ^ (z >> _S30)) * _U_M1
    z = (z ^ (z >> _S27)) * _U_M2
    return z ^ (z >> _S31)


class RandomStreams:
    """Seeded family of independent, order-free random substreams.

    ``uniforms(stream, scenarios, k)`` returns a ``(len(scenarios), k)`` array
    whose row ``i`` depends only on the seed, the stream id and
    ``scenarios[i]``.
    """

    def __init__(self, seed):
        self.seed = int(seed) & MASK64

    def __repr__(self):
        return f"RandomStreams(seed={self.seed})"

    def base(self, stream):
        return np.uint64(stream_base(self.seed, stream))

    def keys(self, stream, scenarios):
        sc = np.asarray(scenarios, dtype=np.uint64)
        with np.errstate(over="ignore"):
            return _mix_np(self.base(stream) + sc * _U_GOLDEN)

    def _bits(self, stream, scenarios, columns):
        keys = self.keys(stream, scenarios)[:, None]
        idx = np.asarray(columns, dtype=np.uint64)[None, :] + np.uint64(1)
        with np.errstate(over="ignore"):
            return _mix_np(keys + idx * _U_GOLDEN)

    def uniforms(self, stream, scenarios, k, offset=0):
        bits = self._bits(stream, scenarios, np.arange(offset, offset + k))
        return ((bits >> _S11).astype(np.float64) + 0.5) * _INV53

    def normals(self, stream, scenarios, k, offset_pairs=0):
        """Standard normals; column j uses Box-Muller pair ``offset_pairs + j // 2``."""
        npairs = (k + 1) // 2
        u = self.uniforms(stream, scenarios, 2 * npairs, offset=2 * offset_pairs)
        r = np.sqrt(-2.0 * np.log(u[:, 0::2]))
        ang = 2.0 * np.pi * u[:, 1::2]
        z = np.empty((u.shape[0], 2 * npairs))
        z[:, 0::2] = r * np.cos(ang)
        z[:, 1::2] = r * np.sin(ang)
        return z[:, :k]

    def generator(self, stream, index=0):
        """A numpy Generator seeded from one substream, for non-hot code paths."""
        key = int(self.keys(stream, [index])[0])
        return np.random.default_rng([key & 0xFFFFFFFF, key >> 32])
