"""Counter-based 64-bit random numbers.

Every draw is a pure function of ``(seed, stream, counter)``: the stream key
and seed are hashed into a 64-bit key, and the ``i``-th output is the
SplitMix64 finaliser applied to ``key + (i + 1) * GOLDEN``.  Because nothing
is carried between calls, the same request always returns the same numbers
and independent streams can be drawn in any order or in parallel.

Uniforms use the top 53 bits; normals use the Box-Muller transform on
consecutive pairs; Poisson variates use inversion for small means and the
PTRS transformed-rejection method otherwise.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix_int(z: int) -> int:
    z = (z + GOLDEN) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def _finalise(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def stream_id(*parts) -> int:
    """64-bit identifier of a stream named by strings and integers."""
    h = 0
    for part in parts:
        data = str(part).encode("utf-8")
        h = _mix_int(h ^ ((zlib.crc32(data) << 32) | (len(data) & 0xFFFFFFFF)))
    return h


class CounterRNG:
    """Stateless generator; ``stream`` arguments are tuples of names or numbers."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK

    def key(self, stream) -> int:
        parts = stream if isinstance(stream, tuple) else (stream,)
        return _mix_int(self.seed ^ stream_id(*parts))

    def bits(self, stream, n: int, offset: int = 0) -> np.ndarray:
        key = np.uint64(self.key(stream))
        i = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            return _finalise(key + i * np.uint64(GOLDEN))

    def uniform(self, stream, n: int, offset: int = 0) -> np.ndarray:
        """Uniform draws on ``(0, 1]``."""
        b = self.bits(stream, n, offset) >> np.uint64(11)
        return (b.astype(np.float64) + 1.0) * 2.0**-53

    def normal(self, stream, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u = self.uniform(stream, 2 * m)
        r = np.sqrt(-2.0 * np.log(u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def poisson(self, stream, lam) -> np.ndarray:
        """One Poisson variate per entry of ``lam``, each from its own sub-stream."""
        lam = np.asarray(lam, dtype=float)
        flat = lam.ravel()
        out = np.empty(flat.shape, dtype=np.float64)
        base = stream if isinstance(stream, tuple) else (stream,)
        for i, mu in enumerate(flat):
            out[i] = _poisson_one(self, base + (i,), float(mu))
        return out.reshape(lam.shape)


def _poisson_one(rng: CounterRNG, stream, mu: float) -> float:
    if mu <= 0.0:
        return 0.0
    chunk = 64
    offset = 0
    if mu < 30.0:
        u = rng.uniform(stream, 1)[0]
        k, p = 0, math.exp(-mu)
        c = p
        while u > c and k < 1000:
            k += 1
            p *= mu / k
            c += p
        return float(k)
    # PTRS (Hormann 1993)
    slam = math.sqrt(mu)
    loglam = math.log(mu)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2)
    while True:
        u_all = rng.uniform(stream, chunk, offset) - 0.5
        v_all = rng.uniform(stream, chunk, offset + chunk)
        offset += 2 * chunk
        for U, V in zip(u_all, v_all):
            us = 0.5 - abs(U)
            k = math.floor((2 * a / us + b) * U + mu + 0.43)
            if us >= 0.07 and V <= vr:
                return float(k)
            if k < 0 or (us < 0.013 and V > us):
                continue
            if (math.log(V) + math.log(inv_alpha) - math.log(a / (us * us) + b)
                    <= -mu + k * loglam - math.lgamma(k + 1)):
                return float(k)
