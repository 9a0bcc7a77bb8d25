"""Deterministic pseudo-random numbers for every stochastic step in the package.

The generator is SplitMix64 run in counter mode: draw ``i`` of a stream seeded
with ``s`` is ``mix64(s + i * GAMMA)`` where ``mix64`` is the standard
xorshift-multiply finalizer (constants from Vigna's reference code).  Counter
mode means a block of n draws is computable with vectorized uint64 numpy ops
and is bit-identical to n scalar draws, so dataset synthesis, weight init and
shuffling reproduce exactly for a given seed no matter how they are chunked.

Streams can be forked with :meth:`Rng.spawn`, which derives an independent
seed from the parent seed and a string key.  Sample k of a dataset always
sees the same substream regardless of generation order.
"""

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = 0xFFFFFFFFFFFFFFFF
_INV_2_53 = 1.0 / float(1 << 53)


def _mix64(z):
    """Finalizer of SplitMix64; accepts uint64 scalars or arrays."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class Rng:
    """Seeded stream of uniform/normal draws backed by SplitMix64 counters."""

    def __init__(self, seed):
        self._seed = np.uint64(int(seed) & _MASK)
        self._counter = 0

    def _raw(self, n):
        idx = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix64(self._seed + idx * _GAMMA)

    def next_u64(self):
        return int(self._raw(1)[0])

    def fill_uniform(self, shape):
        """Array of doubles in [0, 1), shaped per `shape`."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        bits = self._raw(n) >> np.uint64(11)
        return (bits.astype(np.float64) * _INV_2_53).reshape(shape)

    def uniform(self, lo=0.0, hi=1.0, shape=None):
        if shape is None:
            return lo + (hi - lo) * float(self.fill_uniform(1)[0])
        return lo + (hi - lo) * self.fill_uniform(shape)

    def normal(self, shape=None, mu=0.0, sigma=1.0):
        """Box-Muller transform on counter pairs."""
        scalar = shape is None
        shape = (1,) if scalar else ((shape,) if isinstance(shape, int) else tuple(shape))
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u1 = np.maximum(self.fill_uniform(m), 1e-300)
        u2 = self.fill_uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        t = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(t), r * np.sin(t)])[:n]
        out = mu + sigma * z.reshape(shape)
        return float(out[0]) if scalar else out

    def randint(self, n):
        """Integer in [0, n)."""
        return min(int(self.fill_uniform(1)[0] * n), n - 1)

    def choice(self, seq, weights=None):
        if weights is None:
            return seq[self.randint(len(seq))]
        w = np.asarray(weights, dtype=np.float64)
        cdf = np.cumsum(w / w.sum())
        u = float(self.fill_uniform(1)[0])
        return seq[min(int(np.searchsorted(cdf, u, side="right")), len(seq) - 1)]

    def shuffle(self, items):
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def spawn(self, key):
        """Independent child stream derived from this seed and a string key."""
        h = np.uint64(1469598103934665603)
        with np.errstate(over="ignore"):
            for ch in str(key).encode("utf-8"):
                h = (h ^ np.uint64(ch)) * np.uint64(1099511628211)
            child = Rng(int(_mix64(self._seed ^ h)))
        return child
