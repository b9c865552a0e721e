"""Reproducible random streams for fixture generation.

All randomness in the package flows through :class:`Stream`, a thin wrapper
over the Philox4x64-10 counter-based generator (Salmon et al., Random123).
The generator is keyed by ``(seed, stream_id)`` with the counter starting at
zero, and raw 64-bit words are converted to variates with explicit formulas
so the same sequence can be regenerated anywhere Philox4x64-10 exists:

* uniform in [0, 1):   ``(word >> 11) * 2**-53``
* exponential(rate):   ``-log(1 - u) / rate``            (inverse CDF)
* standard normal:     Box-Muller on consecutive uniform pairs ``(u1, u2)``,
                       ``r = sqrt(-2 log(1 - u1))``, emitting ``r cos(2 pi u2)``
                       then ``r sin(2 pi u2)``.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_TWO_NEG_53 = 2.0 ** -53


class Stream:
    """A keyed Philox4x64-10 stream.

    Distinct ``stream_id`` values give statistically independent sequences for
    the same seed, which keeps unrelated draws (covariates, event times,
    censoring) from shifting when one of them changes length.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        seed = int(seed)
        if seed < 0 or seed > _MASK64:
            raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.stream_id = int(stream_id) & _MASK64
        self._bitgen = np.random.Philox(key=seed | (self.stream_id << 64))

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(int(n))

    def uniform(self, n: int) -> np.ndarray:
        words = self.raw(n)
        return (words >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53

    def exponential(self, n: int, rate=1.0) -> np.ndarray:
        u = self.uniform(n)
        return -np.log1p(-u) / rate

    def normal(self, n: int) -> np.ndarray:
        n = int(n)
        m = (n + 1) // 2
        u = self.uniform(2 * m).reshape(m, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.column_stack([r * np.cos(theta), r * np.sin(theta)]).ravel()
        return z[:n]

    def bernoulli(self, n: int, p) -> np.ndarray:
        return self.uniform(n) < p

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of ``range(n)`` via a stable argsort of uniforms."""
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, n: int, probs) -> np.ndarray:
        """Categorical draws (indices into ``probs``) by inverse CDF."""
        cdf = np.cumsum(np.asarray(probs, dtype=np.float64))
        cdf /= cdf[-1]
        idx = np.searchsorted(cdf, self.uniform(n), side="right")
        return np.minimum(idx, len(cdf) - 1)
