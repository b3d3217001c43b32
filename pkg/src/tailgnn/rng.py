"""Deterministic integer PRNG: xoshiro256++ seeded via splitmix64.

Used for synthetic-dataset generation, where bit-identical output across
platforms and Python/numpy versions is required. All state is pure-Python
64-bit integer arithmetic.
"""

MASK64 = (1 << 64) - 1


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256pp:
    """xoshiro256++ generator with a splitmix64-expanded seed."""

    def __init__(self, seed):
        s = seed & MASK64
        state = []
        for _ in range(4):
            s, v = _splitmix64(s)
            state.append(v)
        self._s = state

    def next_u64(self):
        s = self._s
        result = (_rotl((s[0] + s[3]) & MASK64, 23) + s[0]) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self):
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randint(self, n):
        """Uniform integer in [0, n). Rejection sampling, unbiased."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        limit = MASK64 - (MASK64 % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def geometric(self, p=0.5):
        """Number of trials until first success, support {1, 2, ...}."""
        k = 1
        while self.uniform() >= p:
            k += 1
        return k

    def sample(self, n, k):
        """k distinct integers from [0, n), in selection order."""
        if k > n:
            raise ValueError("sample size exceeds population")
        pool = list(range(n))
        out = []
        for i in range(k):
            j = i + self.randint(n - i)
            pool[i], pool[j] = pool[j], pool[i]
            out.append(pool[i])
        return out

    def shuffle(self, items):
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]
