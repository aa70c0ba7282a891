"""splitmix64-seeded xoshiro256** generator.

The algorithm is pinned so that datasets generated from a seed are
bit-identical across implementations. Everything is done on Python ints
masked to 64 bits.
"""
import math

_MASK = (1 << 64) - 1


def splitmix64(state):
    """Advance a splitmix64 state. Returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def derive_seed(master, index):
    """Child seed for cell ``index`` of a run seeded with ``master``."""
    return splitmix64((master ^ index) & _MASK)[1]


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """xoshiro256** with a 256-bit state filled from splitmix64(seed)."""

    def __init__(self, seed):
        sm = int(seed) & _MASK
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.state = s

    def next_u64(self):
        s0, s1, s2, s3 = self.state
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.state = [s0, s1, s2, s3]
        return result

    def uniform(self):
        """Double in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, bound):
        """Unbiased integer in [0, bound) (Lemire's multiply-shift with rejection)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        threshold = ((1 << 64) - bound) % bound
        while True:
            m = self.next_u64() * bound
            if (m & _MASK) >= threshold:
                return m >> 64

    def normal(self):
        """Standard normal via Box-Muller; consumes two uniforms per call."""
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle of a list."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items
