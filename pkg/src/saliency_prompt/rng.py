"""Portable splitmix64 generator.

The state is a single unsigned 64-bit integer. Each draw does::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

with all arithmetic mod 2**64. Derived draws:

* ``uniform()``   -> ``(next_u64() >> 11) * 2**-53``, in [0, 1)
* ``below(n)``    -> ``floor(uniform() * n)``, in [0, n)

Anything that needs a golden file (random proposals, random prompt
assignment) uses this generator so the numbers can be reproduced in any
language.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        if n < 1:
            raise ValueError("n must be positive")
        return min(int(self.uniform() * n), n - 1)
