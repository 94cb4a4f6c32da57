"""Deterministic seed derivation.

Every stochastic component in the toolkit is driven by a 64-bit seed. Child
seeds are derived by hashing, never by drawing from a shared stream, so the
result of any operation depends only on its own seed, not on how many other
operations ran before it or on which worker it ran.
"""

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One output of the SplitMix64 generator for the given state."""
    z = (state + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def mix_seed(master_seed: int, key: int) -> int:
    """Derive an independent 64-bit seed from a master seed and an integer key.

    The same (master_seed, key) pair always yields the same seed; distinct
    keys yield statistically independent seeds.
    """
    return splitmix64(splitmix64(master_seed & _MASK) ^ (key & _MASK))
