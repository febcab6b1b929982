import numpy as np


def make_rng(seed):
    """Counter-based generator so every run is reproducible from its seed."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def child_rng(rng):
    """Independent stream derived deterministically from ``rng``."""
    return np.random.Generator(np.random.Philox(rng.integers(0, 2**63 - 1)))
