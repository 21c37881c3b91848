"""Deterministic random-stream splitting.

Every random draw in the package comes from ``stream(seed, *keys)``, a
``numpy.random.Generator`` seeded by ``SeedSequence(seed, spawn_key=keys)``.
Keys are small non-negative integers; the first one names the consumer (see
the constants below) and the rest index within it, e.g. domain and person
ids.  Streams with different key tuples are statistically independent, so the
order in which they are consumed (or parallelism) cannot change results.
"""

import numpy as np

# First-level stream keys.
FEATURE_MAP = 1
DOMAIN_SPEC = 2
DOMAIN_SAMPLES = 3
ANALYSIS = 4
TRAIN_INIT = 5
TRAIN_SHUFFLE = 6
RESAMPLE = 7
PIPELINE = 8
SPLIT = 9


def stream(seed: int, *keys: int) -> np.random.Generator:
    if seed is None:
        raise ValueError("a seed is required")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def child_seed(seed: int, *keys: int) -> int:
    """Derive a 63-bit integer seed for a sub-component."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    hi, lo = (int(x) for x in ss.generate_state(2))
    return (hi << 31) ^ lo
