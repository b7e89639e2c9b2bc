import numpy as np


def make_rng(seed, *stream):
    """Counter-based generator for the stream identified by ``(seed, *stream)``.

    Streams with different keys are statistically independent, so chains and
    replications can be split across workers without changing results.
    """
    keys = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(keys)))
