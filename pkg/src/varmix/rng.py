"""Seeding scheme.

Every stream is a Philox (counter-based) generator keyed by a numpy
SeedSequence built from ``(base_seed, index, *tags)``.  Streams for different
indices or tags are statistically independent, and a stream depends only on
its key, never on how work is scheduled.
"""
import numpy as np


def stream(base_seed, index=0, *tags):
    seq = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(index), *map(int, tags)))
    return np.random.Generator(np.random.Philox(seq))


# tags used to separate the environment-construction stream from the run stream
ENV_TAG = 1
RUN_TAG = 2
