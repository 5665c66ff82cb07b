"""Seed policy: one run seed, fixed per-purpose substreams.

Every random draw in a run comes from a PCG64 generator keyed by
``SeedSequence([seed, STREAM_IDS[name]])``.  The stream ids are part of the
package contract so that seeds stay portable: two runs (or two
implementations) that agree on the seed and on which stream each purpose
uses will see identical variates.
"""

from __future__ import annotations

import numpy as np

STREAM_IDS = {
    "config": 0,  # architecture sampling (uniform configs, tree paths, BSE draws)
    "model": 1,   # mixture model choice given a config
    "noise": 2,   # surrogate evaluation noise
    "split": 3,   # train/validation split shuffle
    "init": 4,    # weight initialization
    "data": 5,    # synthetic dataset generation
    "batch": 6,   # minibatch selection
}


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for one purpose within one seeded run."""
    try:
        stream_id = STREAM_IDS[name]
    except KeyError:
        raise ValueError(f"unknown rng stream {name!r}; known: {sorted(STREAM_IDS)}") from None
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream_id])))
