"""Per-replication random streams.

Every (experiment, grid index, replication) triple gets its own
SeedSequence child keyed by spawn_key, so results do not depend on the
order in which worker threads pick up replications.
"""

from __future__ import annotations

import numpy as np

EXPERIMENT_CODES = {
    "rates": 1,
    "pooling": 2,
    "asymmetry": 3,
    "adaptivity": 4,
    "validate": 5,
    "bounds": 6,
    "pack": 7,
}

U64 = (1 << 64) - 1


def _code(experiment) -> int:
    if isinstance(experiment, int):
        return experiment
    return EXPERIMENT_CODES[experiment]


def seed_sequence(master_seed: int, experiment, t: int, r: int) -> np.random.SeedSequence:
    if not 0 <= int(master_seed) <= U64:
        raise ValueError("master seed must be an unsigned 64-bit integer")
    return np.random.SeedSequence(int(master_seed), spawn_key=(_code(experiment), int(t), int(r)))


def stream(master_seed: int, experiment, t: int, r: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, experiment, t, r)))


def stream_id(master_seed: int, experiment, t: int, r: int) -> int:
    """64-bit digest of a stream's seed material."""
    return int(seed_sequence(master_seed, experiment, t, r).generate_state(1, np.uint64)[0])
