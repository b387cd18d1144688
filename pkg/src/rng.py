"""
Seed derivation.

A master seed expands into independent per-purpose seeds so that each part of
an experiment (initialization, partitioning, each participant's SGD, the
adversary) can be reproduced on its own. Generators are counter-based
(Philox), keyed on the derived seed plus the call-site counters
(round, epoch, ...), so results never depend on execution order.
"""

import numpy as np

PURPOSES = {
    "init": 0,
    "split": 1,
    "partition": 2,
    "sgd": 3,
    "pretrain": 4,
    "adversary": 5,
    "synthetic": 6,
    "claim": 7,
}


def derive_seed(master: int, purpose: str, *keys: int) -> int:
    """Derive a 63-bit seed from (master, purpose, *keys)."""
    sequence = np.random.SeedSequence(
        entropy=int(master), spawn_key=(PURPOSES[purpose], *(int(k) for k in keys))
    )
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator keyed on (seed, *keys)."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))
