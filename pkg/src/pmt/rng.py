"""Counter-based random streams keyed by integer tuples.

Every random draw in the package comes from ``stream(domain, *keys)``: a
Philox generator whose 128-bit key is derived from the key tuple, so a draw
depends only on its keys and never on call order.
"""

import numpy as np


def stream(*keys: int) -> np.random.Generator:
    key = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# domain tags, so different subsystems never share a stream
INIT_WEIGHTS = 11
SHUFFLE = 12
IDENTITY = 21
RENDER = 22
PAIRS = 23
AUGMENT = 24
PMT_INIT = 31
PMT_STEP = 32
ATTACK = 41
NOISE_BASELINE = 42
UP_NOISE = 51
DATASET = 61
EXPERIMENT = 71


def derive_seed(*keys: int) -> int:
    """A 31-bit integer seed that depends only on the key tuple."""
    return int(np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]).generate_state(1)[0] >> 1)
