"""Counter-based seeded generators.

All randomness in the package flows through :func:`philox`; independent
streams are obtained with :func:`derive_seed` so that concurrent work
(per-sample synthesis, per-image sampling) stays bit-reproducible.
"""

import zlib
from typing import Union

import numpy as np

from utils.validation.validators import validate_seed

Key = Union[int, str]


def philox(seed: int) -> np.random.Generator:
    """Generator over the Philox counter-based bit generator."""
    return np.random.Generator(np.random.Philox(validate_seed(seed)))


def _key_word(key: Key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFF


def derive_seed(seed: int, *keys: Key) -> int:
    """Deterministically derive a child 64-bit seed from ``seed`` and ``keys``."""
    seed = validate_seed(seed)
    entropy = [seed & 0xFFFFFFFF, seed >> 32, *(_key_word(k) for k in keys)]
    words = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(words[0]) | (int(words[1]) << 32)
