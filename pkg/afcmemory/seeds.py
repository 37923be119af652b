import hashlib
import logging

import numpy as np

logger = logging.getLogger(__name__)


def derive_seed(base_seed: int, *labels) -> int:
    """
    Derive a 32-bit child seed from a base seed and a sequence of labels.

    The same (base_seed, labels) always yields the same child seed, and
    distinct labels give statistically independent streams.

    Args:
        base_seed: Run-level seed
        *labels: Scenario, arm, setting or batch identifiers

    Returns:
        Unsigned 32-bit integer seed
    """
    key = "|".join([str(int(base_seed))] + [str(label) for label in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def make_rng(seed: int, *labels) -> np.random.Generator:
    """Return a numpy Generator for a (possibly derived) seed."""
    if labels:
        seed = derive_seed(seed, *labels)
    return np.random.default_rng(seed)
