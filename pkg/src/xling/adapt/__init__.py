import hashlib
import json
from typing import Any

import numpy as np

from ._version import version as __version__  # noqa: F401


def derive_seed(*keys: Any) -> int:
    """
    Derive a 64 bit seed from a sequence of keys (global seed, utterance id,
    copy index etc.). The result depends only on the keys, never on call
    order, so per-utterance work can run in any schedule.

    Args:
        *keys (Any): Keys to hash. Their repr is used.

    Returns:
        int: Seed
    """
    digest = hashlib.sha256(
        "\x1f".join(repr(key) for key in keys).encode("utf-8")
    ).digest()
    return int.from_bytes(digest[:8], "little")


def get_rng(*keys: Any) -> np.random.Generator:
    """
    Get a numpy random generator seeded from keys

    Args:
        *keys (Any): Keys to hash

    Returns:
        np.random.Generator: Random generator
    """
    return np.random.default_rng(derive_seed(*keys))


def config_hash(obj: Any, length: int = 16) -> str:
    """
    Content hash of a JSON serialisable object

    Args:
        obj (Any): Object to hash
        length (int): Number of hex characters to keep. Defaults to 16.

    Returns:
        str: Hex digest prefix
    """
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:length]
