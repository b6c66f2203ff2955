"""Named random substreams derived from a single root seed.

Every source of randomness in the pipeline draws from a stream obtained by
`substream(seed, "name", ...)`, so individual components can be reproduced
in isolation without replaying the whole pipeline.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_words(names: tuple[str, ...]) -> tuple[int, ...]:
    digest = hashlib.sha256("/".join(names).encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


def substream(seed: int, *names: str) -> np.random.Generator:
    """Deterministic generator for the given root seed and stream name(s).

    Independent of PYTHONHASHSEED and platform; the same (seed, names)
    always yields the same stream.
    """
    if not names:
        return np.random.default_rng(np.random.SeedSequence(seed))
    ss = np.random.SeedSequence(entropy=seed, spawn_key=_key_words(names))
    return np.random.default_rng(ss)
