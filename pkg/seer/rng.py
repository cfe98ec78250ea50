"""Named random sub-streams derived from one root seed.

Components draw from their own stream (``workload``, ``fleet``, ``revenue``,
``clustering``, ``training``, ``qos``) so one can be re-seeded or replayed
without disturbing the others. Extra integer keys (a cycle index, say) select
an independent child stream, which is what lets the simulator regenerate any
single cycle of the workload on demand.
"""

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "little")


def seed_sequence(seed: int, name: str, *keys: int) -> np.random.SeedSequence:
    """Return the ``SeedSequence`` for ``(seed, name, *keys)``."""
    return np.random.SeedSequence([int(seed), _name_key(name), *(int(k) for k in keys)])


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """A fresh generator for the named stream."""
    return np.random.default_rng(seed_sequence(seed, name, *keys))


def substream_seed(seed: int, name: str, *keys: int) -> int:
    """A 32-bit integer seed for libraries that take ``random_state`` ints."""
    return int(seed_sequence(seed, name, *keys).generate_state(1)[0])
