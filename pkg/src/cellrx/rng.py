"""Deterministic random streams.

All randomness in the harness flows through Philox, a counter-based 64-bit
generator whose output is identical across platforms for a given key. Derived
streams (per fold, per epoch, per draw) come from SeedSequence over an integer
tuple so they never depend on call order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["make_rng", "derive_seed"]


def make_rng(*key: int) -> np.random.Generator:
    """Philox generator keyed by one or more integers."""
    seed = key[0] if len(key) == 1 else derive_seed(*key)
    return np.random.Generator(np.random.Philox(key=seed))


def derive_seed(*parts: int) -> int:
    """Stable 128-bit child seed for a tuple of integer coordinates."""
    state = np.random.SeedSequence(list(parts)).generate_state(4, np.uint32)
    return int.from_bytes(state.tobytes(), "little")
