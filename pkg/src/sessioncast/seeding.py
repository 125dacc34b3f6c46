"""Deterministic seed derivation from a master seed and string keys."""

import hashlib
import os

SEED_ENV = "SESSIONCAST_SEED"


def derive_seed(*keys) -> int:
    """Stable 63-bit seed from arbitrary keys (independent of PYTHONHASHSEED)."""
    h = hashlib.blake2b("\x1f".join(str(k) for k in keys).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def env_seed(default: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return default
    return int(raw)
