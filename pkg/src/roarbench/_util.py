"""Canonical serialization, stable hashing, and RNG derivation.

Everything that feeds a cache key or a determinism check goes through
canonical_json so reruns produce byte-identical artifacts.
"""

import hashlib
import json

import numpy as np


def canonical_json(obj):
    """Serialize with sorted keys and no whitespace; rejects NaN/Inf."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(data):
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def stable_digest(*parts):
    """Hex digest of a tuple of JSON-serializable parts, order-sensitive."""
    return sha256_hex(canonical_json(list(parts)))


def stable_hash(*parts):
    """Deterministic 63-bit integer from JSON-serializable parts."""
    return int(stable_digest(*parts)[:16], 16) & 0x7FFFFFFFFFFFFFFF


def derive_rng(*parts):
    """A numpy Generator seeded from a stable hash of the parts."""
    return np.random.default_rng(stable_hash(*parts))


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
