"""Named RNG substreams derived from a single root seed.

Every source of randomness in the toolkit (parameter init, epoch
shuffling, attack random starts, evaluation attacks) draws from a
generator obtained here, keyed by the root seed plus a tuple of string /
int tags. Two runs with the same root seed and the same tags see
identical streams, which is what makes the bitwise-reproducibility
guarantees possible.
"""

from __future__ import annotations

import hashlib

import torch

__all__ = ["derive_seed", "make_generator"]


def derive_seed(root_seed: int, *tags) -> int:
    """Map (root seed, tag tuple) to a stable 63-bit seed."""
    key = repr((int(root_seed),) + tuple(tags)).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def make_generator(root_seed: int, *tags) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(derive_seed(root_seed, *tags))
    return gen
