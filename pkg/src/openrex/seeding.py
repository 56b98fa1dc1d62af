"""Hash-addressed deterministic random streams.

Every random decision in the pipeline draws from a stream addressed by a
path such as ``("discovery", instance_id, attempt)``. Child streams are
statistically independent and do not depend on the order in which they are
created, so concurrent stages reproduce bit-identical results regardless of
request completion order.
"""

from __future__ import annotations

import hashlib
import random


def _digest(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


class SeedStream:
    """A node in a tree of deterministic random streams."""

    __slots__ = ("seed", "path")

    def __init__(self, seed: int, path: str = ""):
        self.seed = int(seed)
        self.path = path

    def child(self, *parts: object) -> "SeedStream":
        suffix = "/".join(str(p) for p in parts)
        path = f"{self.path}/{suffix}" if self.path else suffix
        return SeedStream(self.seed, path)

    def rng(self) -> random.Random:
        """A fresh ``random.Random`` seeded from this node's address."""
        return random.Random(_digest(f"{self.seed}|{self.path}"))

    def __repr__(self) -> str:  # pragma: no cover
        return f"SeedStream(seed={self.seed}, path={self.path!r})"


def derive_rng(seed: int, *parts: object) -> random.Random:
    """Shorthand for ``SeedStream(seed).child(*parts).rng()``."""
    return SeedStream(seed).child(*parts).rng()
