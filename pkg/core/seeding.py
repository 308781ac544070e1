"""
Deterministic random stream derivation.

Every random draw in the library comes from a stream identified by
(master seed, replicate index, repetition index, purpose tag). Streams are
built from scratch on each request, so the draws seen by a unit of work do
not depend on which worker runs it or in what order.
"""

import hashlib
from functools import lru_cache

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

MAX_SEED = 2 ** 64 - 1


@lru_cache(maxsize=256)
def tag_code(tag: str) -> int:
    """Stable 64-bit integer for a purpose tag"""
    digest = hashlib.md5(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], byteorder="little")


class SeedSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    master_seed: int = Field(..., ge=0, le=MAX_SEED, description="64-bit master seed")
    replicate: int = Field(default=0, ge=0, description="Monte Carlo replicate index")
    repetition: int = Field(default=0, ge=0, description="Repetition index inside a replicate")

    def for_replicate(self, replicate: int) -> "SeedSpec":
        return self.model_copy(update={"replicate": replicate, "repetition": 0})

    def for_repetition(self, repetition: int) -> "SeedSpec":
        return self.model_copy(update={"repetition": repetition})

    def seed_sequence(self, tag: str) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=self.master_seed,
            spawn_key=(self.replicate, self.repetition, tag_code(tag)),
        )

    def rng(self, tag: str) -> np.random.Generator:
        """Fresh generator for this (replicate, repetition, tag) triple"""
        return np.random.Generator(np.random.Philox(self.seed_sequence(tag)))
