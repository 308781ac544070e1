from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import InvalidConfigurationError
from .seeding import SeedSpec


class FoldAssignment(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    n: int = Field(..., ge=2, description="Number of observations")
    K: int = Field(..., ge=2, description="Number of folds")
    fold_of: np.ndarray = Field(..., description="Fold label in 1..K for each observation")

    @field_validator("fold_of", mode="before")
    @classmethod
    def _labels(cls, value):
        labels = np.array(value, dtype=np.int64, copy=True)
        labels.setflags(write=False)
        return labels

    @model_validator(mode="after")
    def _balanced(self):
        if self.fold_of.shape != (self.n,):
            raise ValueError(f"fold_of must have length {self.n}")
        if self.fold_of.min() < 1 or self.fold_of.max() > self.K:
            raise ValueError(f"fold labels must lie in 1..{self.K}")
        sizes = self.sizes
        if sizes.min() < 1 or sizes.max() - sizes.min() > 1:
            raise ValueError(f"fold sizes {sizes.tolist()} are not balanced")
        return self

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.K + 1)[1:]

    def members(self, k: int) -> np.ndarray:
        """0-based row indices of fold k (1-based label)"""
        return np.flatnonzero(self.fold_of == k)

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)

    def blocks(self) -> List[np.ndarray]:
        return [self.members(k) for k in range(1, self.K + 1)]


def assign_folds(n: int, K: int, seed: SeedSpec, tag: str = "folds") -> FoldAssignment:
    """Uniformly random balanced partition of n rows into K folds"""
    if K < 2 or K > n:
        raise InvalidConfigurationError(f"fold count K={K} must satisfy 2 <= K <= n={n}")
    rng = seed.rng(tag)
    labels = rng.permutation(np.arange(n) % K) + 1
    return FoldAssignment.model_construct(n=n, K=K, fold_of=_readonly(labels))


def _readonly(labels: np.ndarray) -> np.ndarray:
    labels = labels.astype(np.int64, copy=False)
    labels.setflags(write=False)
    return labels
