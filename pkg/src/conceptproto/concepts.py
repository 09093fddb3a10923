"""Concept masks: binary feature subsets that drive the concept learners.

Masks may overlap, repeat, or leave features uncovered; nothing here enforces
disjointness. File format (``concepts.txt``): one mask per line,
``name: idx idx idx`` with 0-based feature indices.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError

WHOLE_INPUT_NAME = "whole_input"


@dataclass
class ConceptMask:
    id: int
    name: str
    bits: np.ndarray  # {0,1}^D

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=int)
        if self.bits.ndim != 1:
            raise DimensionError("mask bits must be a vector")
        if not np.all((self.bits == 0) | (self.bits == 1)):
            raise DataError(f"mask '{self.name}' has non-binary entries")
        if self.bits.sum() == 0:
            raise DataError(f"mask '{self.name}' selects no features")

    @property
    def indices(self):
        return np.flatnonzero(self.bits)

    def is_whole_input(self):
        return bool(np.all(self.bits == 1))


@dataclass
class ConceptSet:
    masks: list
    n_features: int

    def __post_init__(self):
        if not self.masks:
            raise DataError("concept set is empty")
        for pos, mask in enumerate(self.masks):
            if mask.bits.shape[0] != self.n_features:
                raise DimensionError(
                    f"mask '{mask.name}' has length {mask.bits.shape[0]}, expected {self.n_features}"
                )
            mask.id = pos

    def __len__(self):
        return len(self.masks)

    def names(self):
        return [m.name for m in self.masks]

    def matrix(self):
        """(N, D) stacked bits."""
        return np.stack([m.bits for m in self.masks]).astype(float)

    def content_hash(self):
        """Stable digest over mask names and bits; stored in checkpoints."""
        h = hashlib.sha256()
        for mask in self.masks:
            h.update(mask.name.encode("utf-8"))
            h.update(b":")
            h.update(mask.bits.astype(np.uint8).tobytes())
            h.update(b";")
        return h.hexdigest()


def apply_mask(x, mask):
    """Hadamard product of x with the mask bits."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mask.bits.shape[0]:
        raise DimensionError(
            f"input length {x.shape[-1]} does not match mask length {mask.bits.shape[0]}"
        )
    return x * mask.bits


def with_whole_input(cs):
    """Append an all-ones mask unless one is already present. Idempotent."""
    if any(m.is_whole_input() for m in cs.masks):
        return cs
    whole = ConceptMask(
        id=len(cs.masks), name=WHOLE_INPUT_NAME, bits=np.ones(cs.n_features, dtype=int)
    )
    return ConceptSet(masks=list(cs.masks) + [whole], n_features=cs.n_features)


def random_masks(n_features, n_masks, bits_per_mask, rng):
    """n_masks random masks, each with exactly bits_per_mask bits set."""
    if not 1 <= bits_per_mask <= n_features:
        raise ConfigError(
            f"bits_per_mask must be in [1, {n_features}], got {bits_per_mask}"
        )
    if n_masks < 1:
        raise ConfigError("n_masks must be >= 1")
    masks = []
    for j in range(n_masks):
        idx = rng.choice(n_features, size=bits_per_mask, replace=False)
        bits = np.zeros(n_features, dtype=int)
        bits[idx] = 1
        masks.append(ConceptMask(id=j, name=f"random_{j}", bits=bits))
    return ConceptSet(masks=masks, n_features=n_features)


def select_top_masks(cs, scores, keep):
    """Keep the highest-scoring masks, original order preserved.

    Ties go to the lower original id.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.shape[0] != len(cs):
        raise DimensionError(f"expected {len(cs)} scores, got {scores.shape[0]}")
    if not 1 <= keep <= len(cs):
        raise ConfigError(f"keep must be in [1, {len(cs)}], got {keep}")
    order = sorted(range(len(cs)), key=lambda j: (-scores[j], j))
    chosen = sorted(order[:keep])
    masks = [
        ConceptMask(id=i, name=cs.masks[j].name, bits=cs.masks[j].bits.copy())
        for i, j in enumerate(chosen)
    ]
    return ConceptSet(masks=masks, n_features=cs.n_features)


def load_concepts(path, n_features):
    """Parse a concepts.txt file. Duplicate indices within a line are rejected."""
    masks = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise DataError(f"{path}:{lineno}: expected 'name: idx idx ...'")
            name, _, rest = line.partition(":")
            name = name.strip()
            try:
                idx = [int(tok) for tok in rest.split()]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer feature index") from None
            if not idx:
                raise DataError(f"{path}:{lineno}: mask '{name}' selects no features")
            if len(set(idx)) != len(idx):
                raise DataError(f"{path}:{lineno}: duplicate indices in mask '{name}'")
            if min(idx) < 0 or max(idx) >= n_features:
                raise DataError(
                    f"{path}:{lineno}: index out of range for {n_features} features"
                )
            bits = np.zeros(n_features, dtype=int)
            bits[idx] = 1
            masks.append(ConceptMask(id=len(masks), name=name, bits=bits))
    if not masks:
        raise DataError(f"{path}: no concept masks found")
    return ConceptSet(masks=masks, n_features=n_features)


def write_concepts(cs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for mask in cs.masks:
            idx = " ".join(str(i) for i in mask.indices)
            fh.write(f"{mask.name}: {idx}\n")


def load_ground_truth_concepts(path):
    """Parse ``class_name: concept_name concept_name ...`` lines."""
    truth = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise DataError(f"{path}:{lineno}: expected 'class: concept ...'")
            cls, _, rest = line.partition(":")
            names = rest.split()
            if not names:
                raise DataError(f"{path}:{lineno}: class '{cls.strip()}' has no concepts")
            truth[cls.strip()] = names
    if not truth:
        raise DataError(f"{path}: no ground-truth entries")
    return truth


def write_ground_truth_concepts(truth, path):
    with open(path, "w", encoding="utf-8") as fh:
        for cls in truth:
            fh.write(f"{cls}: {' '.join(truth[cls])}\n")
