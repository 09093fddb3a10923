"""N-way k-shot episode sampling over a dataset split."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class EpisodeSpec:
    way: int = 5
    shot: int = 5
    query_per_class: int = 16

    def validate(self):
        if self.way < 2:
            raise ConfigError("way must be >= 2")
        if self.shot < 1:
            raise ConfigError("shot must be >= 1")
        if self.query_per_class < 1:
            raise ConfigError("query_per_class must be >= 1")
        return self


@dataclass
class Episode:
    classes: list  # way dataset class ids
    support: list  # per class position: array of shot example indices
    query_indices: np.ndarray  # (way * query_per_class,) example indices
    query_labels: np.ndarray  # class positions 0..way-1, aligned with query_indices


def sample_episode(ds, spec, rng):
    """Sample one episode: classes first, then examples within each class.

    Classes with fewer than shot + query_per_class examples are excluded;
    sampling fails if fewer than ``way`` classes qualify.
    """
    spec.validate()
    need = spec.shot + spec.query_per_class
    by_class = ds.indices_by_class()
    qualifying = [k for k, idx in enumerate(by_class) if idx.shape[0] >= need]
    if len(qualifying) < spec.way:
        raise DataError(
            f"need {spec.way} classes with >= {need} examples, only {len(qualifying)} qualify"
        )
    chosen = rng.choice(len(qualifying), size=spec.way, replace=False)
    classes = [qualifying[int(c)] for c in chosen]

    support = []
    query_indices = []
    query_labels = []
    for pos, k in enumerate(classes):
        picked = rng.choice(by_class[k], size=need, replace=False)
        support.append(picked[: spec.shot])
        query_indices.append(picked[spec.shot :])
        query_labels.append(np.full(spec.query_per_class, pos, dtype=int))
    return Episode(
        classes=classes,
        support=support,
        query_indices=np.concatenate(query_indices),
        query_labels=np.concatenate(query_labels),
    )
