"""Concept importance scoring and concept-based example ranking.

Importance is negated distance between a concept embedding and the class's
concept prototype: smaller distance means the concept describes the point
(or class) better, so negation puts nearest-first at the top of the ranking.
A reciprocal transform 1/(1+d) is available for report readability; both
induce identical rankings.
"""

from dataclasses import dataclass

import numpy as np

from .concepts import apply_mask
from .errors import ConfigError, DimensionError
from .nncore import Mode, distance, mlp_forward
from .model import embed_concepts


@dataclass
class LocalImportance:
    query_index: int
    class_id: int
    scores: np.ndarray  # (N,)
    distances: np.ndarray  # (N,) raw distances behind the scores
    ranking: np.ndarray  # concept ids, best first


@dataclass
class GlobalImportance:
    class_id: int
    scores: np.ndarray
    distances: np.ndarray
    ranking: np.ndarray


def _rank(scores):
    """Concept ids sorted by descending score, ties to the lower id."""
    n = scores.shape[0]
    return np.array(sorted(range(n), key=lambda j: (-scores[j], j)), dtype=int)


def invert_distance(d, reciprocal=False):
    return 1.0 / (1.0 + d) if reciprocal else -d


def _class_position(bank, class_id):
    if class_id not in bank.classes:
        raise IndexError(f"class {class_id} not present in the prototype bank")
    return bank.classes.index(class_id)


def _concept_distances(model, bank, queries, class_id):
    """(n_queries, N) distances from each query's concept embeddings to the
    class's concept prototypes."""
    pos = _class_position(bank, class_id)
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    emb, _ = embed_concepts(model, queries, Mode.EVAL)
    out = np.empty((queries.shape[0], model.n_concepts))
    for j in range(model.n_concepts):
        for i in range(queries.shape[0]):
            out[i, j] = distance(model.distance, emb[j, i], bank.protos[pos, j])
    return out


def local_importance(model, bank, x_q, class_id, query_index=-1, reciprocal=False):
    """Per-concept importance of one query point for one class."""
    dists = _concept_distances(model, bank, x_q, class_id)[0]
    scores = invert_distance(dists, reciprocal)
    return LocalImportance(
        query_index=query_index,
        class_id=class_id,
        scores=scores,
        distances=dists,
        ranking=_rank(scores),
    )


def global_importance(model, bank, queries, class_id, reciprocal=False):
    """Concept importance for a class, averaged over its query points."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if queries.shape[0] == 0:
        raise ConfigError("global importance needs at least one query point")
    dists = _concept_distances(model, bank, queries, class_id).mean(axis=0)
    scores = invert_distance(dists, reciprocal)
    return GlobalImportance(
        class_id=class_id, scores=scores, distances=dists, ranking=_rank(scores)
    )


def rank_examples_by_concept(model, proto, examples, concept_id, farthest=False):
    """Order examples by distance of their concept embedding to ``proto``.

    Returns a list of (example position, distance), nearest first; pass
    farthest=True for the reverse (least prototypical) ordering.
    """
    examples = np.atleast_2d(np.asarray(examples, dtype=float))
    if examples.shape[0] == 0:
        raise ConfigError("rank_examples_by_concept needs at least one example")
    proto = np.asarray(proto, dtype=float)
    if proto.shape[0] != model.embed_dim:
        raise DimensionError(
            f"prototype length {proto.shape[0]} does not match embed dim {model.embed_dim}"
        )
    mask = model.concept_set.masks[concept_id]
    emb, _ = mlp_forward(model.net_for(concept_id), apply_mask(examples, mask), Mode.EVAL)
    dists = [distance(model.distance, emb[i], proto) for i in range(examples.shape[0])]
    order = sorted(range(len(dists)), key=lambda i: (dists[i], i))
    if farthest:
        order = order[::-1]
    return [(i, dists[i]) for i in order]


def recall_at_k(gi, truth, k=20):
    """Fraction of ground-truth concept ids retrieved in the top-k ranking."""
    if not truth:
        raise ConfigError("ground-truth concept set is empty")
    if not 1 <= k <= gi.ranking.shape[0]:
        raise ConfigError(f"k must be in [1, {gi.ranking.shape[0]}], got {k}")
    top = set(int(j) for j in gi.ranking[:k])
    return len(top & set(truth)) / len(truth)
