"""Concept-learner prototypical model.

Each concept j owns an embedding of the concept-masked input; a class is
represented by one prototype per concept (the mean support embedding), and
query scores sum distances across concepts before a softmax. A single
all-ones concept recovers the plain prototypical network exactly, which the
tests exploit as an equivalence oracle.
"""

import copy
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import nncore
from .concepts import ConceptMask, ConceptSet, apply_mask
from .episodes import sample_episode
from .errors import ConfigError, DataError, DimensionError, NumericError
from .nncore import (
    AdamState,
    DistanceKind,
    Mode,
    adam_step,
    commit_running_stats,
    init_mlp,
    mlp_backward,
    mlp_forward,
    pairwise_distance,
    softmax_rows,
)
from .rngs import child_rng

CHECKPOINT_VERSION = 1


class WeightMode(str, Enum):
    SHARED = "shared"
    PER_CONCEPT = "per_concept"


@dataclass
class ConceptModel:
    concept_set: ConceptSet
    weight_mode: WeightMode
    nets: list  # one MlpParams when SHARED, else one per concept
    distance: DistanceKind = DistanceKind.SQ_EUCLIDEAN

    def __post_init__(self):
        expected = 1 if self.weight_mode is WeightMode.SHARED else len(self.concept_set)
        if len(self.nets) != expected:
            raise ConfigError(
                f"{self.weight_mode.value} mode expects {expected} nets, got {len(self.nets)}"
            )

    @property
    def n_concepts(self):
        return len(self.concept_set)

    @property
    def embed_dim(self):
        return self.nets[0].embed_dim

    def net_for(self, j):
        return self.nets[0] if self.weight_mode is WeightMode.SHARED else self.nets[j]

    def copy(self):
        return ConceptModel(
            concept_set=self.concept_set,
            weight_mode=self.weight_mode,
            nets=[p.copy() for p in self.nets],
            distance=self.distance,
        )


@dataclass
class PrototypeBank:
    protos: np.ndarray  # (way, N, M)
    classes: list  # dataset class ids, aligned with axis 0


@dataclass
class TrainConfig:
    episodes: int = 1000
    lr: float = 1e-3
    weight_decay: float = 0.0
    eval_episodes: int = 600
    seed: int = 0
    val_every: int = 50
    val_episodes: int = 100
    log_every: int = 10

    def validate(self):
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        for name in ("eval_episodes", "val_every", "val_episodes", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        return self


@dataclass
class EvalResult:
    mean_accuracy: float
    ci95_halfwidth: float
    per_episode_accuracy: np.ndarray


def build_model(
    concept_set,
    hidden_dim=64,
    embed_dim=64,
    weight_mode=WeightMode.PER_CONCEPT,
    distance=DistanceKind.SQ_EUCLIDEAN,
    dropout_rate=0.2,
    seed=0,
):
    """Construct a fresh model with independently seeded nets."""
    n_nets = 1 if weight_mode is WeightMode.SHARED else len(concept_set)
    nets = [
        init_mlp(
            concept_set.n_features,
            hidden_dim,
            embed_dim,
            child_rng(seed, "init", j),
            dropout_rate=dropout_rate,
        )
        for j in range(n_nets)
    ]
    return ConceptModel(
        concept_set=concept_set, weight_mode=weight_mode, nets=nets, distance=distance
    )


def protonet(
    n_features,
    hidden_dim=64,
    embed_dim=64,
    distance=DistanceKind.SQ_EUCLIDEAN,
    dropout_rate=0.2,
    seed=0,
):
    """Plain prototypical network: the single whole-input-concept special case."""
    mask = ConceptMask(id=0, name="whole_input", bits=np.ones(n_features, dtype=int))
    cs = ConceptSet(masks=[mask], n_features=n_features)
    return build_model(
        cs,
        hidden_dim=hidden_dim,
        embed_dim=embed_dim,
        weight_mode=WeightMode.SHARED,
        distance=distance,
        dropout_rate=dropout_rate,
        seed=seed,
    )


def embed_concepts(model, x, mode, rng=None, commit_stats=False):
    """Embed a batch under every concept; returns (embeddings (N, n, M), caches)."""
    x = np.asarray(x, dtype=float)
    out = np.empty((model.n_concepts, x.shape[0], model.embed_dim))
    caches = []
    for j, mask in enumerate(model.concept_set.masks):
        emb, cache = mlp_forward(model.net_for(j), apply_mask(x, mask), mode, rng=rng)
        if commit_stats:
            commit_running_stats(model.net_for(j), cache)
        out[j] = emb
        caches.append(cache)
    return out, caches


def substitute_missing_concept(embeddings, concept_set, visibility):
    """Replace invisible concept embeddings by the whole-input embedding.

    ``embeddings`` has shape (N, n, M); ``visibility`` is an (n, N) binary
    matrix, or None to treat everything as visible.
    """
    if visibility is None:
        return embeddings
    visibility = np.asarray(visibility)
    n_concepts, n, _ = embeddings.shape
    if visibility.shape != (n, n_concepts):
        raise DimensionError(
            f"visibility shape {visibility.shape} does not match ({n}, {n_concepts})"
        )
    whole = [j for j, m in enumerate(concept_set.masks) if m.is_whole_input()]
    if not whole:
        raise ConfigError("visibility matrix requires a whole-input concept in the set")
    w = whole[0]
    adjusted = embeddings.copy()
    rows, cols = np.nonzero(visibility == 0)
    adjusted[cols, rows] = embeddings[w, rows]
    return adjusted


def compute_prototypes(model, ds, episode, mode=Mode.EVAL, rng=None, visibility=None):
    """Mean concept embedding of each class's support set, per concept."""
    way = len(episode.classes)
    shot = episode.support[0].shape[0]
    for pos, idx in enumerate(episode.support):
        if idx.shape[0] == 0:
            raise DataError(f"empty support set for class position {pos}")
    support_idx = np.concatenate(episode.support)
    emb, _ = embed_concepts(model, ds.x[support_idx], mode, rng=rng)
    if visibility is not None:
        emb = substitute_missing_concept(emb, model.concept_set, visibility)
    protos = emb.reshape(model.n_concepts, way, shot, model.embed_dim).mean(axis=2)
    return PrototypeBank(protos=protos.transpose(1, 0, 2), classes=list(episode.classes))


def _summed_distances(model, bank, query_emb):
    """(nq, way) distances summed over concepts; query_emb is (N, nq, M)."""
    nq = query_emb.shape[1]
    way = bank.protos.shape[0]
    total = np.zeros((nq, way))
    for j in range(model.n_concepts):
        total += pairwise_distance(model.distance, query_emb[j], bank.protos[:, j, :])
    return total


def class_neg_scores(model, bank, x_q, mode=Mode.EVAL, rng=None, visibility=None):
    """Per-class negated summed distance for one query point."""
    x_q = np.asarray(x_q, dtype=float)
    emb, _ = embed_concepts(model, x_q[None, :], mode, rng=rng)
    if visibility is not None:
        emb = substitute_missing_concept(emb, model.concept_set, visibility)
    return -_summed_distances(model, bank, emb)[0]


def predict_proba(model, bank, x_q, mode=Mode.EVAL, rng=None, visibility=None):
    """Softmax class distribution for one query point."""
    scores = class_neg_scores(model, bank, x_q, mode=mode, rng=rng, visibility=visibility)
    return softmax_rows(scores[None, :])[0]


def predict(model, bank, x_q, mode=Mode.EVAL):
    """Argmax class position, lowest position on exact ties."""
    return int(np.argmax(predict_proba(model, bank, x_q, mode=mode)))


def _episode_batches(model, ds, episode, mode, rng, commit_stats=False):
    """Joint forward over support + query rows of an episode.

    Returns (support_emb (N, way, shot, M), query_emb (N, nq, M), caches).
    Support and query share one batch per concept so TRAIN-mode batch
    statistics are consistent across the episode.
    """
    way = len(episode.classes)
    shot = episode.support[0].shape[0]
    support_idx = np.concatenate(episode.support)
    all_idx = np.concatenate([support_idx, episode.query_indices])
    emb, caches = embed_concepts(model, ds.x[all_idx], mode, rng=rng, commit_stats=commit_stats)
    n_support = support_idx.shape[0]
    support_emb = emb[:, :n_support].reshape(model.n_concepts, way, shot, model.embed_dim)
    query_emb = emb[:, n_support:]
    return support_emb, query_emb, caches


def episode_loss(model, ds, episode, mode=Mode.EVAL, rng=None):
    """Mean query NLL and accuracy for one episode."""
    support_emb, query_emb, _ = _episode_batches(model, ds, episode, mode, rng)
    protos = support_emb.mean(axis=2)  # (N, way, M)
    bank = PrototypeBank(protos=protos.transpose(1, 0, 2), classes=list(episode.classes))
    dist = _summed_distances(model, bank, query_emb)
    probs = softmax_rows(-dist)
    labels = episode.query_labels
    nq = labels.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(nq), labels] + 1e-300)))
    acc = float(np.mean(np.argmax(probs, axis=1) == labels))
    return loss, acc


def _distance_grads(kind, q, p, w):
    """Gradients of sum_{n,k} w[n,k] * d(q_n, p_k) wrt q and p."""
    if kind is DistanceKind.SQ_EUCLIDEAN:
        diff = q[:, None, :] - p[None, :, :]  # (nq, way, M)
        weighted = w[:, :, None] * diff
        return 2.0 * weighted.sum(axis=1), -2.0 * weighted.sum(axis=0)
    # Cosine: d = 1 - (q.p)/(|q||p|); zero-norm rows contribute constant 1.
    uq = np.linalg.norm(q, axis=1)
    up = np.linalg.norm(p, axis=1)
    safe_q = np.where(uq > 0, uq, 1.0)
    safe_p = np.where(up > 0, up, 1.0)
    inv = 1.0 / (safe_q[:, None] * safe_p[None, :])
    inv[uq == 0, :] = 0.0
    inv[:, up == 0] = 0.0
    dots = q @ p.T
    wi = w * inv
    wci = w * dots * inv
    dq = -(wi @ p) + (wci.sum(axis=1) / np.where(uq > 0, uq**2, 1.0))[:, None] * q
    dp = -(wi.T @ q) + (wci.sum(axis=0) / np.where(up > 0, up**2, 1.0))[:, None] * p
    return dq, dp


def episode_grads(model, ds, episode, mode, rng=None, commit_stats=False):
    """Loss, accuracy, and analytic parameter gradients for one episode.

    Gradients flow through both query embeddings and the support means that
    form the prototypes. Returns one ParamGrads per entry of model.nets
    (shared mode accumulates across concepts).
    """
    support_emb, query_emb, caches = _episode_batches(
        model, ds, episode, mode, rng, commit_stats=commit_stats
    )
    way = len(episode.classes)
    shot = support_emb.shape[2]
    labels = episode.query_labels
    nq = labels.shape[0]

    protos = support_emb.mean(axis=2)  # (N, way, M)
    dist = np.zeros((nq, way))
    per_concept_dist = []
    for j in range(model.n_concepts):
        dj = pairwise_distance(model.distance, query_emb[j], protos[j])
        per_concept_dist.append(dj)
        dist += dj
    probs = softmax_rows(-dist)
    loss = float(-np.mean(np.log(probs[np.arange(nq), labels] + 1e-300)))
    acc = float(np.mean(np.argmax(probs, axis=1) == labels))

    # d(mean NLL)/d(neg score) = (probs - onehot)/nq; scores are -dist.
    dscore = probs.copy()
    dscore[np.arange(nq), labels] -= 1.0
    dscore /= nq
    ddist = -dscore

    grads = [None] * len(model.nets)
    for j in range(model.n_concepts):
        dq, dp = _distance_grads(model.distance, query_emb[j], protos[j], ddist)
        dsupport = np.repeat(dp / shot, shot, axis=0)  # mean backprop into each shot
        grad_out = np.concatenate([dsupport, dq], axis=0)
        g = mlp_backward(caches[j], grad_out)
        slot = 0 if model.weight_mode is WeightMode.SHARED else j
        if grads[slot] is None:
            grads[slot] = g
        else:
            grads[slot].add_(g)
    return loss, acc, grads


def evaluate(model, ds, spec, episodes, seed):
    """Mean accuracy and 95% CI over independently sampled EVAL-mode episodes."""
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    accs = np.empty(episodes)
    for i in range(episodes):
        episode = sample_episode(ds, spec, child_rng(seed, "eval-episode", i))
        _, acc = episode_loss(model, ds, episode, mode=Mode.EVAL)
        accs[i] = acc
    mean = float(accs.mean())
    ci = 0.0 if episodes == 1 else float(1.96 * accs.std(ddof=1) / np.sqrt(episodes))
    return EvalResult(mean_accuracy=mean, ci95_halfwidth=ci, per_episode_accuracy=accs)


def _validation_accuracy(model, val_ds, spec, n_episodes, seed, tag):
    accs = []
    for i in range(n_episodes):
        episode = sample_episode(val_ds, spec, child_rng(seed, "val-episode", tag, i))
        _, acc = episode_loss(model, val_ds, episode, mode=Mode.EVAL)
        accs.append(acc)
    return float(np.mean(accs))


def train(model, train_ds, val_ds, spec, cfg):
    """Episodic training with Adam and best-validation model selection.

    Returns (trained model, log) where log is a list of dict records. The
    returned model carries the parameters of the best validation snapshot
    (ties go to the later snapshot).
    """
    cfg.validate()
    spec.validate()
    log = []
    if cfg.episodes == 0:
        return model, log

    states = [
        AdamState.for_params(p, lr=cfg.lr, weight_decay=cfg.weight_decay) for p in model.nets
    ]
    best_acc = -1.0
    best_nets = None
    loss_history = []

    for ep in range(1, cfg.episodes + 1):
        episode = sample_episode(train_ds, spec, child_rng(cfg.seed, "train-episode", ep))
        rng_drop = child_rng(cfg.seed, "dropout", ep)
        loss, acc, grads = episode_grads(
            model, train_ds, episode, Mode.TRAIN, rng=rng_drop, commit_stats=True
        )
        loss_history.append(loss)
        if not np.isfinite(loss):
            raise NumericError(
                f"non-finite loss at episode {ep}; recent losses: {loss_history[-5:]}"
            )
        for params, g, st in zip(model.nets, grads, states):
            adam_step(params, g, st)

        record = {"episode": ep, "train_loss": loss, "train_acc": acc}
        run_val = ep % cfg.val_every == 0 or ep == cfg.episodes
        if run_val:
            val_acc = _validation_accuracy(
                model, val_ds, spec, cfg.val_episodes, cfg.seed, ep
            )
            record["val_acc"] = val_acc
            if val_acc >= best_acc:
                best_acc = val_acc
                best_nets = [p.copy() for p in model.nets]
        if ep % cfg.log_every == 0 or ep == cfg.episodes or run_val:
            log.append(record)

    if best_nets is not None:
        model.nets = best_nets
    return model, log


def ensemble_predict(models, banks, x_q, mode=Mode.EVAL):
    """Majority vote over per-model argmax predictions.

    Ties are broken by the highest summed probability over the tied classes,
    then by the lowest class position.
    """
    if not models:
        raise ConfigError("ensemble needs at least one model")
    if len(models) != len(banks):
        raise ConfigError("one prototype bank per model required")
    way = banks[0].protos.shape[0]
    votes = np.zeros(way, dtype=int)
    prob_sum = np.zeros(way)
    for model, bank in zip(models, banks):
        probs = predict_proba(model, bank, x_q, mode=mode)
        votes[int(np.argmax(probs))] += 1
        prob_sum += probs
    top = votes.max()
    tied = np.flatnonzero(votes == top)
    if tied.shape[0] == 1:
        return int(tied[0])
    best = tied[np.argmax(prob_sum[tied])]
    # np.argmax already picks the first (lowest position) among equal sums.
    return int(best)


def _params_to_json(p):
    return {
        "w1": p.w1.tolist(),
        "b1": p.b1.tolist(),
        "bn_gamma": p.bn_gamma.tolist(),
        "bn_beta": p.bn_beta.tolist(),
        "bn_running_mean": p.bn_running_mean.tolist(),
        "bn_running_var": p.bn_running_var.tolist(),
        "w2": p.w2.tolist(),
        "b2": p.b2.tolist(),
        "dropout_rate": p.dropout_rate,
    }


def _params_from_json(raw):
    return nncore.MlpParams(
        w1=np.asarray(raw["w1"], dtype=float),
        b1=np.asarray(raw["b1"], dtype=float),
        bn_gamma=np.asarray(raw["bn_gamma"], dtype=float),
        bn_beta=np.asarray(raw["bn_beta"], dtype=float),
        bn_running_mean=np.asarray(raw["bn_running_mean"], dtype=float),
        bn_running_var=np.asarray(raw["bn_running_var"], dtype=float),
        w2=np.asarray(raw["w2"], dtype=float),
        b2=np.asarray(raw["b2"], dtype=float),
        dropout_rate=float(raw["dropout_rate"]),
    )


def save_checkpoint(model, path):
    """Write a self-describing JSON checkpoint, concept masks included."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "weight_mode": model.weight_mode.value,
        "distance": model.distance.value,
        "input_dim": model.concept_set.n_features,
        "hidden_dim": model.nets[0].hidden_dim,
        "embed_dim": model.embed_dim,
        "concept_hash": model.concept_set.content_hash(),
        "concepts": [
            {"name": m.name, "indices": m.indices.tolist()} for m in model.concept_set.masks
        ],
        "nets": [_params_to_json(p) for p in model.nets],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Load a checkpoint written by save_checkpoint."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if raw.get("version") != CHECKPOINT_VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint version {raw.get('version')!r}"
        )
    d = int(raw["input_dim"])
    masks = []
    for j, item in enumerate(raw["concepts"]):
        bits = np.zeros(d, dtype=int)
        bits[np.asarray(item["indices"], dtype=int)] = 1
        masks.append(ConceptMask(id=j, name=item["name"], bits=bits))
    cs = ConceptSet(masks=masks, n_features=d)
    if cs.content_hash() != raw["concept_hash"]:
        raise DataError(f"{path}: concept hash does not match stored masks")
    model = ConceptModel(
        concept_set=cs,
        weight_mode=WeightMode(raw["weight_mode"]),
        nets=[_params_from_json(p) for p in raw["nets"]],
        distance=DistanceKind(raw["distance"]),
    )
    return model
