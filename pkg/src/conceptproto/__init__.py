"""Concept-based prototypical networks for few-shot tabular classification."""

from .concepts import ConceptMask, ConceptSet, apply_mask, random_masks, with_whole_input
from .data import Dataset, SplitSpec, SyntheticSpec, load_dataset, make_synthetic, split_dataset
from .episodes import Episode, EpisodeSpec, sample_episode
from .interpret import (
    GlobalImportance,
    LocalImportance,
    global_importance,
    local_importance,
    rank_examples_by_concept,
    recall_at_k,
)
from .model import (
    ConceptModel,
    EvalResult,
    PrototypeBank,
    TrainConfig,
    WeightMode,
    build_model,
    compute_prototypes,
    ensemble_predict,
    episode_loss,
    evaluate,
    predict_proba,
    protonet,
    train,
)
from .nncore import DistanceKind, Mode

__version__ = "0.1.0"
