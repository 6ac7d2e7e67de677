import logging

import numpy as np

from dataclasses import dataclass
from typing import AbstractSet, List, Optional, Union

from .linker import InteractionFeature
from .metrics import Clustering
from .substrate import ParameterStore, sigmoid

logger = logging.getLogger(__name__)

PROBABILITY_CLAMP = 1e-7


@dataclass(frozen=True, order=True)
class PairSample:
    """Utterance pair (i > j) labelled 1 when both belong to the same conversation."""

    index_i: int
    index_j: int
    label: int

    def __post_init__(self):
        if self.index_i <= self.index_j:
            raise ValueError(f"pair ({self.index_i}, {self.index_j}) must have i > j")
        if self.label not in (0, 1):
            raise ValueError(f"pair label must be 0 or 1, got {self.label}")


def pair_probability(feature: Union[InteractionFeature, np.ndarray],
                     params: ParameterStore,
                     feature_set: str = "full") -> float:
    """sigmoid(w_pairᵀ f_ij) over the same f_ij the pointer head scores."""

    vector = feature.vector(feature_set) if isinstance(feature, InteractionFeature) else np.asarray(feature)
    return float(sigmoid(vector @ params["w_pair"]))


def pair_loss(prob: float, label: int) -> float:
    """Binary cross entropy with the probability clamped away from 0 and 1."""

    p = float(np.clip(prob, PROBABILITY_CLAMP, 1. - PROBABILITY_CLAMP))
    return -(label * np.log(p) + (1 - label) * np.log(1. - p))


def pair_loss_logit_gradient(prob: np.ndarray, label: np.ndarray) -> np.ndarray:
    """d pair_loss / d (w_pairᵀ f); zero where the clamp is active."""

    inside = (prob > PROBABILITY_CLAMP) & (prob < 1. - PROBABILITY_CLAMP)
    return np.where(inside, prob - label, 0.)


def sample_pairs(clustering: Clustering,
                 window: int,
                 ratio: float = 1.,
                 rng: Optional[np.random.Generator] = None,
                 eligible: Optional[AbstractSet[int]] = None) -> List[PairSample]:
    """
        Every same-conversation pair with i - j <= window, plus cross-conversation pairs of the
        same window drawn uniformly without replacement, `ratio` of them per positive. `eligible`
        limits both members of a pair to a subset of the items.
    """

    if ratio <= 0.:
        raise ValueError(f"negative sampling ratio must be positive, got {ratio}")
    if window < 1:
        raise ValueError(f"window must be at least 1, got {window}")

    rng = np.random.default_rng(0) if rng is None else rng
    labels = clustering.labels()
    items = sorted(range(clustering.n) if eligible is None else eligible)
    allowed = set(items)

    positives, candidates = list(), list()
    for i in items:
        for j in range(max(0, i - window), i):
            if j not in allowed:
                continue
            if labels[i] == labels[j]:
                positives.append(PairSample(i, j, 1))
            else:
                candidates.append(PairSample(i, j, 0))

    n_negatives = min(int(round(ratio * len(positives))), len(candidates))
    if n_negatives == 0:
        logger.debug("No negative pairs sampled (%d positives, %d candidates)", len(positives), len(candidates))
        negatives = list()
    else:
        chosen = rng.choice(len(candidates), size=n_negatives, replace=False)
        negatives = [candidates[k] for k in sorted(chosen)]

    return sorted(positives + negatives)


def joint_loss(link_loss_sum: float, pair_loss_sum: float, lambda_pair: float) -> float:
    """L = L_link + λ L_pair."""

    if lambda_pair < 0.:
        raise ValueError(f"lambda must be non-negative, got {lambda_pair}")

    return link_loss_sum + lambda_pair * pair_loss_sum
