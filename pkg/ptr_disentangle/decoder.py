import logging

import numpy as np

from collections import deque
from dataclasses import dataclass, field
from typing import AbstractSet, Deque, Dict, List, Optional, Sequence, Tuple

from .corpus import ChatLog, CorpusIntegrityError, LinkAnnotation, Utterance, Vocabulary
from .encoder import EncodedUtterance, describe_utterance
from .linker import MentionMemory, PointingDistribution
from .metrics import Clustering
from .model import DisentanglementModel, update_pair_mentions
from .substrate import encode_sequences
from .unionfind import UnionFind

logger = logging.getLogger(__name__)


def _most_recent_argmax(probs: np.ndarray) -> int:
    """Position of the largest probability, ties resolved toward the end of the window."""
    return len(probs) - 1 - int(np.argmax(probs[::-1]))


def best_non_self(distribution: PointingDistribution) -> int:
    """The most probable earlier candidate, or the utterance itself when the window holds nothing else."""

    if len(distribution.probs) == 1:
        return distribution.child_index

    return distribution.candidate_indices[_most_recent_argmax(distribution.probs[:-1])]


def predict_parent(distribution: PointingDistribution, threshold: float = 0.) -> int:
    """
        Argmax of the pointing distribution, except that a self-link is only accepted when its
        probability reaches the threshold; otherwise the runner-up candidate is the parent.
    """

    if not (0. <= threshold <= 1.):
        raise ValueError(f"self-link threshold must lie in [0, 1], got {threshold}")

    position = _most_recent_argmax(distribution.probs)
    if position != len(distribution.probs) - 1:
        return distribution.candidate_indices[position]

    if distribution.self_prob >= threshold:
        return distribution.child_index

    return best_non_self(distribution)


@dataclass
class ThreadState:
    """Everything a stream session has committed so far. Owned by exactly one session."""

    vocabulary: Vocabulary
    window: int
    memory: MentionMemory
    components: UnionFind = field(default_factory=UnionFind)
    labels: Dict[int, int] = field(default_factory=dict)
    links: List[LinkAnnotation] = field(default_factory=list)
    buffer: Deque[EncodedUtterance] = field(default_factory=deque)
    next_index: int = 0
    n_threads: int = 0

    @classmethod
    def start(cls, model: DisentanglementModel) -> "ThreadState":
        vocabulary = model.vocabulary.fork()
        return cls(
            vocabulary=vocabulary,
            window=model.window,
            memory=MentionMemory(len(vocabulary)),
            buffer=deque(maxlen=model.window + 1)
        )

    def new_thread(self, index: int) -> int:

        self.components.add(index)
        self.labels[index] = self.n_threads
        self.n_threads += 1
        return self.labels[index]

    def encoded(self, index: int) -> EncodedUtterance:
        return self.buffer[index - self.buffer[0].index]


def _advance(state: ThreadState,
             encoded: EncodedUtterance,
             model: DisentanglementModel,
             threshold: float,
             predict: bool = True,
             gold_self_links: Optional[AbstractSet[int]] = None) -> Tuple[Optional[int], int]:

    if encoded.index != state.next_index:
        raise ValueError(f"expected utterance {state.next_index}, got {encoded.index}")

    state.buffer.append(encoded)
    state.next_index += 1

    if not predict:
        return None, state.new_thread(encoded.index)

    distribution = model.pointing(encoded, list(state.buffer), state.memory, state.vocabulary)

    if gold_self_links is None:
        parent = predict_parent(distribution, threshold)
    elif encoded.index in gold_self_links:
        parent = encoded.index
    else:
        parent = best_non_self(distribution)

    update_pair_mentions(state.memory, encoded, state.encoded(parent), state.vocabulary)
    state.links.append(LinkAnnotation(encoded.index, parent))

    if parent == encoded.index:
        label = state.new_thread(encoded.index)
    else:
        state.components.union(parent, encoded.index)
        label = state.labels[encoded.index] = state.labels[parent]

    return parent, label


def step(state: ThreadState,
         utterance: Utterance,
         model: DisentanglementModel,
         threshold: float = 0.,
         predict: bool = True,
         gold_self_links: Optional[AbstractSet[int]] = None) -> Tuple[Optional[int], int]:
    """
        Consumes the next utterance of a stream and commits its parent and thread label. With
        `predict` off the utterance only enters the window as context (no link, its own thread).
    """

    encoded = model.encode(utterance, state.vocabulary, allow_grow=True)
    return _advance(state, encoded, model, threshold, predict, gold_self_links)


def build_threads(links: Sequence[LinkAnnotation], n: int) -> Clustering:
    """Connected components of the undirected link graph over 0..n-1."""

    components = UnionFind(range(n))
    seen = set()
    for link in links:

        if not (0 <= link.parent <= link.child < n):
            raise CorpusIntegrityError(f"link {link.parent} -> {link.child} outside of 0..{n - 1}")

        seen.add(link.child)
        if not link.is_self_link:
            components.union(link.parent, link.child)

    missing = sorted(set(range(n)) - seen)
    if missing:
        raise CorpusIntegrityError(f"{len(missing)} utterances without a link, first {missing[:5]}")

    return Clustering.from_blocks(components.components())


def baseline_previous(utterances: Sequence[Utterance]) -> List[LinkAnnotation]:
    return [LinkAnnotation(utterance.index, max(utterance.index - 1, 0)) for utterance in utterances]


@dataclass
class DecodeResult:

    name: str
    links: List[LinkAnnotation]
    labels: Dict[int, int]
    first_predicted: int = 0


def _gold_self_links(log: ChatLog) -> AbstractSet[int]:
    return {link.child for link in log.annotations if link.is_self_link}


def decode_log(log: ChatLog,
               model: DisentanglementModel,
               threshold: float = 0.,
               online: bool = True,
               oracle_self_links: bool = False) -> DecodeResult:
    """
        Decodes a whole log. Utterances before the first annotated one are context only. The
        offline path encodes every message in one batch and commits the same links as `step`.
    """

    state = ThreadState.start(model)
    first = log.first_annotated if log.annotations else 0
    gold_self = _gold_self_links(log) if oracle_self_links else None

    if online:
        for utterance in log.utterances:
            step(state, utterance, model, threshold, utterance.index >= first, gold_self)
    else:
        described = [describe_utterance(utterance, state.vocabulary, allow_grow=True) for utterance in log.utterances]
        reprs, _ = encode_sequences([enc.token_ids for enc in described], model.params)
        for encoded, token_reprs in zip(described, reprs):
            encoded.token_reprs = token_reprs
            _advance(state, encoded, model, threshold, encoded.index >= first, gold_self)

    logger.debug("%s: %d links, %d threads", log.name, len(state.links), state.n_threads)
    return DecodeResult(log.name, state.links, state.labels, first)
